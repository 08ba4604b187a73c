#include "dad/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dad {

std::string family_code(AttackFamily f) {
    switch (f) {
        case AttackFamily::Untargeted: return "u";
        case AttackFamily::Targeted: return "t";
        case AttackFamily::UntargetedExposed: return "ue";
        case AttackFamily::TargetedExposed: return "te";
    }
    throw std::logic_error("family_code: bad enum");
}

AttackFamily family_from_code(const std::string& code) {
    if (code == "u") return AttackFamily::Untargeted;
    if (code == "t") return AttackFamily::Targeted;
    if (code == "ue") return AttackFamily::UntargetedExposed;
    if (code == "te") return AttackFamily::TargetedExposed;
    throw std::invalid_argument("unknown attack family '" + code + "' (expected u|t|ue|te)");
}

bool family_is_targeted(AttackFamily f) {
    return f == AttackFamily::Targeted || f == AttackFamily::TargetedExposed;
}

bool family_is_exposed(AttackFamily f) {
    return f == AttackFamily::UntargetedExposed || f == AttackFamily::TargetedExposed;
}

std::string target_rule_name(TargetRule r) {
    return r == TargetRule::AddOnePerPixel ? "add_one_per_pixel" : "add_one_total";
}

TargetRule target_rule_from_name(const std::string& name) {
    if (name == "add_one_per_pixel") return TargetRule::AddOnePerPixel;
    if (name == "add_one_total") return TargetRule::AddOneTotal;
    throw std::invalid_argument("unknown target rule: " + name);
}

void AttackConfig::validate() const {
    if (eps < 0.0) throw std::invalid_argument("AttackConfig: eps must be >= 0");
    if (steps < 1) throw std::invalid_argument("AttackConfig: steps must be >= 1");
    if (steps > 1 && !(alpha > 0.0))
        throw std::invalid_argument("AttackConfig: alpha must be > 0 for multi-step attacks");
    if (lambda_att < 0.0) throw std::invalid_argument("AttackConfig: lambda_att must be >= 0");
}

json AttackConfig::to_json() const {
    return json{{"family", family_code(family)},
                {"eps", eps},
                {"alpha", alpha},
                {"steps", steps},
                {"lambda_att", lambda_att},
                {"target_rule", target_rule_name(target_rule)}};
}

AttackConfig AttackConfig::from_json(const json& j) {
    AttackConfig c;
    c.family = family_from_code(j.at("family").get<std::string>());
    c.eps = j.at("eps").get<double>();
    c.alpha = j.at("alpha").get<double>();
    c.steps = j.at("steps").get<int>();
    c.lambda_att = j.value("lambda_att", 0.01);
    c.target_rule = target_rule_from_name(j.value("target_rule", "add_one_per_pixel"));
    c.validate();
    return c;
}

int schedule_steps(double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("schedule_steps: eps must be > 0");
    const long a = std::lround(std::floor(eps + 4.0 + 0.5));
    const long b = std::lround(std::floor(1.25 * eps + 0.5));
    return static_cast<int>(std::max(1L, std::min(a, b)));
}

Grid build_target(const Grid& density_clean, TargetRule rule) {
    Grid t = density_clean;
    const double bump =
        rule == TargetRule::AddOnePerPixel ? 1.0 : 1.0 / static_cast<double>(t.size());
    for (double& v : t.v) v += bump;
    return t;
}

namespace {

inline double sign_or_zero(double g) { return g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0); }

} // namespace

AdversarialResult run_attack(const ModelParams& params, const Tensor& image,
                             const AttackConfig& cfg, const Mask* tamper_mask,
                             const Grid* density_ref_override, const Grid* depth_ref_override) {
    cfg.validate();
    if (tamper_mask) {
        if (tamper_mask->h != image.h || tamper_mask->w != image.w)
            throw std::invalid_argument("run_attack: tamper mask shape mismatch");
        if (!tamper_mask->any()) throw std::invalid_argument("run_attack: empty tamper mask");
    }

    // Attack references are the model's clean predictions, never ground truth.
    // Default references pass through float32, the precision predictions have
    // everywhere else in the pipeline. This also breaks the exact fixpoint of
    // the self-referential untargeted loss: with bit-identical references the
    // first-step gradient of 0.5*|F(I) - F(I)|^2 is exactly zero and the
    // attack could never move.
    const auto round_f32 = [](Grid& g) {
        for (double& v : g.v) v = static_cast<double>(static_cast<float>(v));
    };
    Grid density_ref, depth_ref;
    const bool exposed = family_is_exposed(cfg.family) && cfg.lambda_att != 0.0;
    if (!density_ref_override || (exposed && !depth_ref_override)) {
        Prediction clean = forward(params, image);
        if (density_ref_override) {
            density_ref = *density_ref_override;
        } else {
            density_ref = std::move(clean.density);
            round_f32(density_ref);
        }
        if (exposed) {
            if (depth_ref_override) {
                depth_ref = *depth_ref_override;
            } else {
                depth_ref = std::move(clean.depth);
                round_f32(depth_ref);
            }
        }
    } else {
        density_ref = *density_ref_override;
        if (exposed) depth_ref = *depth_ref_override;
    }
    if (family_is_targeted(cfg.family) && !density_ref_override)
        density_ref = build_target(density_ref, cfg.target_rule);

    LossSpec spec;
    spec.density_ref = &density_ref;
    if (exposed) {
        spec.depth_ref = &depth_ref;
        // Untargeted ascends L_d - lambda*L_z; targeted descends L_d + lambda*L_z.
        spec.depth_weight = family_is_targeted(cfg.family) ? cfg.lambda_att : -cfg.lambda_att;
    }
    const double direction = family_is_targeted(cfg.family) ? -1.0 : 1.0;

    AdversarialResult result;
    result.adv_image = image;
    result.loss_trace.reserve(cfg.steps + 1);

    const double step_size = cfg.steps == 1 ? cfg.eps : cfg.alpha;
    for (int it = 0; it < cfg.steps; ++it) {
        double loss = 0.0;
        Tensor grad = input_gradient_with_loss(params, result.adv_image, spec, &loss);
        for (double g : grad.v)
            if (!std::isfinite(g))
                throw std::runtime_error("run_attack: non-finite gradient at step " +
                                         std::to_string(it));
        result.loss_trace.push_back(loss);
        const size_t hw = static_cast<size_t>(image.h) * image.w;
        for (int c = 0; c < image.c; ++c) {
            double* adv = result.adv_image.plane(c);
            const double* in0 = image.plane(c);
            const double* g = grad.plane(c);
            for (size_t i = 0; i < hw; ++i) {
                if (tamper_mask && tamper_mask->v[i] == 0) continue;
                double v = adv[i] + direction * step_size * sign_or_zero(g[i]);
                // Project onto the eps-ball around the original image, then
                // clamp to the valid intensity range.
                v = std::clamp(v, in0[i] - cfg.eps, in0[i] + cfg.eps);
                adv[i] = std::clamp(v, 0.0, 255.0);
            }
        }
    }
    result.loss_trace.push_back(loss_value(params, result.adv_image, spec));

    result.perturbation = Tensor(image.c, image.h, image.w);
    for (size_t i = 0; i < image.v.size(); ++i)
        result.perturbation.v[i] = result.adv_image.v[i] - image.v[i];
    return result;
}

} // namespace dad

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dad/grid.hpp"
#include "dad/io.hpp"
#include "dad/model.hpp"

namespace dad {

/// The four gradient-sign attack variants. Unexposed attacks (U, T) touch
/// only the density loss; exposed attacks (UE, TE) add a depth term so the
/// depth stream stays as quiet as possible while the density stream is
/// pushed around.
enum class AttackFamily { Untargeted, Targeted, UntargetedExposed, TargetedExposed };

std::string family_code(AttackFamily f); // "u" | "t" | "ue" | "te"
AttackFamily family_from_code(const std::string& code);
bool family_is_targeted(AttackFamily f);
bool family_is_exposed(AttackFamily f);

/// How the wrong answer D_t is constructed for targeted families.
/// AddOnePerPixel adds one to every density value (the literal reading);
/// AddOneTotal spreads one extra person across the frame.
enum class TargetRule { AddOnePerPixel, AddOneTotal };

std::string target_rule_name(TargetRule r);
TargetRule target_rule_from_name(const std::string& name);

struct AttackConfig {
    AttackFamily family = AttackFamily::Untargeted;
    double eps = 15.0;    // L-inf budget on the 0..255 scale
    double alpha = 1.0;   // per-step size
    int steps = 19;
    double lambda_att = 0.01; // exposed families only
    TargetRule target_rule = TargetRule::AddOnePerPixel;

    void validate() const;
    json to_json() const;
    static AttackConfig from_json(const json& j);
};

struct AdversarialResult {
    Tensor adv_image;    // same shape as input, values in [0, 255]
    Tensor perturbation; // adv_image - input, |.| <= eps everywhere
    std::vector<double> loss_trace; // attack loss at each iterate, steps+1 entries
};

/// Paper defaults recover n for a given budget: both operands of
/// min(eps + 4, 1.25 * eps) are rounded half-up before taking the min, so
/// the stock eps = 15 yields n = 19; the result is clamped below at 1.
int schedule_steps(double eps);

Grid build_target(const Grid& density_clean, TargetRule rule);

/// Runs one attack against a model. References default to the model's own
/// clean predictions (and the target rule for targeted families); tests can
/// override them. When `tamper_mask` is given, the gradient is zeroed
/// outside it before the sign step, so the perturbation support stays
/// inside the mask exactly.
AdversarialResult run_attack(const ModelParams& params, const Tensor& image,
                             const AttackConfig& cfg, const Mask* tamper_mask = nullptr,
                             const Grid* density_ref_override = nullptr,
                             const Grid* depth_ref_override = nullptr);

} // namespace dad

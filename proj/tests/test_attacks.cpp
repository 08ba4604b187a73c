#include "doctest.h"

#include <cmath>

#include "dad/attacks.hpp"
#include "dad/rng.hpp"
#include "dad/scenegen.hpp"

using namespace dad;

namespace {

Tensor mid_gray_image(int h, int w, uint64_t seed) {
    // values well inside [0,255] so the intensity clamp never bites
    Tensor img(3, h, w);
    Rng rng(seed);
    for (double& v : img.v) v = std::floor(rng.uniform(100.0, 156.0));
    return img;
}

ModelParams small_model(uint64_t seed) {
    return ModelParams::init(ArchDescriptor::reference(), seed);
}

/// density = wd * (we . I), identity activations, unit input scale.
ModelParams linear_model() {
    ArchDescriptor arch;
    arch.input_channels = 3;
    arch.input_scale = 1.0;
    arch.encoder = {{1, 1, Act::Identity, false, false}};
    arch.decoder = {};
    arch.density_head = {1, 1, Act::Identity, false, false};
    arch.depth_head = {1, 1, Act::Identity, false, false};
    ModelParams p = ModelParams::init(arch, 0);
    p.encoder[0].w = {0.05f, -0.03f, 0.04f};
    p.density_decoder[0].w = {0.1f};
    p.depth_decoder[0].w = {0.08f};
    return p;
}

} // namespace

TEST_CASE("schedule_steps follows the rounded min(eps+4, 1.25*eps) rule") {
    CHECK(schedule_steps(15.0) == 19); // both operands round to 19
    CHECK(schedule_steps(1.0) == 1);
    CHECK(schedule_steps(35.0) == 39);
    CHECK(schedule_steps(8.0) == 10);
    CHECK(schedule_steps(0.1) == 1); // clamped below at 1
    CHECK_THROWS_AS(schedule_steps(0.0), std::invalid_argument);
}

TEST_CASE("build_target: plus one per pixel vs plus one person total") {
    Grid d(2, 2, 0.25);
    const Grid per_pixel = build_target(d, TargetRule::AddOnePerPixel);
    for (double v : per_pixel.v) CHECK(v == 1.25);
    const Grid total = build_target(d, TargetRule::AddOneTotal);
    CHECK(total.sum() == doctest::Approx(d.sum() + 1.0).epsilon(1e-12));
}

TEST_CASE("attack with zero budget returns the input exactly") {
    const ModelParams params = small_model(3);
    const Tensor img = mid_gray_image(16, 16, 4);
    AttackConfig cfg;
    cfg.eps = 0.0;
    cfg.steps = 1;
    const AdversarialResult res = run_attack(params, img, cfg);
    CHECK(res.adv_image.v == img.v);
    for (double p : res.perturbation.v) CHECK(p == 0.0);
}

TEST_CASE("single-step attack moves every nonzero-gradient pixel by exactly eps") {
    const ModelParams params = small_model(5);
    const Tensor img = mid_gray_image(16, 16, 6);
    AttackConfig cfg;
    cfg.family = AttackFamily::Untargeted;
    cfg.eps = 15.0;
    cfg.steps = 1;
    const AdversarialResult res = run_attack(params, img, cfg);
    size_t moved = 0;
    for (double p : res.perturbation.v) {
        const double a = std::abs(p);
        CHECK((a == 0.0 || a == 15.0));
        moved += a == 15.0;
    }
    CHECK(moved > 0);
}

TEST_CASE("budget and range invariants across families, budgets and step counts") {
    const ModelParams params = small_model(7);
    SceneSpec spec;
    spec.width = 16;
    spec.height = 16;
    spec.count_min = spec.count_max = 1;
    spec.density.sigma = 1.0;
    spec.density.truncation_radius = 3.0;
    spec.sequence_seed = 2;
    const Tensor img = to_tensor(generate_scene(9, spec).image);
    const Mask mask = quarter_mask(16, 16, 1);

    for (const char* fam : {"u", "t", "ue", "te"})
        for (double eps : {1.0, 15.0, 35.0})
            for (int steps : {1, 19}) {
                AttackConfig cfg;
                cfg.family = family_from_code(fam);
                cfg.eps = eps;
                cfg.alpha = 1.0;
                cfg.steps = steps;
                const AdversarialResult res = run_attack(params, img, cfg, &mask);
                double max_abs = 0.0;
                for (size_t i = 0; i < res.perturbation.v.size(); ++i) {
                    max_abs = std::max(max_abs, std::abs(res.perturbation.v[i]));
                    CHECK(res.adv_image.v[i] >= 0.0);
                    CHECK(res.adv_image.v[i] <= 255.0);
                }
                CHECK(max_abs <= eps);
                // support confined to the mask, exactly
                const size_t hw = static_cast<size_t>(16) * 16;
                for (int c = 0; c < 3; ++c)
                    for (size_t i = 0; i < hw; ++i)
                        if (!mask.v[i]) CHECK(res.perturbation.plane(c)[i] == 0.0);
                CHECK(res.loss_trace.size() == static_cast<size_t>(steps) + 1);
            }
}

TEST_CASE("full-frame mask equals no mask, bit-exactly") {
    const ModelParams params = small_model(11);
    const Tensor img = mid_gray_image(16, 16, 12);
    const Mask full(16, 16, true);
    AttackConfig cfg;
    cfg.steps = 3;
    cfg.eps = 8.0;
    const AdversarialResult with_mask = run_attack(params, img, cfg, &full);
    const AdversarialResult without = run_attack(params, img, cfg, nullptr);
    CHECK(with_mask.adv_image.v == without.adv_image.v);
}

TEST_CASE("empty tamper mask is an error") {
    const ModelParams params = small_model(13);
    const Tensor img = mid_gray_image(16, 16, 14);
    const Mask empty(16, 16, false);
    AttackConfig cfg;
    CHECK_THROWS_WITH_AS(run_attack(params, img, cfg, &empty), doctest::Contains("empty"),
                         std::invalid_argument);
}

TEST_CASE("exposed attacks with lambda 0 reduce to their unexposed variants") {
    const ModelParams params = small_model(17);
    const Tensor img = mid_gray_image(16, 16, 18);
    for (auto [exposed, plain] : {std::pair{AttackFamily::UntargetedExposed, AttackFamily::Untargeted},
                                  std::pair{AttackFamily::TargetedExposed, AttackFamily::Targeted}}) {
        AttackConfig a;
        a.family = exposed;
        a.lambda_att = 0.0;
        a.steps = 4;
        AttackConfig b;
        b.family = plain;
        b.steps = 4;
        const AdversarialResult ra = run_attack(params, img, a);
        const AdversarialResult rb = run_attack(params, img, b);
        CHECK(ra.adv_image.v == rb.adv_image.v);
        CHECK(ra.loss_trace == rb.loss_trace);
    }
}

TEST_CASE("stationary target: attacking toward the clean prediction is a no-op") {
    const ModelParams params = small_model(19);
    const Tensor img = mid_gray_image(16, 16, 20);
    const Grid d_clean = forward(params, img).density;
    AttackConfig cfg;
    cfg.family = AttackFamily::Targeted;
    cfg.steps = 5;
    cfg.eps = 15.0;
    // zero residual -> zero gradient -> sign(0) = 0 keeps every pixel put
    const AdversarialResult res = run_attack(params, img, cfg, nullptr, &d_clean);
    CHECK(res.adv_image.v == img.v);
}

TEST_CASE("linear model: untargeted ascent is exact, targeted descent reaches the target") {
    const ModelParams params = linear_model();
    Tensor img(3, 8, 8);
    Rng rng(33);
    for (double& v : img.v) v = std::floor(rng.uniform(80.0, 176.0));

    SUBCASE("untargeted single steps never decrease the loss") {
        // quadratic loss: L(x + a*d) - L(x) = a*g.d + 0.5*a^2*d^t H d >= 0 when g.d >= 0
        AttackConfig cfg;
        cfg.family = AttackFamily::Untargeted;
        cfg.steps = 6;
        cfg.alpha = 1.0;
        cfg.eps = 6.0;
        const AdversarialResult res = run_attack(params, img, cfg);
        for (size_t i = 1; i < res.loss_trace.size(); ++i)
            CHECK(res.loss_trace[i] >= res.loss_trace[i - 1]);
    }

    SUBCASE("targeted run ends closer to the target") {
        AttackConfig cfg;
        cfg.family = AttackFamily::Targeted;
        cfg.steps = 10;
        cfg.alpha = 1.0;
        cfg.eps = 10.0;
        const AdversarialResult res = run_attack(params, img, cfg);
        CHECK(res.loss_trace.back() < res.loss_trace.front());
    }
}

TEST_CASE("non-finite gradients abort the attack") {
    ModelParams params = small_model(23);
    params.encoder[0].w[0] = std::numeric_limits<float>::infinity();
    const Tensor img = mid_gray_image(16, 16, 24);
    AttackConfig cfg;
    CHECK_THROWS_WITH_AS(run_attack(params, img, cfg), doctest::Contains("non-finite"),
                         std::runtime_error);
}

TEST_CASE("attack config validation and json round trip") {
    AttackConfig cfg;
    cfg.family = AttackFamily::TargetedExposed;
    cfg.eps = 8.0;
    cfg.steps = 10;
    cfg.lambda_att = 0.5;
    const AttackConfig back = AttackConfig::from_json(cfg.to_json());
    CHECK(back.family == cfg.family);
    CHECK(back.eps == cfg.eps);
    CHECK(back.steps == cfg.steps);
    CHECK(back.lambda_att == cfg.lambda_att);

    AttackConfig bad;
    bad.eps = -1.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = AttackConfig{};
    bad.steps = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = AttackConfig{};
    bad.steps = 5;
    bad.alpha = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    CHECK_THROWS_AS(family_from_code("x"), std::invalid_argument);
}

#include "doctest.h"

#include <cmath>

#include "dad/baselines.hpp"
#include "dad/metrics.hpp"
#include "dad/rng.hpp"
#include "dad/scenegen.hpp"

using namespace dad;

TEST_CASE("random mask: exact cardinality and determinism") {
    const Mask quarter = random_mask(100, 100, 0.25, 7);
    CHECK(quarter.count() == 2500);
    const Mask half = random_mask(100, 100, 0.5, 7);
    CHECK(half.count() == 5000);

    CHECK(random_mask(32, 32, 0.5, 3).v == random_mask(32, 32, 0.5, 3).v);
    CHECK(random_mask(32, 32, 0.5, 3).v != random_mask(32, 32, 0.5, 4).v);
    CHECK_THROWS_AS(random_mask(8, 8, 1.5, 1), std::invalid_argument);
}

TEST_CASE("dropout uncertainty: no stochasticity means zero variance") {
    const ModelParams params = ModelParams::init(ArchDescriptor::reference(), 5);
    Tensor img(3, 16, 16);
    Rng rng(6);
    for (double& v : img.v) v = std::floor(rng.uniform(0.0, 256.0));
    const Grid var = dropout_uncertainty(params, img, 5, 0.0, 11);
    for (double v : var.v) CHECK(v == 0.0);
    CHECK_THROWS_AS(dropout_uncertainty(params, img, 1, 0.2, 11), std::invalid_argument);
}

TEST_CASE("dropout uncertainty: nonzero rate produces signal, deterministic per seed") {
    const ModelParams params = ModelParams::init(ArchDescriptor::reference(), 5);
    Tensor img(3, 16, 16);
    Rng rng(8);
    for (double& v : img.v) v = std::floor(rng.uniform(0.0, 256.0));
    const Grid a = dropout_uncertainty(params, img, 6, 0.3, 42);
    const Grid b = dropout_uncertainty(params, img, 6, 0.3, 42);
    CHECK(a.v == b.v);
    CHECK(a.max() > 0.0);
    for (double v : a.v) CHECK(v >= 0.0);
}

TEST_CASE("dropout uncertainty: invariant to a constant density-head bias shift") {
    // An identity density head makes the bias shift a pure translation of
    // the prediction, which leaves its variance untouched.
    ArchDescriptor arch = ArchDescriptor::reference();
    arch.density_head.act = Act::Identity;
    const ModelParams params = ModelParams::init(arch, 9);
    ModelParams shifted = params;
    shifted.density_decoder.back().b[0] += 3.5f;
    Tensor img(3, 16, 16);
    Rng rng(10);
    for (double& v : img.v) v = std::floor(rng.uniform(0.0, 256.0));

    const Grid a = dropout_uncertainty(params, img, 8, 0.25, 13);
    const Grid b = dropout_uncertainty(shifted, img, 8, 0.25, 13);
    for (size_t i = 0; i < a.size(); ++i)
        CHECK(b.v[i] == doctest::Approx(a.v[i]).epsilon(1e-6).scale(1e-9));
}

TEST_CASE("best threshold: a perfectly informative map reaches mIoU 1") {
    const Mask gt = quarter_mask(16, 16, 1);
    Grid map(16, 16, 0.0);
    for (size_t i = 0; i < map.size(); ++i) map.v[i] = gt.v[i] ? 1.0 : 0.0;
    const ThresholdPick pick = best_threshold_masks({map}, {gt});
    CHECK(pick.miou == 1.0);
    CHECK(pick.masks[0].v == gt.v);
}

TEST_CASE("best threshold: constant map degenerates to all or nothing") {
    const Mask gt = quarter_mask(16, 16, 0);
    const Grid flat(16, 16, 0.42);
    const ThresholdPick pick = best_threshold_masks({flat}, {gt});
    // all-flagged IoU = 0.25 beats none-flagged IoU = 0
    CHECK(pick.miou == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(pick.masks[0].count() == pick.masks[0].size());

    // with an empty ground truth the empty mask wins instead
    const Mask none(16, 16, false);
    const ThresholdPick empty_pick = best_threshold_masks({flat}, {none});
    CHECK(empty_pick.miou == 1.0);
    CHECK(empty_pick.masks[0].count() == 0);
}

TEST_CASE("best threshold: doubling the candidate count never hurts") {
    Rng rng(77);
    for (int trial = 0; trial < 5; ++trial) {
        Grid map(24, 24);
        for (double& v : map.v) v = rng.uniform(0.0, 1.0);
        const Mask gt = random_mask(24, 24, 0.25, mix_seed(50, trial));
        const double coarse = best_threshold_masks({map}, {gt}, 256).miou;
        const double fine = best_threshold_masks({map}, {gt}, 512).miou;
        CHECK(fine >= coarse - 1e-15);
    }
}

TEST_CASE("best threshold: oracle maximum dominates any fixed threshold") {
    Rng rng(88);
    Grid map(16, 16);
    for (double& v : map.v) v = rng.uniform(0.0, 1.0);
    const Mask gt = random_mask(16, 16, 0.25, 99);
    const ThresholdPick pick = best_threshold_masks({map}, {gt});
    for (double thr : {0.1, 0.3, 0.5, 0.7, 0.9}) {
        Mask m(16, 16);
        for (size_t i = 0; i < map.size(); ++i) m.v[i] = map.v[i] > thr;
        CHECK(pick.miou >= mask_iou(m, gt) - 1e-15);
    }
}

#include "doctest.h"

#include <algorithm>
#include <filesystem>

#include "dad/dataset.hpp"
#include "dad/defense.hpp"
#include "dad/rng.hpp"

using namespace dad;

namespace {

Grid random_positive_grid(int h, int w, uint64_t seed, double lo = 0.05, double hi = 1.0) {
    Grid g(h, w);
    Rng rng(seed);
    for (double& v : g.v) v = rng.uniform(lo, hi);
    return g;
}

} // namespace

TEST_CASE("indicator: identity, arithmetic, scale invariance") {
    Grid z_ref = random_positive_grid(8, 8, 1);
    const IndicatorResult same = depth_indicator(z_ref, z_ref);
    for (double v : same.value.v) CHECK(v == 0.0);
    CHECK(same.floored.count() == 0);

    Grid a(1, 1, 0.6), b(1, 1, 0.5);
    CHECK(depth_indicator(a, b).value.v[0] == doctest::Approx(0.2).epsilon(1e-12));

    Grid z_est = random_positive_grid(8, 8, 2);
    const Grid ind = depth_indicator(z_est, z_ref).value;
    Grid z_est3 = z_est, z_ref3 = z_ref;
    for (double& v : z_est3.v) v *= 3.0;
    for (double& v : z_ref3.v) v *= 3.0;
    const Grid ind3 = depth_indicator(z_est3, z_ref3).value;
    for (size_t i = 0; i < ind.size(); ++i)
        CHECK(ind3.v[i] == doctest::Approx(ind.v[i]).epsilon(1e-12));
    for (double v : ind.v) CHECK(v >= 0.0);
}

TEST_CASE("indicator: reference floor pixels are flagged in diagnostics") {
    Grid z_est(2, 2, 0.5);
    Grid z_ref(2, 2, 0.5);
    z_ref.v[3] = 0.0; // degenerate reference pixel
    const IndicatorResult r = depth_indicator(z_est, z_ref);
    CHECK(r.floored.count() == 1);
    CHECK(r.floored.v[3] == 1);
    CHECK(r.value.v[3] == doctest::Approx((0.5 - 1e-3) / 1e-3));
    CHECK(r.value.v[0] == 0.0);
}

TEST_CASE("threshold: five percent of the calibration max") {
    const DetectionThreshold t = DetectionThreshold::from_max(0.8);
    CHECK(t.tau == doctest::Approx(0.04).epsilon(1e-12));
    CHECK(t.percent == 5.0);
    const DetectionThreshold t10 = DetectionThreshold::from_max(0.8, 10.0);
    CHECK(t10.tau == doctest::Approx(0.08).epsilon(1e-12));
    const DetectionThreshold back = DetectionThreshold::from_json(t.to_json());
    CHECK(back.tau == t.tau);
    CHECK(back.calibration_max == t.calibration_max);
}

TEST_CASE("threshold: degenerate calibration fails loudly") {
    CHECK_THROWS_WITH_AS(DetectionThreshold::from_max(0.0),
                         doctest::Contains("degenerate calibration"), std::runtime_error);
}

TEST_CASE("detect: a quadrant pushed past the threshold is fully flagged") {
    const int hw = 16;
    Grid z_ref = random_positive_grid(hw, hw, 3, 0.2, 0.9);
    const double tau = 0.05;
    Grid z_est = z_ref;
    const Mask quadrant = quarter_mask(hw, hw, 2);
    for (size_t i = 0; i < z_est.size(); ++i)
        if (quadrant.v[i]) z_est.v[i] = z_ref.v[i] * (1.0 + 2.0 * tau);
    const Mask flags = flag_above(depth_indicator(z_est, z_ref).value, tau);
    CHECK(flags.v == quadrant.v);
}

TEST_CASE("detect: raising the threshold only shrinks the mask") {
    const Grid ind = random_positive_grid(32, 32, 4, 0.0, 1.0);
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const double t1 = rng.uniform(0.0, 1.0);
        const double t2 = t1 + rng.uniform(0.0, 1.0 - t1);
        const Mask m1 = flag_above(ind, t1);
        const Mask m2 = flag_above(ind, t2);
        for (size_t i = 0; i < m1.size(); ++i)
            if (m2.v[i]) CHECK(m1.v[i]); // flags(t2) subset of flags(t1)
    }
}

TEST_CASE("calibration over a real dataset is positive and reproducible") {
    const fs::path root = fs::temp_directory_path() / "dad_test_defense_ds";
    fs::remove_all(root);
    SceneSpec spec;
    spec.width = 48;
    spec.height = 48;
    spec.count_min = 1;
    spec.count_max = 3;
    spec.density.sigma = 2.0;
    spec.density.truncation_radius = 8.0;
    generate_dataset(11, 4, 2, spec, root);
    const Dataset ds = Dataset::open(root);
    const ModelParams params = ModelParams::init(ArchDescriptor::reference(), 3);

    const auto gt_ref = make_gt_reference(ds);
    const DetectionThreshold a = calibrate_threshold(params, ds, *gt_ref);
    const DetectionThreshold b = calibrate_threshold(params, ds, *gt_ref);
    CHECK(a.tau > 0.0);
    CHECK(a.tau == b.tau); // bit-exact across re-runs
    CHECK(a.calibration_max == b.calibration_max);

    const auto geo_ref = make_geometry_reference(ds);
    CHECK(geo_ref->get("train0000").v == ds.background_depth().v);
    const DetectionThreshold g = calibrate_threshold(params, ds, *geo_ref);
    CHECK(g.tau > 0.0);

    // file provider: serve the gt maps from a side directory
    const fs::path ref_dir = root / "external_ref";
    fs::create_directories(ref_dir);
    for (const std::string& id : ds.all_ids())
        write_grid_f32(ref_dir / (id + ".f32"), ds.load_depth(id));
    const auto file_ref = make_file_reference(ref_dir, spec.height, spec.width);
    CHECK(file_ref->get("test0001").v == ds.load_depth("test0001").v);

    fs::remove_all(root);
}

TEST_CASE("depth stats: single map, arithmetic, permutation invariance") {
    const Grid m = random_positive_grid(6, 6, 7);
    const DepthStats single = fit_depth_stats({m});
    CHECK(single.z_min.v == m.v);
    CHECK(single.z_max.v == m.v);
    CHECK(single.z_mean.v == m.v);
    CHECK(single.n_frames == 1);

    Grid a(1, 1, 0.3), b(1, 1, 0.5);
    const DepthStats two = fit_depth_stats({a, b});
    CHECK(two.z_min.v[0] == 0.3);
    CHECK(two.z_max.v[0] == 0.5);
    CHECK(two.z_mean.v[0] == doctest::Approx(0.4).epsilon(1e-12));

    std::vector<Grid> maps;
    for (uint64_t s = 0; s < 5; ++s) maps.push_back(random_positive_grid(6, 6, 100 + s));
    const DepthStats fwd = fit_depth_stats(maps);
    std::reverse(maps.begin(), maps.end());
    const DepthStats rev = fit_depth_stats(maps);
    CHECK(fwd.z_min.v == rev.z_min.v);
    CHECK(fwd.z_max.v == rev.z_max.v);
    for (size_t i = 0; i < fwd.z_mean.size(); ++i)
        CHECK(fwd.z_mean.v[i] == doctest::Approx(rev.z_mean.v[i]).epsilon(1e-12));

    // envelope invariant: min <= mean <= max
    for (size_t i = 0; i < fwd.z_mean.size(); ++i) {
        CHECK(fwd.z_min.v[i] <= fwd.z_mean.v[i]);
        CHECK(fwd.z_mean.v[i] <= fwd.z_max.v[i]);
    }

    CHECK_THROWS_AS(fit_depth_stats({}), std::invalid_argument);
    CHECK_THROWS_AS(fit_depth_stats({Grid(2, 2), Grid(3, 3)}), std::invalid_argument);
}

TEST_CASE("depth stats round trip through the f32x3 file") {
    const fs::path path = fs::temp_directory_path() / "dad_test_stats.f32x3";
    std::vector<Grid> maps;
    for (uint64_t s = 0; s < 3; ++s) maps.push_back(random_positive_grid(5, 9, 200 + s));
    const DepthStats stats = fit_depth_stats(maps);
    save_depth_stats(path, stats);
    const DepthStats back = load_depth_stats(path);
    CHECK(back.n_frames == 3);
    for (size_t i = 0; i < stats.z_min.size(); ++i) {
        CHECK(back.z_min.v[i] == static_cast<double>(static_cast<float>(stats.z_min.v[i])));
        CHECK(back.z_max.v[i] == static_cast<double>(static_cast<float>(stats.z_max.v[i])));
    }
    fs::remove(path);
    fs::remove(path.string() + ".json");
}

TEST_CASE("tamper_reference arithmetic") {
    Grid z(2, 2, 0.4);
    Grid mu(2, 2, 0.5);
    const Grid same = tamper_reference(z, 0.0, mu);
    CHECK(same.v == z.v);
    const Grid up = tamper_reference(z, 0.01, mu);
    for (double v : up.v) CHECK(v == doctest::Approx(0.405).epsilon(1e-12));
    const Grid down = tamper_reference(z, -0.01, mu);
    for (double v : down.v) CHECK(v == doctest::Approx(0.395).epsilon(1e-12));
}

TEST_CASE("reference tampering detection: envelope logic and monotonicity") {
    std::vector<Grid> maps;
    for (uint64_t s = 0; s < 8; ++s) maps.push_back(random_positive_grid(12, 12, 300 + s, 0.4, 0.6));
    const DepthStats stats = fit_depth_stats(maps);

    // untouched map stays inside the envelope
    const RefTamperResult clean = detect_reference_tampering(maps[0], stats);
    CHECK(clean.flags.count() == 0);
    CHECK(clean.detection_rate == 0.0);

    // a single pushed pixel is flagged
    Grid poked = maps[0];
    poked.v[5] = stats.z_max.v[5] + 0.01;
    const RefTamperResult one = detect_reference_tampering(poked, stats);
    CHECK(one.flags.v[5] == 1);
    CHECK(one.flags.count() == 1);

    // detection rate is nondecreasing in beta for uniform tampering
    double prev = -1.0;
    for (double beta : {0.0, 0.001, 0.01, 0.05, 0.2, 1.0}) {
        const Grid t = tamper_reference(maps[0], beta, stats.z_mean);
        const double rate = detect_reference_tampering(t, stats).detection_rate;
        CHECK(rate >= prev);
        prev = rate;
    }
    CHECK(prev == 1.0); // beta = 1 shifts by a full mean depth, beyond every envelope here
}

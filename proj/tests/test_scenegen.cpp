#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "dad/dataset.hpp"
#include "dad/io.hpp"
#include "dad/scenegen.hpp"

using namespace dad;

namespace {

// Independent oracle: direct summation of the truncated, renormalized
// kernel, clipped to the image.
double kernel_mass_oracle(double cx, double cy, int h, int w, double sigma, double radius) {
    double full = 0.0, inside = 0.0;
    const int x0 = static_cast<int>(std::floor(cx - radius));
    const int x1 = static_cast<int>(std::ceil(cx + radius));
    const int y0 = static_cast<int>(std::floor(cy - radius));
    const int y1 = static_cast<int>(std::ceil(cy + radius));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
            if (d2 > radius * radius) continue;
            const double v = std::exp(-d2 / (2.0 * sigma * sigma));
            full += v;
            if (x >= 0 && x < w && y >= 0 && y < h) inside += v;
        }
    return inside / full;
}

SceneSpec small_spec() {
    SceneSpec spec;
    spec.width = 48;
    spec.height = 48;
    spec.count_min = 2;
    spec.count_max = 5;
    spec.density.sigma = 2.0;
    spec.density.truncation_radius = 8.0;
    spec.sequence_seed = 7;
    return spec;
}

} // namespace

TEST_CASE("density map: empty head list gives a zero map") {
    const Grid d = make_density_map({}, 32, 32, DensityConfig{});
    CHECK(d.sum() == 0.0);
    CHECK(d.max() == 0.0);
}

TEST_CASE("density map: one interior head integrates to one person") {
    DensityConfig cfg{2.0, 8.0};
    const Grid d = make_density_map({{32.0, 32.0, 5.0}}, 64, 64, cfg);
    CHECK(d.sum() > 0.999);
    CHECK(d.sum() < 1.001);
    CHECK(d.sum() == doctest::Approx(kernel_mass_oracle(32, 32, 64, 64, 2.0, 8.0)).epsilon(1e-12));
    CHECK(d.min() >= 0.0);
}

TEST_CASE("density map: three interior heads superpose") {
    DensityConfig cfg{2.0, 8.0};
    const std::vector<HeadAnnotation> heads = {{20, 20, 4}, {30, 40, 6}, {44, 22, 8}};
    const Grid d = make_density_map(heads, 64, 64, cfg);
    CHECK(d.sum() > 2.997);
    CHECK(d.sum() < 3.003);
}

TEST_CASE("density map: boundary heads lose exactly the clipped mass") {
    DensityConfig cfg{2.0, 8.0};
    const Grid d = make_density_map({{1.0, 30.0, 5.0}}, 64, 64, cfg);
    CHECK(d.sum() == doctest::Approx(kernel_mass_oracle(1, 30, 64, 64, 2.0, 8.0)).epsilon(1e-12));
    CHECK(d.sum() < 0.95); // a visible part of the kernel is outside
}

TEST_CASE("density map: head outside the image is rejected") {
    DensityConfig cfg{2.0, 8.0};
    CHECK_THROWS_WITH_AS(make_density_map({{-1.0, 5.0, 3.0}}, 32, 32, cfg),
                         doctest::Contains("outside"), std::invalid_argument);
    CHECK_THROWS_AS(make_density_map({{5.0, 32.0, 3.0}}, 32, 32, cfg), std::invalid_argument);
}

TEST_CASE("density config validation") {
    CHECK_THROWS_AS(make_density_map({}, 8, 8, DensityConfig{0.0, 8.0}), std::invalid_argument);
    CHECK_THROWS_AS(make_density_map({}, 8, 8, DensityConfig{4.0, 8.0}), std::invalid_argument);
}

TEST_CASE("quarter mask: 4x4 enumeration and partition") {
    const Mask m0 = quarter_mask(4, 4, 0);
    CHECK(m0.count() == 4);
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x) CHECK(m0.at(y, x));
    CHECK_FALSE(m0.at(0, 2));
    CHECK_FALSE(m0.at(2, 0));

    for (int hw : {4, 6, 8}) {
        size_t total = 0;
        Mask seen(hw, hw);
        for (int q = 0; q < 4; ++q) {
            const Mask m = quarter_mask(hw, hw, q);
            total += m.count();
            for (size_t i = 0; i < m.size(); ++i) {
                if (!m.v[i]) continue;
                CHECK_FALSE(seen.v[i]); // pairwise disjoint
                seen.v[i] = 1;
            }
        }
        CHECK(total == static_cast<size_t>(hw) * hw);
    }
}

TEST_CASE("quarter mask: ceiling split on odd dimensions") {
    CHECK(quarter_mask(5, 5, 0).count() == 9);
    CHECK(quarter_mask(5, 5, 1).count() == 6);
    CHECK(quarter_mask(5, 5, 2).count() == 6);
    CHECK(quarter_mask(5, 5, 3).count() == 4);
    size_t total = 0;
    for (int q = 0; q < 4; ++q) total += quarter_mask(5, 5, q).count();
    CHECK(total == 25);
}

TEST_CASE("quarter mask: invalid index") {
    CHECK_THROWS_AS(quarter_mask(4, 4, 4), std::invalid_argument);
    CHECK_THROWS_AS(quarter_mask(4, 4, -1), std::invalid_argument);
}

TEST_CASE("generate_scene: determinism") {
    const SceneSpec spec = small_spec();
    const SceneSample a = generate_scene(123, spec);
    const SceneSample b = generate_scene(123, spec);
    CHECK(a.image.rgb == b.image.rgb);
    CHECK(a.density_gt.v == b.density_gt.v);
    CHECK(a.depth_gt.v == b.depth_gt.v);
    REQUIRE(a.heads.size() == b.heads.size());
    for (size_t i = 0; i < a.heads.size(); ++i) {
        CHECK(a.heads[i].x == b.heads[i].x);
        CHECK(a.heads[i].y == b.heads[i].y);
        CHECK(a.heads[i].depth_m == b.heads[i].depth_m);
    }
    const SceneSample c = generate_scene(124, spec);
    CHECK(a.image.rgb != c.image.rgb);
}

TEST_CASE("generate_scene: empty crowd is pure background") {
    SceneSpec spec = small_spec();
    spec.count_min = spec.count_max = 0;
    const SceneSample s = generate_scene(5, spec);
    CHECK(s.count() == 0);
    CHECK(s.density_gt.sum() == 0.0);
    CHECK(s.depth_gt.v == background_depth(spec).v);
}

TEST_CASE("generate_scene: density mass accounts for every person") {
    SceneSpec spec = small_spec();
    spec.width = 128;
    spec.height = 128;
    spec.density.sigma = 4.0;
    spec.density.truncation_radius = 16.0;
    spec.count_min = spec.count_max = 20;
    const SceneSample s = generate_scene(0, spec);
    REQUIRE(s.count() == 20);
    // heads are placed a full kernel radius inside, so no boundary loss
    CHECK(s.density_gt.sum() > 19.5);
    CHECK(s.density_gt.sum() < 20.0 + 1e-9);
}

TEST_CASE("generate_scene: depth maps stay normalized") {
    const SceneSpec spec = small_spec();
    for (uint64_t seed : {1, 2, 3}) {
        const SceneSample s = generate_scene(seed, spec);
        CHECK(s.depth_gt.min() >= 0.0);
        CHECK(s.depth_gt.max() <= 1.0);
        CHECK(s.density_gt.min() >= 0.0);
        for (const HeadAnnotation& h : s.heads) {
            CHECK(h.x >= 0.0);
            CHECK(h.x < spec.width);
            CHECK(h.y >= 0.0);
            CHECK(h.y < spec.height);
            CHECK(h.depth_m > 0.0);
        }
    }
}

TEST_CASE("generate_scene: infeasible crowd errors out") {
    SceneSpec spec = small_spec();
    spec.count_min = spec.count_max = 400;
    CHECK_THROWS_WITH_AS(generate_scene(1, spec), doctest::Contains("cannot place"),
                         std::runtime_error);
}

TEST_CASE("generate_dataset: layout, split and determinism") {
    const fs::path root = fs::temp_directory_path() / "dad_test_dataset";
    fs::remove_all(root);
    generate_dataset(42, 8, 4, small_spec(), root);

    const Dataset ds = Dataset::open(root);
    CHECK(ds.ids("train").size() == 8);
    CHECK(ds.ids("test").size() == 4);
    size_t frame_dirs = 0;
    for (const auto& e : fs::directory_iterator(root / "frames")) frame_dirs += e.is_directory();
    CHECK(frame_dirs == 12);

    const FrameData f = ds.load_frame("train0000");
    CHECK(f.count == static_cast<int>(f.heads.size()));
    CHECK(f.density_gt.sum() == doctest::Approx(f.count).epsilon(1e-3));
    CHECK(ds.background_depth().size() == f.depth_gt.size());

    // byte-identical regeneration
    const uint64_t h_manifest = hash_file(root / "manifest.json");
    const uint64_t h_img = hash_file(root / "frames" / "test0001" / "image.png");
    const uint64_t h_depth = hash_file(root / "frames" / "test0001" / "depth.f32");
    const fs::path root2 = fs::temp_directory_path() / "dad_test_dataset2";
    fs::remove_all(root2);
    generate_dataset(42, 8, 4, small_spec(), root2);
    CHECK(hash_file(root2 / "frames" / "test0001" / "image.png") == h_img);
    CHECK(hash_file(root2 / "frames" / "test0001" / "depth.f32") == h_depth);
    CHECK(hash_file(root2 / "manifest.json") == h_manifest);

    // train/test streams are disjoint: same index, different content
    CHECK(hash_file(root / "frames" / "train0000" / "image.png") !=
          hash_file(root / "frames" / "test0000" / "image.png"));

    fs::remove_all(root);
    fs::remove_all(root2);
}

TEST_CASE("generate_dataset: empty training set is an error") {
    const fs::path root = fs::temp_directory_path() / "dad_test_dataset_empty";
    CHECK_THROWS_WITH_AS(generate_dataset(1, 0, 4, small_spec(), root),
                         doctest::Contains("empty training set"), std::invalid_argument);
}

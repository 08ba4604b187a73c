#pragma once

#include <cstdint>
#include <vector>

#include "dad/grid.hpp"
#include "dad/io.hpp"

namespace dad {

/// One annotated head: pixel position plus metric depth.
struct HeadAnnotation {
    double x = 0.0;      // column, 0 <= x < width
    double y = 0.0;      // row, 0 <= y < height
    double depth_m = 0.0; // meters, > 0
};

struct DensityConfig {
    double sigma = 4.0;             // Gaussian std in pixels
    double truncation_radius = 16.0; // kernel support; must be >= 3*sigma

    void validate() const;
};

/// Parameters of the synthetic fixed-camera sequence. `sequence_seed`
/// identifies the camera/background; per-frame seeds only move the crowd.
struct SceneSpec {
    int width = 128;
    int height = 128;
    int count_min = 5;
    int count_max = 30;
    DensityConfig density;
    double depth_norm_m = 20.0;       // depths divided by this for the [0,1] maps
    double people_depth_min_m = 2.0;
    double people_depth_max_m = 18.0;
    double background_near_m = 6.0;
    double background_far_m = 19.5;
    double person_height_scale = 60.0; // body height in px = scale * 1.7 / depth_m
    double min_head_separation_px = 10.0;
    double frame_noise = 3.0;          // per-frame additive image noise amplitude
    int max_place_attempts = 200;      // per person, before giving up
    uint64_t sequence_seed = 0;

    void validate() const;
    json to_json() const;
    static SceneSpec from_json(const json& j);
};

struct SceneSample {
    ImageU8 image;
    Grid density_gt; // people per pixel, >= 0
    Grid depth_gt;   // normalized to [0,1]
    std::vector<HeadAnnotation> heads;

    int count() const { return static_cast<int>(heads.size()); }
};

/// Ground-truth density: each head contributes a truncated Gaussian kernel
/// renormalized to unit mass over its full support, so interior heads
/// integrate to exactly one person.
Grid make_density_map(const std::vector<HeadAnnotation>& heads, int h, int w,
                      const DensityConfig& cfg);

/// The static background depth field of the sequence, normalized to [0,1].
/// This is what the scene-geometry reference provider serves: depth of the
/// scene with no people in it.
Grid background_depth(const SceneSpec& spec);

/// Deterministic scene synthesis: background plus depth-ordered person
/// blobs, nearest surface wins the depth map.
SceneSample generate_scene(uint64_t seed, const SceneSpec& spec);

/// Axis-aligned quadrant mask. Corners are row-major: 0 = top-left,
/// 1 = top-right, 2 = bottom-left, 3 = bottom-right. Odd dimensions use a
/// ceiling split, so quadrant 0 is ceil(H/2) x ceil(W/2).
Mask quarter_mask(int h, int w, int quadrant_index);

} // namespace dad

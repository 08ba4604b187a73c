#pragma once

#include <memory>
#include <string>
#include <vector>

#include "dad/dataset.hpp"
#include "dad/grid.hpp"
#include "dad/model.hpp"

namespace dad {

/// Default floor guarding the division by the reference depth. Reference
/// maps are contractually positive; pixels at or below the floor are still
/// computed (against the floor) but reported in the diagnostics mask.
inline constexpr double kRefDepthFloor = 1e-3;

struct IndicatorResult {
    Grid value;   // elementwise |z_est - z_ref| / z_ref, nonnegative
    Mask floored; // pixels whose reference hit the floor
};

IndicatorResult depth_indicator(const Grid& z_est, const Grid& z_ref,
                                double ref_floor = kRefDepthFloor);

struct DetectionThreshold {
    double tau = 0.0;             // percent/100 * calibration_max
    double calibration_max = 0.0; // largest training indicator value
    double percent = 5.0;

    static DetectionThreshold from_max(double calibration_max, double percent = 5.0);
    json to_json() const;
    static DetectionThreshold from_json(const json& j);
};

/// Source of trusted per-frame depth maps. Ground truth reads the sensor
/// channel of the dataset, geometry serves the people-free background
/// field, and the file provider reads <dir>/<frame_id>.f32 maps supplied
/// by an external estimator.
class DepthReference {
  public:
    virtual ~DepthReference() = default;
    virtual std::string kind() const = 0;
    virtual Grid get(const std::string& frame_id) const = 0;
};

std::unique_ptr<DepthReference> make_gt_reference(const Dataset& ds);
std::unique_ptr<DepthReference> make_geometry_reference(const Dataset& ds);
std::unique_ptr<DepthReference> make_file_reference(const fs::path& dir, int h, int w);

/// Scans the clean training split and returns the threshold derived from
/// the largest observed indicator value. A zero maximum (a depth head that
/// is exact everywhere) cannot produce a usable threshold and is an error.
DetectionThreshold calibrate_threshold(const ModelParams& params, const Dataset& ds,
                                       const DepthReference& ref, double percent = 5.0);

struct DetectionResult {
    Mask flags;
    Grid indicator;
};

Mask flag_above(const Grid& indicator, double tau);
DetectionResult detect(const ModelParams& params, const Tensor& image, const Grid& z_ref,
                       const DetectionThreshold& threshold);

/// Per-pixel depth statistics over a fixed-camera sequence.
struct DepthStats {
    Grid z_min;
    Grid z_max;
    Grid z_mean;
    int n_frames = 0;
};

DepthStats fit_depth_stats(const std::vector<Grid>& maps);

void save_depth_stats(const fs::path& path, const DepthStats& stats); // 3 f32 planes + sidecar json
DepthStats load_depth_stats(const fs::path& path);

/// The uniform tampering model applied to an exposed reference map:
/// t = z + beta * mu_z, elementwise.
Grid tamper_reference(const Grid& z, double beta, const Grid& mu_z);

struct RefTamperResult {
    Mask flags;            // pixels outside the [z_min, z_max] envelope
    double detection_rate; // flagged fraction of the frame
};

RefTamperResult detect_reference_tampering(const Grid& candidate, const DepthStats& stats);

} // namespace dad

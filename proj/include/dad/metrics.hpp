#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dad/grid.hpp"
#include "dad/io.hpp"

namespace dad {

/// Per-frame intersection-over-union with the clean-frame convention:
/// two empty masks agree perfectly (IoU 1), an empty against a nonempty
/// mask scores 0. An optional ROI is intersected into both operands first.
double mask_iou(const Mask& pred, const Mask& gt, const Mask* roi = nullptr);

double mean_iou(const std::vector<Mask>& pred, const std::vector<Mask>& gt,
                const Mask* roi = nullptr);

/// Expected IoU of a uniformly random prediction covering fraction k of the
/// frame against a quarter-area ground truth: (k/4) / (1/4 + k - k/4).
/// k = 1/2 gives 0.20, k = 1/4 gives 1/7.
double expected_random_iou(double fraction);

struct CountErrors {
    double dmae = 0.0;
    double rmse = 0.0;
};

/// Counts are density-map integrals; errors follow the usual MAE/RMSE forms.
CountErrors count_errors(const std::vector<double>& est_counts,
                         const std::vector<double>& gt_counts);

double density_count(const Grid& density);

/// Mean absolute depth error over tampered pixels only, averaged over
/// frames. Frames with an empty mask are skipped (counted in the report's
/// skipped_frames); it is an error if every frame is empty.
struct ZmaeResult {
    double value = 0.0;
    int used_frames = 0;
    int skipped_frames = 0;
};

ZmaeResult zmae(const std::vector<Grid>& z_est, const std::vector<Grid>& z_ref,
                const std::vector<Mask>& masks);

struct FrameMetrics {
    std::string id;
    double count_gt = 0.0;
    double count_est = 0.0;
    double iou = 0.0;
    double depth_mae_masked = 0.0;
    bool mask_empty = false;
};

struct EvalReport {
    double miou = 0.0;
    double dmae = 0.0;
    double rmse = 0.0;
    double zmae = 0.0;
    int n_frames = 0;
    int zmae_skipped = 0;
    std::vector<FrameMetrics> frames;

    json to_json() const;
    std::string to_csv() const; // fixed columns: id,count_gt,count_est,iou,depth_mae_masked
};

/// Minimal deterministic SVG line chart, one polyline per named series.
struct SeriesPlot {
    std::string title, x_label, y_label;
    std::vector<double> x;
    std::vector<std::pair<std::string, std::vector<double>>> series;

    std::string render_svg() const;
};

} // namespace dad

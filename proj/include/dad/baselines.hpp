#pragma once

#include <cstdint>
#include <vector>

#include "dad/grid.hpp"
#include "dad/model.hpp"

namespace dad {

/// Uniformly random prediction flagging exactly round(fraction * H * W)
/// pixels; deterministic per seed.
Mask random_mask(int h, int w, double fraction, uint64_t seed);

/// Per-pixel variance of the density prediction across n_passes stochastic
/// forward passes with feature dropout.
Grid dropout_uncertainty(const ModelParams& params, const Tensor& image, int n_passes,
                         double drop_rate, uint64_t seed);

inline constexpr int kDefaultDropoutPasses = 20;
inline constexpr double kDefaultDropoutRate = 0.2;

struct ThresholdPick {
    double threshold = 0.0;
    double miou = 0.0;
    std::vector<Mask> masks;
};

/// Oracle threshold selection, mirroring how uncertainty baselines are
/// scored: sweeps quantile-spaced candidates over the pooled map values
/// (plus a flag-everything sentinel) and keeps the threshold whose masks
/// maximize mean IoU against the ground truth. Doubling n_candidates only
/// grows the candidate set, so the best mIoU is nondecreasing in it.
ThresholdPick best_threshold_masks(const std::vector<Grid>& maps, const std::vector<Mask>& gt,
                                   int n_candidates = 256);

} // namespace dad

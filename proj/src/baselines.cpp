#include "dad/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dad/defense.hpp"
#include "dad/metrics.hpp"
#include "dad/rng.hpp"

namespace dad {

Mask random_mask(int h, int w, double fraction, uint64_t seed) {
    if (fraction < 0.0 || fraction > 1.0)
        throw std::invalid_argument("random_mask: fraction must be in [0,1]");
    const size_t total = static_cast<size_t>(h) * w;
    const size_t k = static_cast<size_t>(std::llround(fraction * total));
    std::vector<uint32_t> idx(total);
    std::iota(idx.begin(), idx.end(), 0u);
    Rng rng(mix_seed(seed, "random-mask"));
    // Partial Fisher-Yates: the first k slots end up a uniform k-subset.
    for (size_t i = 0; i < k; ++i) {
        const size_t j = i + rng.below(total - i);
        std::swap(idx[i], idx[j]);
    }
    Mask m(h, w);
    for (size_t i = 0; i < k; ++i) m.v[idx[i]] = 1;
    return m;
}

Grid dropout_uncertainty(const ModelParams& params, const Tensor& image, int n_passes,
                         double drop_rate, uint64_t seed) {
    if (n_passes < 2)
        throw std::invalid_argument("dropout_uncertainty: need at least 2 passes to estimate "
                                    "a variance");
    if (drop_rate == 0.0) return Grid(image.h, image.w, 0.0); // every pass is identical
    std::vector<Grid> passes;
    passes.reserve(n_passes);
    Grid mean(image.h, image.w);
    for (int p = 0; p < n_passes; ++p) {
        Prediction pred = forward_feature_dropout(params, image, drop_rate, mix_seed(seed, p));
        for (size_t i = 0; i < mean.size(); ++i) mean.v[i] += pred.density.v[i];
        passes.push_back(std::move(pred.density));
    }
    for (double& v : mean.v) v /= n_passes;
    // two-pass variance: exactly zero when every pass agrees
    Grid var(image.h, image.w);
    for (const Grid& g : passes)
        for (size_t i = 0; i < var.size(); ++i) {
            const double d = g.v[i] - mean.v[i];
            var.v[i] += d * d;
        }
    for (double& v : var.v) v /= n_passes;
    return var;
}

ThresholdPick best_threshold_masks(const std::vector<Grid>& maps, const std::vector<Mask>& gt,
                                   int n_candidates) {
    if (maps.size() != gt.size() || maps.empty())
        throw std::invalid_argument("best_threshold_masks: need paired, nonempty lists");
    if (n_candidates < 1) throw std::invalid_argument("best_threshold_masks: need candidates");

    std::vector<double> pooled;
    for (const Grid& g : maps) pooled.insert(pooled.end(), g.v.begin(), g.v.end());
    std::sort(pooled.begin(), pooled.end());

    std::vector<double> candidates;
    candidates.reserve(n_candidates + 1);
    // Below-minimum sentinel: flags every pixel (flags are value > threshold).
    candidates.push_back(pooled.front() - 1.0);
    for (int k = 0; k < n_candidates; ++k) {
        const size_t i = static_cast<size_t>(static_cast<double>(k) / n_candidates * pooled.size());
        candidates.push_back(pooled[std::min(i, pooled.size() - 1)]);
    }
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

    ThresholdPick best;
    best.miou = -1.0;
    for (double thr : candidates) {
        double total = 0.0;
        for (size_t i = 0; i < maps.size(); ++i)
            total += mask_iou(flag_above(maps[i], thr), gt[i]);
        const double miou = total / maps.size();
        if (miou > best.miou) {
            best.miou = miou;
            best.threshold = thr;
        }
    }
    best.masks.reserve(maps.size());
    for (const Grid& g : maps) best.masks.push_back(flag_above(g, best.threshold));
    return best;
}

} // namespace dad

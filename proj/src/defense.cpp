#include "dad/defense.hpp"

#include <algorithm>
#include <cmath>

namespace dad {

IndicatorResult depth_indicator(const Grid& z_est, const Grid& z_ref, double ref_floor) {
    if (!z_est.same_shape(z_ref)) throw std::invalid_argument("depth_indicator: shape mismatch");
    IndicatorResult r;
    r.value = Grid(z_est.h, z_est.w);
    r.floored = Mask(z_est.h, z_est.w);
    for (size_t i = 0; i < z_est.size(); ++i) {
        double ref = z_ref.v[i];
        if (ref <= ref_floor) {
            ref = ref_floor;
            r.floored.v[i] = 1;
        }
        r.value.v[i] = std::abs(z_est.v[i] - ref) / ref;
    }
    return r;
}

DetectionThreshold DetectionThreshold::from_max(double calibration_max, double percent) {
    if (!(calibration_max > 0.0))
        throw std::runtime_error("degenerate calibration: largest training indicator is not "
                                 "positive, threshold would flag every pixel");
    if (!(percent > 0.0)) throw std::invalid_argument("threshold percent must be > 0");
    DetectionThreshold t;
    t.calibration_max = calibration_max;
    t.percent = percent;
    t.tau = percent / 100.0 * calibration_max;
    return t;
}

json DetectionThreshold::to_json() const {
    return json{{"tau", tau}, {"calibration_max", calibration_max}, {"percent", percent}};
}

DetectionThreshold DetectionThreshold::from_json(const json& j) {
    DetectionThreshold t;
    t.tau = j.at("tau").get<double>();
    t.calibration_max = j.at("calibration_max").get<double>();
    t.percent = j.at("percent").get<double>();
    return t;
}

namespace {

class GtReference final : public DepthReference {
  public:
    explicit GtReference(const Dataset& ds) : ds_(&ds) {}
    std::string kind() const override { return "gt"; }
    Grid get(const std::string& frame_id) const override { return ds_->load_depth(frame_id); }

  private:
    const Dataset* ds_;
};

class GeometryReference final : public DepthReference {
  public:
    explicit GeometryReference(const Dataset& ds) : background_(ds.background_depth()) {}
    std::string kind() const override { return "geometry"; }
    Grid get(const std::string&) const override { return background_; }

  private:
    Grid background_;
};

class FileReference final : public DepthReference {
  public:
    FileReference(fs::path dir, int h, int w) : dir_(std::move(dir)), h_(h), w_(w) {}
    std::string kind() const override { return "file"; }
    Grid get(const std::string& frame_id) const override {
        return read_grid_f32(dir_ / (frame_id + ".f32"), h_, w_);
    }

  private:
    fs::path dir_;
    int h_, w_;
};

} // namespace

std::unique_ptr<DepthReference> make_gt_reference(const Dataset& ds) {
    return std::make_unique<GtReference>(ds);
}

std::unique_ptr<DepthReference> make_geometry_reference(const Dataset& ds) {
    return std::make_unique<GeometryReference>(ds);
}

std::unique_ptr<DepthReference> make_file_reference(const fs::path& dir, int h, int w) {
    return std::make_unique<FileReference>(dir, h, w);
}

DetectionThreshold calibrate_threshold(const ModelParams& params, const Dataset& ds,
                                       const DepthReference& ref, double percent) {
    const std::vector<std::string>& ids = ds.ids("train");
    if (ids.empty()) throw std::runtime_error("calibrate_threshold: empty training split");
    double max_indicator = 0.0;
    for (const std::string& id : ids) {
        const FrameData frame = ds.load_frame(id);
        const Prediction pred = forward(params, to_tensor(frame.image));
        const IndicatorResult ind = depth_indicator(pred.depth, ref.get(id));
        max_indicator = std::max(max_indicator, ind.value.max());
    }
    return DetectionThreshold::from_max(max_indicator, percent);
}

Mask flag_above(const Grid& indicator, double tau) {
    Mask m(indicator.h, indicator.w);
    for (size_t i = 0; i < indicator.size(); ++i) m.v[i] = indicator.v[i] > tau ? 1 : 0;
    return m;
}

DetectionResult detect(const ModelParams& params, const Tensor& image, const Grid& z_ref,
                       const DetectionThreshold& threshold) {
    const Prediction pred = forward(params, image);
    IndicatorResult ind = depth_indicator(pred.depth, z_ref);
    DetectionResult r;
    r.flags = flag_above(ind.value, threshold.tau);
    r.indicator = std::move(ind.value);
    return r;
}

DepthStats fit_depth_stats(const std::vector<Grid>& maps) {
    if (maps.empty()) throw std::invalid_argument("fit_depth_stats: need at least one map");
    const Grid& first = maps.front();
    DepthStats s;
    s.z_min = first;
    s.z_max = first;
    s.z_mean = first;
    s.n_frames = static_cast<int>(maps.size());
    for (size_t k = 1; k < maps.size(); ++k) {
        if (!maps[k].same_shape(first))
            throw std::invalid_argument("fit_depth_stats: map " + std::to_string(k) +
                                        " has a different shape");
        for (size_t i = 0; i < first.size(); ++i) {
            const double v = maps[k].v[i];
            s.z_min.v[i] = std::min(s.z_min.v[i], v);
            s.z_max.v[i] = std::max(s.z_max.v[i], v);
            s.z_mean.v[i] += v;
        }
    }
    const double inv = 1.0 / s.n_frames;
    for (double& v : s.z_mean.v) v *= inv;
    return s;
}

void save_depth_stats(const fs::path& path, const DepthStats& stats) {
    std::vector<float> data;
    data.reserve(stats.z_min.size() * 3);
    for (const Grid* g : {&stats.z_min, &stats.z_max, &stats.z_mean})
        for (double v : g->v) data.push_back(static_cast<float>(v));
    write_f32(path, data);
    fs::path sidecar = path;
    sidecar += ".json";
    save_json(sidecar, json{{"height", stats.z_min.h},
                            {"width", stats.z_min.w},
                            {"n_frames", stats.n_frames},
                            {"planes", {"z_min", "z_max", "z_mean"}}});
}

DepthStats load_depth_stats(const fs::path& path) {
    fs::path sidecar = path;
    sidecar += ".json";
    const json meta = load_json(sidecar);
    const int h = meta.at("height").get<int>();
    const int w = meta.at("width").get<int>();
    const std::vector<float> data = read_f32(path);
    const size_t plane = static_cast<size_t>(h) * w;
    if (data.size() != plane * 3)
        throw std::runtime_error("depth stats size mismatch in " + path.string());
    DepthStats s;
    s.n_frames = meta.at("n_frames").get<int>();
    s.z_min = Grid(h, w);
    s.z_max = Grid(h, w);
    s.z_mean = Grid(h, w);
    for (size_t i = 0; i < plane; ++i) {
        s.z_min.v[i] = data[i];
        s.z_max.v[i] = data[plane + i];
        s.z_mean.v[i] = data[2 * plane + i];
    }
    return s;
}

Grid tamper_reference(const Grid& z, double beta, const Grid& mu_z) {
    if (!z.same_shape(mu_z)) throw std::invalid_argument("tamper_reference: shape mismatch");
    Grid t = z;
    for (size_t i = 0; i < t.size(); ++i) t.v[i] += beta * mu_z.v[i];
    return t;
}

RefTamperResult detect_reference_tampering(const Grid& candidate, const DepthStats& stats) {
    if (!candidate.same_shape(stats.z_min))
        throw std::invalid_argument("detect_reference_tampering: shape mismatch");
    RefTamperResult r;
    r.flags = Mask(candidate.h, candidate.w);
    size_t flagged = 0;
    for (size_t i = 0; i < candidate.size(); ++i) {
        const bool out = candidate.v[i] < stats.z_min.v[i] || candidate.v[i] > stats.z_max.v[i];
        r.flags.v[i] = out ? 1 : 0;
        flagged += out;
    }
    r.detection_rate = static_cast<double>(flagged) / candidate.size();
    return r;
}

} // namespace dad

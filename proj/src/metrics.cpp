#include "dad/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace dad {

double mask_iou(const Mask& pred, const Mask& gt, const Mask* roi) {
    if (!pred.same_shape(gt)) throw std::invalid_argument("mask_iou: shape mismatch");
    if (roi && !roi->same_shape(gt)) throw std::invalid_argument("mask_iou: ROI shape mismatch");
    size_t inter = 0, uni = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        if (roi && roi->v[i] == 0) continue;
        const bool p = pred.v[i] != 0, g = gt.v[i] != 0;
        inter += (p && g);
        uni += (p || g);
    }
    if (uni == 0) return 1.0; // nothing attacked, nothing flagged
    return static_cast<double>(inter) / static_cast<double>(uni);
}

double mean_iou(const std::vector<Mask>& pred, const std::vector<Mask>& gt, const Mask* roi) {
    if (pred.size() != gt.size() || pred.empty())
        throw std::invalid_argument("mean_iou: need equally sized, nonempty mask lists");
    double s = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) s += mask_iou(pred[i], gt[i], roi);
    return s / pred.size();
}

double expected_random_iou(double fraction) {
    return (fraction / 4.0) / (0.25 + fraction - fraction / 4.0);
}

CountErrors count_errors(const std::vector<double>& est_counts,
                         const std::vector<double>& gt_counts) {
    if (est_counts.size() != gt_counts.size() || est_counts.empty())
        throw std::invalid_argument("count_errors: need equally sized, nonempty count lists");
    CountErrors e;
    double sq = 0.0;
    for (size_t i = 0; i < est_counts.size(); ++i) {
        const double d = est_counts[i] - gt_counts[i];
        e.dmae += std::abs(d);
        sq += d * d;
    }
    e.dmae /= est_counts.size();
    e.rmse = std::sqrt(sq / est_counts.size());
    return e;
}

double density_count(const Grid& density) { return density.sum(); }

ZmaeResult zmae(const std::vector<Grid>& z_est, const std::vector<Grid>& z_ref,
                const std::vector<Mask>& masks) {
    if (z_est.size() != z_ref.size() || z_est.size() != masks.size() || z_est.empty())
        throw std::invalid_argument("zmae: need equally sized, nonempty lists");
    ZmaeResult r;
    double total = 0.0;
    for (size_t i = 0; i < z_est.size(); ++i) {
        if (!z_est[i].same_shape(z_ref[i]) || z_est[i].h != masks[i].h || z_est[i].w != masks[i].w)
            throw std::invalid_argument("zmae: shape mismatch at frame " + std::to_string(i));
        double s = 0.0;
        size_t m = 0;
        for (size_t j = 0; j < z_est[i].size(); ++j) {
            if (masks[i].v[j] == 0) continue;
            s += std::abs(z_est[i].v[j] - z_ref[i].v[j]);
            ++m;
        }
        if (m == 0) {
            ++r.skipped_frames;
            continue;
        }
        total += s / m;
        ++r.used_frames;
    }
    if (r.used_frames == 0) throw std::runtime_error("zmae: every frame has an empty mask");
    r.value = total / r.used_frames;
    return r;
}

json EvalReport::to_json() const {
    json frames_json = json::array();
    for (const FrameMetrics& f : frames)
        frames_json.push_back(json{{"id", f.id},
                                   {"count_gt", f.count_gt},
                                   {"count_est", f.count_est},
                                   {"iou", f.iou},
                                   {"depth_mae_masked", f.depth_mae_masked},
                                   {"mask_empty", f.mask_empty}});
    return json{{"miou", miou},        {"dmae", dmae},
                {"rmse", rmse},        {"zmae", zmae},
                {"n_frames", n_frames}, {"zmae_skipped", zmae_skipped},
                {"frames", frames_json}};
}

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

} // namespace

std::string EvalReport::to_csv() const {
    std::ostringstream ss;
    ss << "id,count_gt,count_est,iou,depth_mae_masked,mask_empty\n";
    for (const FrameMetrics& f : frames)
        ss << f.id << ',' << fmt(f.count_gt) << ',' << fmt(f.count_est) << ',' << fmt(f.iou)
           << ',' << fmt(f.depth_mae_masked) << ',' << (f.mask_empty ? 1 : 0) << '\n';
    return ss.str();
}

std::string SeriesPlot::render_svg() const {
    const int W = 640, H = 420, ml = 70, mr = 20, mt = 40, mb = 50;
    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    if (!x.empty()) {
        xmin = *std::min_element(x.begin(), x.end());
        xmax = *std::max_element(x.begin(), x.end());
    }
    bool have_y = false;
    for (const auto& [name, ys] : series)
        for (double v : ys) {
            if (!have_y) {
                ymin = ymax = v;
                have_y = true;
            } else {
                ymin = std::min(ymin, v);
                ymax = std::max(ymax, v);
            }
        }
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    const double ypad = 0.05 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;

    auto px = [&](double v) { return ml + (v - xmin) / (xmax - xmin) * (W - ml - mr); };
    auto py = [&](double v) { return H - mb - (v - ymin) / (ymax - ymin) * (H - mt - mb); };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                   "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

    std::ostringstream ss;
    ss << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
       << "\" viewBox=\"0 0 " << W << ' ' << H << "\">\n";
    ss << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    ss << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title
       << "</text>\n";
    ss << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\""
       << H - mb << "\" stroke=\"black\"/>\n";
    ss << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << H - mb
       << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double xv = xmin + (xmax - xmin) * i / 4.0;
        const double yv = ymin + (ymax - ymin) * i / 4.0;
        ss << "<text x=\"" << fmt(px(xv)) << "\" y=\"" << H - mb + 18
           << "\" text-anchor=\"middle\" font-size=\"11\">" << fmt(xv) << "</text>\n";
        ss << "<text x=\"" << ml - 8 << "\" y=\"" << fmt(py(yv) + 4)
           << "\" text-anchor=\"end\" font-size=\"11\">" << fmt(yv) << "</text>\n";
    }
    ss << "<text x=\"" << W / 2 << "\" y=\"" << H - 12
       << "\" text-anchor=\"middle\" font-size=\"12\">" << x_label << "</text>\n";
    ss << "<text x=\"16\" y=\"" << H / 2 << "\" text-anchor=\"middle\" font-size=\"12\" "
       << "transform=\"rotate(-90 16 " << H / 2 << ")\">" << y_label << "</text>\n";
    int ci = 0;
    for (const auto& [name, ys] : series) {
        const char* color = colors[ci % 8];
        ss << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (size_t i = 0; i < x.size() && i < ys.size(); ++i)
            ss << fmt(px(x[i])) << ',' << fmt(py(ys[i])) << ' ';
        ss << "\"/>\n";
        ss << "<text x=\"" << W - mr - 8 << "\" y=\"" << mt + 16 * ci + 12
           << "\" text-anchor=\"end\" font-size=\"11\" fill=\"" << color << "\">" << name
           << "</text>\n";
        ++ci;
    }
    ss << "</svg>\n";
    return ss.str();
}

} // namespace dad

#include "dad/grid.hpp"

#include <algorithm>
#include <cmath>

namespace dad {

double Grid::sum() const {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
}

double Grid::min() const { return *std::min_element(v.begin(), v.end()); }
double Grid::max() const { return *std::max_element(v.begin(), v.end()); }

size_t Mask::count() const {
    size_t n = 0;
    for (uint8_t b : v) n += (b != 0);
    return n;
}

Tensor to_tensor(const ImageU8& img) {
    Tensor t(3, img.h, img.w);
    for (int ci = 0; ci < 3; ++ci) {
        double* p = t.plane(ci);
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x) p[static_cast<size_t>(y) * img.w + x] = img.at(y, x, ci);
    }
    return t;
}

ImageU8 to_image_u8(const Tensor& t) {
    if (t.c != 3) throw std::invalid_argument("to_image_u8: expected 3 channels");
    ImageU8 img(t.h, t.w);
    for (int ci = 0; ci < 3; ++ci) {
        const double* p = t.plane(ci);
        for (int y = 0; y < t.h; ++y)
            for (int x = 0; x < t.w; ++x) {
                double v = std::llround(p[static_cast<size_t>(y) * t.w + x]);
                img.at(y, x, ci) = static_cast<uint8_t>(std::clamp(v, 0.0, 255.0));
            }
    }
    return img;
}

Grid channel_mean(const Tensor& t) {
    Grid g(t.h, t.w);
    for (int ci = 0; ci < t.c; ++ci) {
        const double* p = t.plane(ci);
        for (size_t i = 0; i < g.size(); ++i) g.v[i] += p[i];
    }
    for (double& x : g.v) x /= t.c;
    return g;
}

Grid tensor_channel(const Tensor& t, int ci) {
    Grid g(t.h, t.w);
    const double* p = t.plane(ci);
    std::copy(p, p + g.size(), g.v.begin());
    return g;
}

} // namespace dad

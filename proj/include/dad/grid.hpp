#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace dad {

/// Dense row-major H x W map of doubles (density, depth, indicator values...).
struct Grid {
    int h = 0;
    int w = 0;
    std::vector<double> v;

    Grid() = default;
    Grid(int h_, int w_, double fill = 0.0) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, fill) {
        if (h_ <= 0 || w_ <= 0) throw std::invalid_argument("Grid: dimensions must be positive");
    }

    double& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
    double at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
    size_t size() const { return v.size(); }
    bool same_shape(const Grid& o) const { return h == o.h && w == o.w; }

    double sum() const;
    double min() const;
    double max() const;
};

/// Per-pixel boolean map (tamper masks, ROIs). 0 = false, 1 = true.
struct Mask {
    int h = 0;
    int w = 0;
    std::vector<uint8_t> v;

    Mask() = default;
    Mask(int h_, int w_, bool fill = false)
        : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, fill ? 1 : 0) {
        if (h_ <= 0 || w_ <= 0) throw std::invalid_argument("Mask: dimensions must be positive");
    }

    uint8_t& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
    bool at(int y, int x) const { return v[static_cast<size_t>(y) * w + x] != 0; }
    size_t size() const { return v.size(); }
    bool same_shape(const Mask& o) const { return h == o.h && w == o.w; }

    size_t count() const;
    bool any() const { return count() > 0; }
};

/// Channel-planar C x H x W tensor of doubles. Images on the 0..255 scale,
/// network activations and input gradients all use this layout.
struct Tensor {
    int c = 0;
    int h = 0;
    int w = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int c_, int h_, int w_, double fill = 0.0)
        : c(c_), h(h_), w(w_), v(static_cast<size_t>(c_) * h_ * w_, fill) {
        if (c_ <= 0 || h_ <= 0 || w_ <= 0)
            throw std::invalid_argument("Tensor: dimensions must be positive");
    }

    double* plane(int ci) { return v.data() + static_cast<size_t>(ci) * h * w; }
    const double* plane(int ci) const { return v.data() + static_cast<size_t>(ci) * h * w; }
    double& at(int ci, int y, int x) { return v[(static_cast<size_t>(ci) * h + y) * w + x]; }
    double at(int ci, int y, int x) const { return v[(static_cast<size_t>(ci) * h + y) * w + x]; }
    size_t size() const { return v.size(); }
    bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }
};

/// Interleaved 8-bit RGB image as stored in PNG files.
struct ImageU8 {
    int h = 0;
    int w = 0;
    std::vector<uint8_t> rgb; // h*w*3, row-major, interleaved

    ImageU8() = default;
    ImageU8(int h_, int w_, uint8_t fill = 0)
        : h(h_), w(w_), rgb(static_cast<size_t>(h_) * w_ * 3, fill) {}

    uint8_t& at(int y, int x, int ch) { return rgb[(static_cast<size_t>(y) * w + x) * 3 + ch]; }
    uint8_t at(int y, int x, int ch) const { return rgb[(static_cast<size_t>(y) * w + x) * 3 + ch]; }
};

Tensor to_tensor(const ImageU8& img);          // exact widening, 0..255 values
ImageU8 to_image_u8(const Tensor& t);          // rounds and clamps to [0,255]
Grid channel_mean(const Tensor& t);

/// Extract grid as single-channel tensor view copies.
Grid tensor_channel(const Tensor& t, int ci);

} // namespace dad

#include "dad/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "dad/parallel.hpp"
#include "dad/rng.hpp"

namespace dad {

std::string act_name(Act a) {
    switch (a) {
        case Act::Identity: return "identity";
        case Act::Relu: return "relu";
        case Act::LeakyRelu: return "leaky_relu";
        case Act::Abs: return "abs";
    }
    throw std::logic_error("act_name: bad enum");
}

Act act_from_name(const std::string& name) {
    if (name == "identity") return Act::Identity;
    if (name == "relu") return Act::Relu;
    if (name == "leaky_relu") return Act::LeakyRelu;
    if (name == "abs") return Act::Abs;
    throw std::invalid_argument("unknown activation: " + name);
}

namespace {

constexpr double kLeakySlope = 0.1;

inline double act_fwd(Act a, double x) {
    switch (a) {
        case Act::Identity: return x;
        case Act::Relu: return x > 0.0 ? x : 0.0;
        case Act::LeakyRelu: return x > 0.0 ? x : kLeakySlope * x;
        case Act::Abs: return x >= 0.0 ? x : -x;
    }
    return x;
}

inline double act_grad(Act a, double pre) {
    switch (a) {
        case Act::Identity: return 1.0;
        case Act::Relu: return pre > 0.0 ? 1.0 : 0.0;
        case Act::LeakyRelu: return pre > 0.0 ? 1.0 : kLeakySlope;
        case Act::Abs: return pre > 0.0 ? 1.0 : (pre < 0.0 ? -1.0 : 0.0);
    }
    return 1.0;
}

} // namespace

bool operator==(const ConvSpec& a, const ConvSpec& b) {
    return a.out_ch == b.out_ch && a.k == b.k && a.act == b.act && a.pool == b.pool &&
           a.upsample == b.upsample;
}

ArchDescriptor ArchDescriptor::reference() {
    ArchDescriptor arch;
    arch.encoder = {{16, 3, Act::LeakyRelu, true, false},
                    {32, 3, Act::LeakyRelu, true, false},
                    {64, 3, Act::LeakyRelu, true, false}};
    arch.decoder = {{32, 3, Act::LeakyRelu, false, true},
                    {16, 3, Act::LeakyRelu, false, true},
                    {8, 3, Act::LeakyRelu, false, true}};
    arch.density_head = {1, 3, Act::Abs, false, false};
    arch.depth_head = {1, 3, Act::Identity, false, false};
    arch.depth_input_gain = 10.0;
    return arch;
}

int ArchDescriptor::downsample_factor() const {
    int f = 1;
    for (const ConvSpec& b : encoder)
        if (b.pool) f *= 2;
    return f;
}

void ArchDescriptor::validate() const {
    if (input_channels <= 0) throw std::invalid_argument("arch: input_channels must be positive");
    if (!(input_scale > 0.0)) throw std::invalid_argument("arch: input_scale must be positive");
    if (!(depth_input_gain > 0.0))
        throw std::invalid_argument("arch: depth_input_gain must be positive");
    int ups = 0;
    auto check_block = [](const ConvSpec& b, const char* where) {
        if (b.out_ch <= 0) throw std::invalid_argument(std::string("arch: non-positive width in ") + where);
        if (b.k != 1 && b.k != 3)
            throw std::invalid_argument(std::string("arch: kernel size must be 1 or 3 in ") + where);
    };
    if (encoder.empty()) throw std::invalid_argument("arch: encoder must have at least one block");
    for (const ConvSpec& b : encoder) {
        check_block(b, "encoder");
        if (b.upsample) throw std::invalid_argument("arch: encoder blocks cannot upsample");
    }
    for (const ConvSpec& b : decoder) {
        check_block(b, "decoder");
        if (b.pool) throw std::invalid_argument("arch: decoder blocks cannot pool");
        if (b.upsample) ++ups;
    }
    int pools = 0;
    for (const ConvSpec& b : encoder) pools += b.pool ? 1 : 0;
    if (pools != ups)
        throw std::invalid_argument("arch: encoder pools and decoder upsamples must match");
    check_block(density_head, "density head");
    check_block(depth_head, "depth head");
    if (density_head.out_ch != 1 || depth_head.out_ch != 1)
        throw std::invalid_argument("arch: heads must emit one channel");
    if (density_head.pool || density_head.upsample || depth_head.pool || depth_head.upsample)
        throw std::invalid_argument("arch: heads cannot resample");
}

namespace {

json block_to_json(const ConvSpec& b) {
    return json{{"out", b.out_ch}, {"k", b.k}, {"act", act_name(b.act)},
                {"pool", b.pool}, {"up", b.upsample}};
}

ConvSpec block_from_json(const json& j) {
    ConvSpec b;
    b.out_ch = j.at("out").get<int>();
    b.k = j.at("k").get<int>();
    b.act = act_from_name(j.at("act").get<std::string>());
    b.pool = j.at("pool").get<bool>();
    b.upsample = j.at("up").get<bool>();
    return b;
}

} // namespace

json ArchDescriptor::to_json() const {
    json enc = json::array(), dec = json::array();
    for (const ConvSpec& b : encoder) enc.push_back(block_to_json(b));
    for (const ConvSpec& b : decoder) dec.push_back(block_to_json(b));
    return json{{"input_channels", input_channels},
                {"input_scale", input_scale},
                {"depth_input_gain", depth_input_gain},
                {"encoder", enc},
                {"decoder", dec},
                {"density_head", block_to_json(density_head)},
                {"depth_head", block_to_json(depth_head)}};
}

ArchDescriptor ArchDescriptor::from_json(const json& j) {
    ArchDescriptor a;
    a.input_channels = j.at("input_channels").get<int>();
    a.input_scale = j.at("input_scale").get<double>();
    a.depth_input_gain = j.value("depth_input_gain", 1.0);
    a.encoder.clear();
    a.decoder.clear();
    for (const auto& b : j.at("encoder")) a.encoder.push_back(block_from_json(b));
    for (const auto& b : j.at("decoder")) a.decoder.push_back(block_from_json(b));
    a.density_head = block_from_json(j.at("density_head"));
    a.depth_head = block_from_json(j.at("depth_head"));
    a.validate();
    return a;
}

size_t ModelParams::weight_count() const {
    size_t n = 0;
    for (const auto* stream : {&encoder, &density_decoder, &depth_decoder})
        for (const ConvLayer& l : *stream) n += l.weight_count();
    return n;
}

namespace {

ConvLayer make_layer(const ConvSpec& spec, int in_ch, Rng& rng, double scale = 1.0) {
    ConvLayer l;
    l.spec = spec;
    l.in_ch = in_ch;
    l.w.resize(static_cast<size_t>(spec.out_ch) * in_ch * spec.k * spec.k);
    l.b.assign(spec.out_ch, 0.0f);
    const double limit = scale * std::sqrt(6.0 / (static_cast<double>(in_ch) * spec.k * spec.k));
    for (float& w : l.w) w = static_cast<float>(rng.uniform(-limit, limit));
    return l;
}

/// Backprop through a stack of He-limit layers has gain > 1, and with the
/// un-normalized per-pixel loss that makes plain SGD blow up at any learning
/// rate large enough to converge. Layers start at a fraction of the He limit
/// and heads start near zero (near the target scale), which keeps the first
/// epochs well inside the stable region.
constexpr double kInitGain = 0.6;

std::vector<ConvLayer> make_stream(const std::vector<ConvSpec>& blocks, const ConvSpec& head,
                                   int in_ch, Rng& rng, double head_scale, double head_bias) {
    std::vector<ConvLayer> layers;
    for (const ConvSpec& b : blocks) {
        layers.push_back(make_layer(b, in_ch, rng, kInitGain));
        in_ch = b.out_ch;
    }
    layers.push_back(make_layer(head, in_ch, rng, head_scale));
    layers.back().b.assign(layers.back().b.size(), static_cast<float>(head_bias));
    return layers;
}

} // namespace

ModelParams ModelParams::init(const ArchDescriptor& arch, uint64_t seed) {
    arch.validate();
    ModelParams p;
    p.arch = arch;
    p.seed = seed;
    Rng enc_rng(mix_seed(seed, "encoder"));
    int ch = arch.input_channels;
    for (const ConvSpec& b : arch.encoder) {
        p.encoder.push_back(make_layer(b, ch, enc_rng, kInitGain));
        ch = b.out_ch;
    }
    Rng d_rng(mix_seed(seed, "density-decoder"));
    p.density_decoder = make_stream(arch.decoder, arch.density_head, ch, d_rng, 0.3, 0.0);
    Rng z_rng(mix_seed(seed, "depth-decoder"));
    // the depth head starts at the scene's typical normalized depth; its
    // weights compensate the depth_input_gain so the initial output is tame
    p.depth_decoder = make_stream(arch.decoder, arch.depth_head, ch, z_rng,
                                  0.1 / arch.depth_input_gain, 0.6);
    return p;
}

// --- primitive ops ---

namespace {

/// dst += 3x3 "same" convolution of src with w (row-major 3x3 taps),
/// single pass over the plane so the inner loops vectorize.
void conv3_acc(double* __restrict__ dst, const double* __restrict__ src, const double* w, int H,
               int W) {
    auto edge_pixel = [&](int y, int x) {
        double acc = 0.0;
        for (int ky = 0; ky < 3; ++ky) {
            const int yy = y + ky - 1;
            if (yy < 0 || yy >= H) continue;
            for (int kx = 0; kx < 3; ++kx) {
                const int xx = x + kx - 1;
                if (xx < 0 || xx >= W) continue;
                acc += w[ky * 3 + kx] * src[static_cast<size_t>(yy) * W + xx];
            }
        }
        return acc;
    };
    for (int y = 0; y < H; ++y) {
        double* orow = dst + static_cast<size_t>(y) * W;
        orow[0] += edge_pixel(y, 0);
        if (W > 1) orow[W - 1] += edge_pixel(y, W - 1);
        if (W <= 2) continue;
        const double* r1 = src + static_cast<size_t>(y) * W;
        if (y > 0 && y < H - 1) {
            const double* r0 = r1 - W;
            const double* r2 = r1 + W;
            for (int x = 1; x < W - 1; ++x)
                orow[x] += w[0] * r0[x - 1] + w[1] * r0[x] + w[2] * r0[x + 1] +
                           w[3] * r1[x - 1] + w[4] * r1[x] + w[5] * r1[x + 1] +
                           w[6] * r2[x - 1] + w[7] * r2[x] + w[8] * r2[x + 1];
        } else if (y == 0 && H > 1) {
            const double* r2 = r1 + W;
            for (int x = 1; x < W - 1; ++x)
                orow[x] += w[3] * r1[x - 1] + w[4] * r1[x] + w[5] * r1[x + 1] +
                           w[6] * r2[x - 1] + w[7] * r2[x] + w[8] * r2[x + 1];
        } else if (y == H - 1 && H > 1) {
            const double* r0 = r1 - W;
            for (int x = 1; x < W - 1; ++x)
                orow[x] += w[0] * r0[x - 1] + w[1] * r0[x] + w[2] * r0[x + 1] +
                           w[3] * r1[x - 1] + w[4] * r1[x] + w[5] * r1[x + 1];
        } else { // H == 1
            for (int x = 1; x < W - 1; ++x)
                orow[x] += w[3] * r1[x - 1] + w[4] * r1[x] + w[5] * r1[x + 1];
        }
    }
}

/// All nine 3x3 weight-gradient taps in one pass:
/// dw[ky*3+kx] += sum over valid (y, x) of in[y+ky-1][x+kx-1] * d_out[y][x].
/// Nine independent accumulator chains keep the FMA units busy without
/// reassociating any individual sum.
void conv3_weight_grads(const double* in, const double* d_out, int H, int W, double* dw) {
    auto edge_taps = [&](int y, int x) {
        const double g = d_out[static_cast<size_t>(y) * W + x];
        for (int ky = 0; ky < 3; ++ky) {
            const int yy = y + ky - 1;
            if (yy < 0 || yy >= H) continue;
            for (int kx = 0; kx < 3; ++kx) {
                const int xx = x + kx - 1;
                if (xx < 0 || xx >= W) continue;
                dw[ky * 3 + kx] += in[static_cast<size_t>(yy) * W + xx] * g;
            }
        }
    };
    double a0 = 0, a1 = 0, a2 = 0, a3 = 0, a4 = 0, a5 = 0, a6 = 0, a7 = 0, a8 = 0;
    for (int y = 0; y < H; ++y) {
        edge_taps(y, 0);
        if (W > 1) edge_taps(y, W - 1);
        if (W <= 2 || y == 0 || y == H - 1) {
            if (y == 0 || y == H - 1)
                for (int x = 1; x < W - 1; ++x) edge_taps(y, x);
            continue;
        }
        const double* r1 = in + static_cast<size_t>(y) * W;
        const double* r0 = r1 - W;
        const double* r2 = r1 + W;
        const double* drow = d_out + static_cast<size_t>(y) * W;
        for (int x = 1; x < W - 1; ++x) {
            const double g = drow[x];
            a0 += r0[x - 1] * g;
            a1 += r0[x] * g;
            a2 += r0[x + 1] * g;
            a3 += r1[x - 1] * g;
            a4 += r1[x] * g;
            a5 += r1[x + 1] * g;
            a6 += r2[x - 1] * g;
            a7 += r2[x] * g;
            a8 += r2[x + 1] * g;
        }
    }
    dw[0] += a0;
    dw[1] += a1;
    dw[2] += a2;
    dw[3] += a3;
    dw[4] += a4;
    dw[5] += a5;
    dw[6] += a6;
    dw[7] += a7;
    dw[8] += a8;
}

void conv_forward(const ConvLayer& l, const Tensor& in, Tensor& out) {
    const int H = in.h, W = in.w;
    out = Tensor(l.spec.out_ch, H, W);
    const int k = l.spec.k;
    const size_t hw = static_cast<size_t>(H) * W;
    for (int oc = 0; oc < l.spec.out_ch; ++oc) {
        double* op = out.plane(oc);
        const double bias = l.b[oc];
        for (size_t i = 0; i < hw; ++i) op[i] = bias;
        for (int ic = 0; ic < l.in_ch; ++ic) {
            const double* ip = in.plane(ic);
            const float* wp = l.w.data() + (static_cast<size_t>(oc) * l.in_ch + ic) * k * k;
            if (k == 3) {
                const double w9[9] = {wp[0], wp[1], wp[2], wp[3], wp[4],
                                      wp[5], wp[6], wp[7], wp[8]};
                conv3_acc(op, ip, w9, H, W);
            } else {
                const double wv = wp[0];
                for (size_t i = 0; i < hw; ++i) op[i] += wv * ip[i];
            }
        }
    }
}

struct LayerGrads {
    std::vector<double> w, b;
};

/// dOut -> dIn (optional) and parameter gradients (optional).
void conv_backward(const ConvLayer& l, const Tensor& in, const Tensor& d_out, Tensor* d_in,
                   LayerGrads* grads) {
    const int H = in.h, W = in.w;
    const int k = l.spec.k;
    const size_t hw = static_cast<size_t>(H) * W;
    if (d_in) *d_in = Tensor(l.in_ch, H, W);
    for (int oc = 0; oc < l.spec.out_ch; ++oc) {
        const double* dop = d_out.plane(oc);
        if (grads) {
            double s = 0.0;
            for (size_t i = 0; i < hw; ++i) s += dop[i];
            grads->b[oc] += s;
        }
        for (int ic = 0; ic < l.in_ch; ++ic) {
            const size_t wbase = (static_cast<size_t>(oc) * l.in_ch + ic) * k * k;
            if (k == 3) {
                if (d_in) {
                    // dIn = dOut convolved with the kernel flipped in both axes.
                    const double wf[9] = {l.w[wbase + 8], l.w[wbase + 7], l.w[wbase + 6],
                                          l.w[wbase + 5], l.w[wbase + 4], l.w[wbase + 3],
                                          l.w[wbase + 2], l.w[wbase + 1], l.w[wbase + 0]};
                    conv3_acc(d_in->plane(ic), dop, wf, H, W);
                }
                if (grads) conv3_weight_grads(in.plane(ic), dop, H, W, &grads->w[wbase]);
            } else {
                const double wv = l.w[wbase];
                if (d_in) {
                    double* dip = d_in->plane(ic);
                    for (size_t i = 0; i < hw; ++i) dip[i] += wv * dop[i];
                }
                if (grads) {
                    const double* ip = in.plane(ic);
                    double acc = 0.0;
                    for (size_t i = 0; i < hw; ++i) acc += ip[i] * dop[i];
                    grads->w[wbase] += acc;
                }
            }
        }
    }
}

Tensor avgpool2_forward(const Tensor& in) {
    if (in.h % 2 != 0 || in.w % 2 != 0)
        throw std::invalid_argument("avgpool: spatial dims must be even");
    Tensor out(in.c, in.h / 2, in.w / 2);
    for (int c = 0; c < in.c; ++c) {
        const double* ip = in.plane(c);
        double* op = out.plane(c);
        for (int y = 0; y < out.h; ++y)
            for (int x = 0; x < out.w; ++x) {
                const size_t base = static_cast<size_t>(2 * y) * in.w + 2 * x;
                op[static_cast<size_t>(y) * out.w + x] =
                    0.25 * (ip[base] + ip[base + 1] + ip[base + in.w] + ip[base + in.w + 1]);
            }
    }
    return out;
}

Tensor avgpool2_backward(const Tensor& d_out, int in_h, int in_w) {
    Tensor d_in(d_out.c, in_h, in_w);
    for (int c = 0; c < d_out.c; ++c) {
        const double* dop = d_out.plane(c);
        double* dip = d_in.plane(c);
        for (int y = 0; y < d_out.h; ++y)
            for (int x = 0; x < d_out.w; ++x) {
                const double g = 0.25 * dop[static_cast<size_t>(y) * d_out.w + x];
                const size_t base = static_cast<size_t>(2 * y) * in_w + 2 * x;
                dip[base] += g;
                dip[base + 1] += g;
                dip[base + in_w] += g;
                dip[base + in_w + 1] += g;
            }
    }
    return d_in;
}

Tensor upsample2_forward(const Tensor& in) {
    Tensor out(in.c, in.h * 2, in.w * 2);
    for (int c = 0; c < in.c; ++c) {
        const double* ip = in.plane(c);
        double* op = out.plane(c);
        for (int y = 0; y < out.h; ++y) {
            const double* srow = ip + static_cast<size_t>(y / 2) * in.w;
            double* drow = op + static_cast<size_t>(y) * out.w;
            for (int x = 0; x < out.w; ++x) drow[x] = srow[x / 2];
        }
    }
    return out;
}

Tensor upsample2_backward(const Tensor& d_out) {
    Tensor d_in(d_out.c, d_out.h / 2, d_out.w / 2);
    for (int c = 0; c < d_out.c; ++c) {
        const double* dop = d_out.plane(c);
        double* dip = d_in.plane(c);
        for (int y = 0; y < d_out.h; ++y) {
            const double* srow = dop + static_cast<size_t>(y) * d_out.w;
            double* drow = dip + static_cast<size_t>(y / 2) * d_in.w;
            for (int x = 0; x < d_out.w; ++x) drow[x / 2] += srow[x];
        }
    }
    return d_in;
}

struct LayerTrace {
    Tensor conv_in; // input handed to the convolution (after any upsample)
    Tensor pre;     // pre-activation output
};

struct StreamResult {
    std::vector<LayerTrace> layers;
    Tensor out;
};

StreamResult run_stream(const std::vector<ConvLayer>& layers, Tensor x, bool keep_trace) {
    StreamResult r;
    for (const ConvLayer& l : layers) {
        if (l.spec.upsample) x = upsample2_forward(x);
        Tensor pre;
        conv_forward(l, x, pre);
        LayerTrace t;
        if (keep_trace) t.conv_in = x;
        Tensor post(pre.c, pre.h, pre.w);
        for (size_t i = 0; i < pre.v.size(); ++i) post.v[i] = act_fwd(l.spec.act, pre.v[i]);
        if (keep_trace) t.pre = std::move(pre);
        if (l.spec.pool) post = avgpool2_forward(post);
        if (keep_trace) r.layers.push_back(std::move(t));
        x = std::move(post);
    }
    r.out = std::move(x);
    return r;
}

/// Walks a stream backwards from d(out) to d(stream input).
Tensor stream_backward(const std::vector<ConvLayer>& layers, const std::vector<LayerTrace>& trace,
                       Tensor d_out, std::vector<LayerGrads>* grads, bool need_input_grad) {
    Tensor d = std::move(d_out);
    for (int i = static_cast<int>(layers.size()) - 1; i >= 0; --i) {
        const ConvLayer& l = layers[i];
        const LayerTrace& t = trace[i];
        if (l.spec.pool) d = avgpool2_backward(d, t.pre.h, t.pre.w);
        for (size_t j = 0; j < d.v.size(); ++j) d.v[j] *= act_grad(l.spec.act, t.pre.v[j]);
        Tensor d_in;
        const bool want_din = need_input_grad || i > 0;
        conv_backward(l, t.conv_in, d, want_din ? &d_in : nullptr,
                      grads ? &(*grads)[i] : nullptr);
        if (!want_din) return Tensor();
        if (l.spec.upsample) d_in = upsample2_backward(d_in);
        d = std::move(d_in);
    }
    return d;
}

struct ForwardTrace {
    Tensor x0; // scaled input
    std::vector<LayerTrace> enc;
    Tensor features;
    std::vector<LayerTrace> dec_d, dec_z;
    Grid density, depth;
};

void check_input(const ModelParams& params, const Tensor& image) {
    if (image.c != params.arch.input_channels)
        throw std::invalid_argument("forward: expected " +
                                    std::to_string(params.arch.input_channels) +
                                    " channels, got " + std::to_string(image.c));
    const int f = params.arch.downsample_factor();
    if (image.h % f != 0 || image.w % f != 0)
        throw std::invalid_argument("forward: spatial dims must be divisible by " +
                                    std::to_string(f));
}

Grid to_grid(const Tensor& t) {
    Grid g(t.h, t.w);
    std::copy(t.v.begin(), t.v.end(), g.v.begin());
    return g;
}

ForwardTrace forward_cached(const ModelParams& params, const Tensor& image, bool keep_trace,
                            const Tensor* feature_mask = nullptr) {
    check_input(params, image);
    ForwardTrace tr;
    Tensor x0 = image;
    const double inv = 1.0 / params.arch.input_scale;
    for (double& v : x0.v) v *= inv;
    if (keep_trace) tr.x0 = x0;

    StreamResult enc = run_stream(params.encoder, std::move(x0), keep_trace);
    if (feature_mask) {
        if (!enc.out.same_shape(*feature_mask))
            throw std::invalid_argument("feature mask shape mismatch");
        for (size_t i = 0; i < enc.out.v.size(); ++i) enc.out.v[i] *= feature_mask->v[i];
    }
    if (keep_trace) {
        tr.enc = std::move(enc.layers);
        tr.features = enc.out;
    }
    StreamResult dd = run_stream(params.density_decoder, enc.out, keep_trace);
    if (params.arch.depth_input_gain != 1.0)
        for (double& v : enc.out.v) v *= params.arch.depth_input_gain;
    StreamResult dz = run_stream(params.depth_decoder, std::move(enc.out), keep_trace);
    if (keep_trace) {
        tr.dec_d = std::move(dd.layers);
        tr.dec_z = std::move(dz.layers);
    }
    tr.density = to_grid(dd.out);
    tr.depth = to_grid(dz.out);
    return tr;
}

} // namespace

Prediction forward(const ModelParams& params, const Tensor& image) {
    ForwardTrace tr = forward_cached(params, image, false);
    return {std::move(tr.density), std::move(tr.depth)};
}

Prediction forward_feature_dropout(const ModelParams& params, const Tensor& image,
                                   double drop_rate, uint64_t seed) {
    if (drop_rate < 0.0 || drop_rate >= 1.0)
        throw std::invalid_argument("drop_rate must be in [0, 1)");
    check_input(params, image);
    const int f = params.arch.downsample_factor();
    const int fh = image.h / f, fw = image.w / f;
    const int fc = params.arch.encoder.back().out_ch;
    Tensor mask(fc, fh, fw, 1.0);
    if (drop_rate > 0.0) {
        Rng rng(seed);
        const double keep = 1.0 - drop_rate;
        for (double& v : mask.v) v = rng.uniform() < drop_rate ? 0.0 : 1.0 / keep;
    }
    ForwardTrace tr = forward_cached(params, image, false, &mask);
    return {std::move(tr.density), std::move(tr.depth)};
}

LossParts loss_parts(const Prediction& pred, const Grid& density_gt, const Grid& depth_gt) {
    if (!pred.density.same_shape(density_gt) || !pred.depth.same_shape(depth_gt))
        throw std::invalid_argument("loss: shape mismatch");
    LossParts parts;
    for (size_t i = 0; i < density_gt.size(); ++i) {
        const double e = density_gt.v[i] - pred.density.v[i];
        parts.density += e * e;
    }
    for (size_t i = 0; i < depth_gt.size(); ++i) {
        const double e = depth_gt.v[i] - pred.depth.v[i];
        parts.depth += e * e;
    }
    parts.density *= 0.5;
    parts.depth *= 0.5;
    return parts;
}

namespace {

std::vector<LayerGrads> grads_like(const std::vector<ConvLayer>& ls) {
    std::vector<LayerGrads> out(ls.size());
    for (size_t i = 0; i < ls.size(); ++i) {
        out[i].w.assign(ls[i].w.size(), 0.0);
        out[i].b.assign(ls[i].b.size(), 0.0);
    }
    return out;
}

struct FullGrads {
    std::vector<LayerGrads> encoder, dec_d, dec_z;
};

FullGrads full_grads_like(const ModelParams& p) {
    return {grads_like(p.encoder), grads_like(p.density_decoder), grads_like(p.depth_decoder)};
}

void accumulate(std::vector<LayerGrads>& into, const std::vector<LayerGrads>& from) {
    for (size_t i = 0; i < into.size(); ++i) {
        for (size_t j = 0; j < into[i].w.size(); ++j) into[i].w[j] += from[i].w[j];
        for (size_t j = 0; j < into[i].b.size(); ++j) into[i].b[j] += from[i].b[j];
    }
}

/// Backward pass from head residuals. d_density/d_depth are dL/d(head output).
/// Returns dL/d(image) when requested.
Tensor backward_pass(const ModelParams& params, const ForwardTrace& tr, const Grid& d_density,
                     const Grid* d_depth, FullGrads* grads, bool need_input_grad) {
    Tensor seed_d(1, d_density.h, d_density.w);
    std::copy(d_density.v.begin(), d_density.v.end(), seed_d.v.begin());
    Tensor d_feat = stream_backward(params.density_decoder, tr.dec_d, std::move(seed_d),
                                    grads ? &grads->dec_d : nullptr, true);
    if (d_depth) {
        Tensor seed_z(1, d_depth->h, d_depth->w);
        std::copy(d_depth->v.begin(), d_depth->v.end(), seed_z.v.begin());
        Tensor d_feat_z = stream_backward(params.depth_decoder, tr.dec_z, std::move(seed_z),
                                          grads ? &grads->dec_z : nullptr, true);
        const double gain = params.arch.depth_input_gain;
        for (size_t i = 0; i < d_feat.v.size(); ++i) d_feat.v[i] += gain * d_feat_z.v[i];
    }
    Tensor d_input = stream_backward(params.encoder, tr.enc, std::move(d_feat),
                                     grads ? &grads->encoder : nullptr, need_input_grad);
    if (!need_input_grad) return Tensor();
    const double inv = 1.0 / params.arch.input_scale;
    for (double& v : d_input.v) v *= inv;
    return d_input;
}

void check_loss_spec(const ModelParams& params, const LossSpec& spec) {
    if (!spec.density_ref) throw std::invalid_argument("LossSpec: density_ref is required");
    if (spec.depth_weight != 0.0 && !spec.depth_ref)
        throw std::invalid_argument("LossSpec: depth_ref required when depth_weight != 0");
    (void)params;
}

} // namespace

Tensor input_gradient_with_loss(const ModelParams& params, const Tensor& image,
                                const LossSpec& spec, double* loss_out) {
    check_loss_spec(params, spec);
    ForwardTrace tr = forward_cached(params, image, true);
    if (!tr.density.same_shape(*spec.density_ref))
        throw std::invalid_argument("input_gradient: density_ref shape mismatch");
    Grid d_density(tr.density.h, tr.density.w);
    double loss = 0.0;
    for (size_t i = 0; i < d_density.size(); ++i) {
        const double e = tr.density.v[i] - spec.density_ref->v[i];
        d_density.v[i] = e;
        loss += 0.5 * e * e;
    }
    Grid d_depth;
    const bool use_depth = spec.depth_weight != 0.0;
    if (use_depth) {
        if (!tr.depth.same_shape(*spec.depth_ref))
            throw std::invalid_argument("input_gradient: depth_ref shape mismatch");
        d_depth = Grid(tr.depth.h, tr.depth.w);
        double lz = 0.0;
        for (size_t i = 0; i < d_depth.size(); ++i) {
            const double e = tr.depth.v[i] - spec.depth_ref->v[i];
            d_depth.v[i] = spec.depth_weight * e;
            lz += 0.5 * e * e;
        }
        loss += spec.depth_weight * lz;
    }
    if (loss_out) *loss_out = loss;
    return backward_pass(params, tr, d_density, use_depth ? &d_depth : nullptr, nullptr, true);
}

Tensor input_gradient(const ModelParams& params, const Tensor& image, const LossSpec& spec) {
    return input_gradient_with_loss(params, image, spec, nullptr);
}

double loss_value(const ModelParams& params, const Tensor& image, const LossSpec& spec) {
    check_loss_spec(params, spec);
    const Prediction pred = forward(params, image);
    double loss = 0.0;
    for (size_t i = 0; i < pred.density.size(); ++i) {
        const double e = pred.density.v[i] - spec.density_ref->v[i];
        loss += 0.5 * e * e;
    }
    if (spec.depth_weight != 0.0) {
        double lz = 0.0;
        for (size_t i = 0; i < pred.depth.size(); ++i) {
            const double e = pred.depth.v[i] - spec.depth_ref->v[i];
            lz += 0.5 * e * e;
        }
        loss += spec.depth_weight * lz;
    }
    return loss;
}

void TrainConfig::validate() const {
    if (lambda < 0.0) throw std::invalid_argument("TrainConfig: lambda must be >= 0");
    if (batch < 1) throw std::invalid_argument("TrainConfig: batch must be >= 1");
    if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be >= 0");
    if (!(learning_rate >= 0.0)) throw std::invalid_argument("TrainConfig: bad learning rate");
}

namespace {

struct SampleWork {
    LossParts parts;
    FullGrads grads;
};

void apply_update(std::vector<ConvLayer>& layers, const std::vector<LayerGrads>& grads,
                  double step) {
    for (size_t i = 0; i < layers.size(); ++i) {
        ConvLayer& l = layers[i];
        for (size_t j = 0; j < l.w.size(); ++j)
            l.w[j] = static_cast<float>(static_cast<double>(l.w[j]) - step * grads[i].w[j]);
        for (size_t j = 0; j < l.b.size(); ++j)
            l.b[j] = static_cast<float>(static_cast<double>(l.b[j]) - step * grads[i].b[j]);
    }
}

} // namespace

TrainResult train(const std::vector<TrainingSample>& data, const TrainConfig& cfg) {
    cfg.validate();
    if (data.empty()) throw std::invalid_argument("train: empty training set");
    TrainResult result;
    result.params = ModelParams::init(ArchDescriptor::reference(), cfg.seed);
    result.params.lambda_train = cfg.lambda;
    ModelParams& params = result.params;

    const int n = static_cast<int>(data.size());
    const int threads = worker_count();
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(mix_seed(mix_seed(cfg.seed, "shuffle"), epoch));
        for (int i = n - 1; i > 0; --i)
            std::swap(order[i], order[shuffle_rng.below(static_cast<uint64_t>(i) + 1)]);

        EpochLog log;
        int seen = 0;
        for (int start = 0; start < n; start += cfg.batch) {
            const int bsz = std::min(cfg.batch, n - start);
            std::vector<SampleWork> work(bsz);
            parallel_for(bsz, threads, [&](int i) {
                const TrainingSample& s = data[order[start + i]];
                ForwardTrace tr = forward_cached(params, s.image, true);
                work[i].parts = loss_parts({tr.density, tr.depth}, s.density_gt, s.depth_gt);
                Grid d_density(tr.density.h, tr.density.w);
                for (size_t j = 0; j < d_density.size(); ++j)
                    d_density.v[j] = tr.density.v[j] - s.density_gt.v[j];
                Grid d_depth;
                const bool use_depth = cfg.lambda != 0.0;
                if (use_depth) {
                    d_depth = Grid(tr.depth.h, tr.depth.w);
                    for (size_t j = 0; j < d_depth.size(); ++j)
                        d_depth.v[j] = cfg.lambda * (tr.depth.v[j] - s.depth_gt.v[j]);
                }
                work[i].grads = full_grads_like(params);
                backward_pass(params, tr, d_density, use_depth ? &d_depth : nullptr,
                              &work[i].grads, false);
            });

            FullGrads total = full_grads_like(params);
            for (const SampleWork& wk : work) {
                accumulate(total.encoder, wk.grads.encoder);
                accumulate(total.dec_d, wk.grads.dec_d);
                accumulate(total.dec_z, wk.grads.dec_z);
                log.loss_density += wk.parts.density;
                log.loss_depth += wk.parts.depth;
            }
            seen += bsz;
            const double step = cfg.learning_rate / bsz;
            apply_update(params.encoder, total.encoder, step);
            apply_update(params.density_decoder, total.dec_d, step);
            apply_update(params.depth_decoder, total.dec_z, step);
        }
        log.loss_density /= seen;
        log.loss_depth /= seen;
        log.loss_total = log.loss_density + cfg.lambda * log.loss_depth;
        if (!std::isfinite(log.loss_total))
            throw std::runtime_error("train: loss diverged at epoch " + std::to_string(epoch) +
                                     " (L_d=" + std::to_string(log.loss_density) +
                                     ", L_z=" + std::to_string(log.loss_depth) + ")");
        result.log.push_back(log);
    }
    return result;
}

// --- serialization ---

namespace {

constexpr char kMagic[8] = {'D', 'A', 'D', 'M', 'O', 'D', 'E', 'L'};
constexpr uint32_t kFormatVersion = 1;

void append_stream(std::vector<float>& payload, const std::vector<ConvLayer>& layers) {
    for (const ConvLayer& l : layers) {
        payload.insert(payload.end(), l.w.begin(), l.w.end());
        payload.insert(payload.end(), l.b.begin(), l.b.end());
    }
}

void consume_stream(const std::vector<float>& payload, size_t& pos, std::vector<ConvLayer>& layers) {
    for (ConvLayer& l : layers) {
        std::copy(payload.begin() + pos, payload.begin() + pos + l.w.size(), l.w.begin());
        pos += l.w.size();
        std::copy(payload.begin() + pos, payload.begin() + pos + l.b.size(), l.b.begin());
        pos += l.b.size();
    }
}

} // namespace

void save_params(const ModelParams& params, const fs::path& path) {
    const json header = {{"format", "dad-params"},
                         {"version", kFormatVersion},
                         {"arch", params.arch.to_json()},
                         {"lambda", params.lambda_train},
                         {"seed", params.seed},
                         {"payload_floats", params.weight_count()}};
    const std::string hs = header.dump();
    std::vector<float> payload;
    payload.reserve(params.weight_count());
    append_stream(payload, params.encoder);
    append_stream(payload, params.density_decoder);
    append_stream(payload, params.depth_decoder);

    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot open for write: " + tmp.string());
        f.write(kMagic, sizeof(kMagic));
        const uint32_t hlen = static_cast<uint32_t>(hs.size());
        f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
        f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
        f.write(reinterpret_cast<const char*>(payload.data()),
                static_cast<std::streamsize>(payload.size() * sizeof(float)));
        if (!f) throw std::runtime_error("write failed: " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw std::runtime_error("rename failed for " + path.string() + ": " + ec.message());
}

ModelParams load_params(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + path.string());
    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("not a parameter file: " + path.string());
    uint32_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    if (!f || hlen == 0 || hlen > (1u << 20))
        throw std::runtime_error("corrupt parameter header in " + path.string());
    std::string hs(hlen, '\0');
    f.read(hs.data(), hlen);
    if (!f) throw std::runtime_error("truncated parameter header in " + path.string());
    json header;
    try {
        header = json::parse(hs);
    } catch (const json::parse_error& e) {
        throw std::runtime_error("corrupt parameter header in " + path.string() + ": " + e.what());
    }
    const uint32_t version = header.at("version").get<uint32_t>();
    if (version != kFormatVersion)
        throw std::runtime_error("parameter file version " + std::to_string(version) +
                                 " unsupported (expected " + std::to_string(kFormatVersion) +
                                 "): " + path.string());

    ModelParams params = ModelParams::init(ArchDescriptor::from_json(header.at("arch")), 0);
    params.lambda_train = header.at("lambda").get<double>();
    params.seed = header.at("seed").get<uint64_t>();
    const size_t expected = header.at("payload_floats").get<size_t>();
    if (expected != params.weight_count())
        throw std::runtime_error("parameter payload count mismatch in " + path.string());

    std::vector<float> payload(expected);
    f.read(reinterpret_cast<char*>(payload.data()),
           static_cast<std::streamsize>(expected * sizeof(float)));
    if (static_cast<size_t>(f.gcount()) != expected * sizeof(float))
        throw std::runtime_error("truncated parameter payload in " + path.string());

    size_t pos = 0;
    consume_stream(payload, pos, params.encoder);
    consume_stream(payload, pos, params.density_decoder);
    consume_stream(payload, pos, params.depth_decoder);
    return params;
}

} // namespace dad

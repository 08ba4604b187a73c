#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dad/grid.hpp"
#include "dad/io.hpp"

namespace dad {

enum class Act : uint8_t { Identity, Relu, LeakyRelu, Abs };

std::string act_name(Act a);
Act act_from_name(const std::string& name);

/// One convolution block. `pool` appends a 2x2 average downsample,
/// `upsample` prepends a 2x nearest-neighbor upsample.
struct ConvSpec {
    int out_ch = 0;
    int k = 3; // 1 or 3, zero-padded "same"
    Act act = Act::LeakyRelu;
    bool pool = false;
    bool upsample = false;
};

/// Shape of the two-stream regressor: a shared encoder followed by two
/// decoders (density and depth) consuming the same features. The decoders
/// share a template; their head blocks differ only in the output
/// nonlinearity (density passes through a nonnegativity map).
struct ArchDescriptor {
    int input_channels = 3;
    double input_scale = 255.0; // inputs divided by this before the first conv
    /// Fixed gain on the shared features entering the depth decoder. The
    /// depth loss is weighted by a small lambda, which under plain SGD makes
    /// that stream condition ~1/lambda times worse than the density stream;
    /// scaling its input activations by sqrt(1/lambda) restores a common
    /// stable learning rate. Purely a reparameterization: the activations
    /// are positively homogeneous, so the representable functions are
    /// unchanged, and zeroed encoder features still silence both heads.
    double depth_input_gain = 1.0;
    std::vector<ConvSpec> encoder;
    std::vector<ConvSpec> decoder; // template used by both streams
    ConvSpec density_head{1, 3, Act::Relu, false, false};
    ConvSpec depth_head{1, 3, Act::Identity, false, false};

    /// The default desk-scale network: three 3x3 conv blocks of widths
    /// 16/32/64 with 2x downsampling, mirrored by three upsampling blocks
    /// per decoder.
    static ArchDescriptor reference();

    int downsample_factor() const;
    void validate() const;
    json to_json() const;
    static ArchDescriptor from_json(const json& j);
    bool operator==(const ArchDescriptor&) const = default;
};

bool operator==(const ConvSpec&, const ConvSpec&);

/// Weights are held as float32 (the serialized precision) while all forward
/// and backward arithmetic runs in double, so save/load round-trips are
/// bit-exact and finite-difference checks are not drowned by rounding noise.
struct ConvLayer {
    ConvSpec spec;
    int in_ch = 0;
    std::vector<float> w; // [out][in][k][k]
    std::vector<float> b; // [out]

    size_t weight_count() const { return w.size() + b.size(); }
};

struct ModelParams {
    ArchDescriptor arch;
    std::vector<ConvLayer> encoder;
    std::vector<ConvLayer> density_decoder; // includes the head block
    std::vector<ConvLayer> depth_decoder;
    double lambda_train = 0.0; // bookkeeping: loss balance used at training
    uint64_t seed = 0;

    size_t weight_count() const;
    static ModelParams init(const ArchDescriptor& arch, uint64_t seed);
};

struct Prediction {
    Grid density; // >= 0 after the head nonlinearity
    Grid depth;
};

Prediction forward(const ModelParams& params, const Tensor& image);

/// Monte-Carlo-dropout forward: zeroes each shared-encoder feature with
/// probability drop_rate (inverted scaling keeps expectations unchanged).
Prediction forward_feature_dropout(const ModelParams& params, const Tensor& image,
                                   double drop_rate, uint64_t seed);

/// Halved squared Frobenius errors of one sample (the B = 1 batch terms).
struct LossParts {
    double density = 0.0;
    double depth = 0.0;
    double total(double lambda) const { return density + lambda * depth; }
};

LossParts loss_parts(const Prediction& pred, const Grid& density_gt, const Grid& depth_gt);

/// Scalar loss whose input gradient the attack engine needs:
///   0.5*|F_d(I) - density_ref|^2 + depth_weight * 0.5*|F_z(I) - depth_ref|^2.
/// depth_weight 0 selects the density-only loss (depth_ref may be null);
/// exposed attacks use -lambda (untargeted) or +lambda (targeted).
struct LossSpec {
    const Grid* density_ref = nullptr;
    const Grid* depth_ref = nullptr;
    double depth_weight = 0.0;
};

Tensor input_gradient(const ModelParams& params, const Tensor& image, const LossSpec& spec);

/// Same backward pass, also reporting the loss at this input (saves the
/// attack loop a second forward per step).
Tensor input_gradient_with_loss(const ModelParams& params, const Tensor& image,
                                const LossSpec& spec, double* loss_out);

/// Convenience: forward + the loss value of a LossSpec at this input.
double loss_value(const ModelParams& params, const Tensor& image, const LossSpec& spec);

struct TrainingSample {
    Tensor image;
    Grid density_gt;
    Grid depth_gt;
};

struct TrainConfig {
    double lambda = 0.01;
    int batch = 8;
    int epochs = 10;
    double learning_rate = 1e-3;
    uint64_t seed = 0;

    void validate() const;
};

struct EpochLog {
    double loss_density = 0.0;
    double loss_depth = 0.0;
    double loss_total = 0.0;
};

struct TrainResult {
    ModelParams params;
    std::vector<EpochLog> log;
};

/// Plain SGD on L_d + lambda*L_z. Deterministic given (seed, cfg, data):
/// per-sample gradients are reduced in sample order regardless of how many
/// worker threads computed them. Aborts with a diagnostic if the loss
/// stops being finite.
TrainResult train(const std::vector<TrainingSample>& data, const TrainConfig& cfg);

void save_params(const ModelParams& params, const fs::path& path);
ModelParams load_params(const fs::path& path);

} // namespace dad

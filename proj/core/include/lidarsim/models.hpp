#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lidarsim/autodiff/ops.hpp"
#include "lidarsim/autodiff/optim.hpp"
#include "lidarsim/autodiff/tensor.hpp"

namespace lidarsim {

using NamedTensor = std::pair<std::string, ad::Tensor>;

enum class OutputHead { Linear, Sigmoid };

struct UNetConfig {
    int in_channels = 2;
    int base_width = 32;
    int depth = 5;
    // Encoder widths double per stage up to base_width * max_width_mult.
    int max_width_mult = 8;
    float leaky_slope = 0.2f;
    float dropout = 0.0f;
    OutputHead head = OutputHead::Linear;

    void validate() const;
};

// Encoder: stride-2 4x4 convs (instance norm after all but the first) with
// leaky-relu. Decoder stage i upsamples with a stride-2 transposed conv, applies
// instance norm and relu, then concatenates encoder feature map (depth - i),
// where map 0 is the input stack itself. A 1x1 head produces one channel.
class UNet {
public:
    UNet(const UNetConfig& cfg, std::uint64_t seed);

    ad::Tensor forward(const ad::Tensor& x, bool training, std::mt19937_64* rng = nullptr) const;

    // Throws Config when h or w is not divisible by 2^depth.
    void check_input(int height, int width) const;

    const UNetConfig& config() const { return cfg_; }
    const std::vector<int>& encoder_widths() const { return widths_; }
    std::vector<NamedTensor> parameters() const;
    std::vector<ad::Tensor> parameter_tensors() const;
    std::size_t parameter_count() const;

private:
    struct Stage {
        ad::Tensor weight;
        ad::Tensor bias;
        ad::Tensor gain;  // undefined when the stage has no norm
        ad::Tensor shift;
    };

    UNetConfig cfg_;
    std::vector<int> widths_;
    std::vector<Stage> encoder_;
    std::vector<Stage> decoder_;
    ad::Tensor head_weight_;
    ad::Tensor head_bias_;
};

UNet build_unet(int in_channels, int base_width, int depth, std::uint64_t seed = 0);

struct PatchGanConfig {
    int in_channels = 3;
    int base_width = 64;
    // Number of stride-2 layers before the two stride-1 layers.
    int n_layers = 3;
    float leaky_slope = 0.2f;

    void validate() const;
};

struct KernelStride {
    int kernel;
    int stride;
};

// Receptive field of a conv stack: r <- (r - 1) * stride + kernel from the top.
int patchgan_receptive_field(std::span<const KernelStride> layers);

// PatchGAN discriminator without normalization layers (the R1 penalty needs a
// differentiable input gradient). Emits a 1-channel logit map.
class PatchDiscriminator {
public:
    PatchDiscriminator(const PatchGanConfig& cfg, std::uint64_t seed);

    ad::Tensor forward(const ad::Tensor& x) const;

    std::vector<KernelStride> layout() const;
    int receptive_field() const;
    std::pair<int, int> output_size(int height, int width) const;

    const PatchGanConfig& config() const { return cfg_; }
    std::vector<NamedTensor> parameters() const;
    std::vector<ad::Tensor> parameter_tensors() const;
    void set_trainable(bool trainable);

private:
    struct Layer {
        ad::Tensor weight;
        ad::Tensor bias;
        int stride;
    };
    PatchGanConfig cfg_;
    std::vector<Layer> layers_;
};

struct TrainObjective {
    enum class Kind { MaskedL2, Pix2Pix };
    Kind kind = Kind::MaskedL2;
    double lambda = 100.0;
    double gp_coeff = 10.0;

    void validate() const;
};

// masked_mse(model(stack), target, mask)
ad::Tensor unet_loss(const UNet& model, const ad::Tensor& stack, const ad::Tensor& target,
                     const ad::Tensor& mask, bool training = true, std::mt19937_64* rng = nullptr);

// Mean over elements of the squared gradient of sum(disc(cat(stack, intensity)))
// w.r.t. the intensity plane. The result stays differentiable w.r.t. the
// discriminator parameters.
ad::Tensor r1_penalty(const PatchDiscriminator& disc, const ad::Tensor& stack,
                      const ad::Tensor& intensity);

struct Pix2PixLogs {
    double g_loss = 0.0;
    double g_adv = 0.0;
    double g_l1 = 0.0;
    double d_loss = 0.0;
    double d_real_bce = 0.0;
    double d_fake_bce = 0.0;
    double r1 = 0.0;
};

// One discriminator update followed by one generator update.
Pix2PixLogs pix2pix_step(const UNet& gen, PatchDiscriminator& disc, ad::Adam& gen_opt,
                         ad::Adam& disc_opt, const ad::Tensor& stack, const ad::Tensor& target,
                         const ad::Tensor& mask, const TrainObjective& obj, std::mt19937_64& rng);

}  // namespace lidarsim

#include "lidarsim/models.hpp"

#include <algorithm>
#include <cmath>

#include "lidarsim/error.hpp"

namespace lidarsim {

using ad::Shape;
using ad::Tensor;

namespace {

constexpr float kInitStd = 0.02f;

Tensor gaussian(Shape shape, std::mt19937_64& rng) {
    std::normal_distribution<float> dist(0.0f, kInitStd);
    std::vector<float> values(shape.numel());
    for (float& v : values) {
        v = dist(rng);
    }
    return Tensor::from(shape, std::move(values), true);
}

Tensor zeros_param(int channels) { return Tensor::zeros({1, channels, 1, 1}, true); }
Tensor ones_param(int channels) { return Tensor::full({1, channels, 1, 1}, 1.0f, true); }

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

}  // namespace

void UNetConfig::validate() const {
    if (in_channels < 1 || base_width < 1 || depth < 1 || !is_power_of_two(max_width_mult)) {
        throw Error(ErrorCode::Config,
                    "unet: need in_channels >= 1, base_width >= 1, depth >= 1, power-of-two width cap");
    }
    if (!(dropout >= 0.0f && dropout < 1.0f)) {
        throw Error(ErrorCode::Config, "unet: dropout must lie in [0, 1)");
    }
}

UNet::UNet(const UNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    int in = cfg_.in_channels;
    for (int j = 0; j < cfg_.depth; ++j) {
        const int width = cfg_.base_width * std::min(1 << j, cfg_.max_width_mult);
        widths_.push_back(width);
        Stage stage;
        stage.weight = gaussian({width, in, 4, 4}, rng);
        stage.bias = zeros_param(width);
        if (j > 0) {
            stage.gain = ones_param(width);
            stage.shift = zeros_param(width);
        }
        encoder_.push_back(std::move(stage));
        in = width;
    }
    for (int i = 1; i <= cfg_.depth; ++i) {
        const int out = i < cfg_.depth ? widths_[cfg_.depth - i - 1] : cfg_.base_width;
        const int skip = i < cfg_.depth ? widths_[cfg_.depth - i - 1] : cfg_.in_channels;
        Stage stage;
        stage.weight = gaussian({in, out, 4, 4}, rng);
        stage.bias = zeros_param(out);
        stage.gain = ones_param(out);
        stage.shift = zeros_param(out);
        decoder_.push_back(std::move(stage));
        in = out + skip;
    }
    head_weight_ = gaussian({1, in, 1, 1}, rng);
    head_bias_ = zeros_param(1);
}

void UNet::check_input(int height, int width) const {
    const int factor = 1 << cfg_.depth;
    if (height % factor != 0 || width % factor != 0) {
        throw Error(ErrorCode::Config, "unet: input " + std::to_string(height) + "x" +
                                           std::to_string(width) + " not divisible by 2^" +
                                           std::to_string(cfg_.depth));
    }
}

Tensor UNet::forward(const Tensor& x, bool training, std::mt19937_64* rng) const {
    const Shape s = x.shape();
    if (s.c != cfg_.in_channels) {
        throw Error(ErrorCode::Shape, "unet: expected " + std::to_string(cfg_.in_channels) +
                                          " input channels, got " + std::to_string(s.c));
    }
    check_input(s.h, s.w);
    if (training && cfg_.dropout > 0.0f && rng == nullptr) {
        throw Error(ErrorCode::Config, "unet: dropout in training mode needs an rng");
    }
    std::vector<Tensor> features{x};
    Tensor h = x;
    for (const Stage& stage : encoder_) {
        h = ad::conv2d(h, stage.weight, stage.bias, 2, 1);
        if (stage.gain.defined()) {
            h = ad::instance_norm(h, stage.gain, stage.shift);
        }
        h = ad::leaky_relu(h, cfg_.leaky_slope);
        features.push_back(h);
    }
    for (int i = 1; i <= cfg_.depth; ++i) {
        const Stage& stage = decoder_[i - 1];
        h = ad::conv_transpose2d(h, stage.weight, stage.bias, 2, 1);
        h = ad::instance_norm(h, stage.gain, stage.shift);
        h = ad::relu(h);
        if (cfg_.dropout > 0.0f && training) {
            h = ad::dropout(h, cfg_.dropout, true, *rng);
        }
        h = ad::concat_channels(h, features[cfg_.depth - i]);
    }
    Tensor out = ad::conv2d(h, head_weight_, head_bias_, 1, 0);
    if (cfg_.head == OutputHead::Sigmoid) {
        out = ad::sigmoid(out);
    }
    return out;
}

std::vector<NamedTensor> UNet::parameters() const {
    std::vector<NamedTensor> params;
    auto add_stage = [&params](const std::string& prefix, const Stage& stage) {
        params.emplace_back(prefix + ".weight", stage.weight);
        params.emplace_back(prefix + ".bias", stage.bias);
        if (stage.gain.defined()) {
            params.emplace_back(prefix + ".norm.gain", stage.gain);
            params.emplace_back(prefix + ".norm.bias", stage.shift);
        }
    };
    for (std::size_t j = 0; j < encoder_.size(); ++j) {
        add_stage("enc" + std::to_string(j), encoder_[j]);
    }
    for (std::size_t i = 0; i < decoder_.size(); ++i) {
        add_stage("dec" + std::to_string(i + 1), decoder_[i]);
    }
    params.emplace_back("head.weight", head_weight_);
    params.emplace_back("head.bias", head_bias_);
    return params;
}

std::vector<Tensor> UNet::parameter_tensors() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : parameters()) {
        out.push_back(t);
    }
    return out;
}

std::size_t UNet::parameter_count() const {
    std::size_t total = 0;
    for (const auto& [name, t] : parameters()) {
        total += t.numel();
    }
    return total;
}

UNet build_unet(int in_channels, int base_width, int depth, std::uint64_t seed) {
    UNetConfig cfg;
    cfg.in_channels = in_channels;
    cfg.base_width = base_width;
    cfg.depth = depth;
    return UNet(cfg, seed);
}

void PatchGanConfig::validate() const {
    if (in_channels < 1 || base_width < 1 || n_layers < 1) {
        throw Error(ErrorCode::Config, "patchgan: need in_channels, base_width, n_layers >= 1");
    }
}

int patchgan_receptive_field(std::span<const KernelStride> layers) {
    int field = 1;
    for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
        field = (field - 1) * it->stride + it->kernel;
    }
    return field;
}

PatchDiscriminator::PatchDiscriminator(const PatchGanConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    int in = cfg_.in_channels;
    auto width_at = [&](int i) { return cfg_.base_width * std::min(1 << i, 8); };
    for (int i = 0; i < cfg_.n_layers; ++i) {
        const int out = width_at(i);
        layers_.push_back({gaussian({out, in, 4, 4}, rng), zeros_param(out), 2});
        in = out;
    }
    const int out = width_at(cfg_.n_layers);
    layers_.push_back({gaussian({out, in, 4, 4}, rng), zeros_param(out), 1});
    layers_.push_back({gaussian({1, out, 4, 4}, rng), zeros_param(1), 1});
}

Tensor PatchDiscriminator::forward(const Tensor& x) const {
    if (x.shape().c != cfg_.in_channels) {
        throw Error(ErrorCode::Shape, "patchgan: expected " + std::to_string(cfg_.in_channels) +
                                          " channels, got " + std::to_string(x.shape().c));
    }
    Tensor h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        h = ad::conv2d(h, layers_[i].weight, layers_[i].bias, layers_[i].stride, 1);
        if (i + 1 < layers_.size()) {
            h = ad::leaky_relu(h, cfg_.leaky_slope);
        }
    }
    return h;
}

std::vector<KernelStride> PatchDiscriminator::layout() const {
    std::vector<KernelStride> out;
    for (const Layer& layer : layers_) {
        out.push_back({layer.weight.shape().h, layer.stride});
    }
    return out;
}

int PatchDiscriminator::receptive_field() const {
    const auto l = layout();
    return patchgan_receptive_field(l);
}

std::pair<int, int> PatchDiscriminator::output_size(int height, int width) const {
    for (const Layer& layer : layers_) {
        const int k = layer.weight.shape().h;
        height = (height + 2 - k) / layer.stride + 1;
        width = (width + 2 - k) / layer.stride + 1;
    }
    return {height, width};
}

std::vector<NamedTensor> PatchDiscriminator::parameters() const {
    std::vector<NamedTensor> params;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        params.emplace_back("layer" + std::to_string(i) + ".weight", layers_[i].weight);
        params.emplace_back("layer" + std::to_string(i) + ".bias", layers_[i].bias);
    }
    return params;
}

std::vector<Tensor> PatchDiscriminator::parameter_tensors() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : parameters()) {
        out.push_back(t);
    }
    return out;
}

void PatchDiscriminator::set_trainable(bool trainable) {
    for (Layer& layer : layers_) {
        layer.weight.set_requires_grad(trainable);
        layer.bias.set_requires_grad(trainable);
    }
}

void TrainObjective::validate() const {
    if (!(lambda >= 0.0) || !(gp_coeff >= 0.0)) {
        throw Error(ErrorCode::Config, "objective: lambda and gp_coeff must be non-negative");
    }
}

Tensor unet_loss(const UNet& model, const Tensor& stack, const Tensor& target, const Tensor& mask,
                 bool training, std::mt19937_64* rng) {
    return ad::masked_mse(model.forward(stack, training, rng), target, mask);
}

Tensor r1_penalty(const PatchDiscriminator& disc, const Tensor& stack, const Tensor& intensity) {
    Tensor real = intensity.detach().set_requires_grad(true);
    Tensor logits = disc.forward(ad::concat_channels(stack.detach(), real));
    Tensor g = ad::grad(ad::sum(logits), {real}, true)[0];
    return ad::mean(ad::mul(g, g));
}

Pix2PixLogs pix2pix_step(const UNet& gen, PatchDiscriminator& disc, ad::Adam& gen_opt,
                         ad::Adam& disc_opt, const Tensor& stack, const Tensor& target,
                         const Tensor& mask, const TrainObjective& obj, std::mt19937_64& rng) {
    if (obj.kind != TrainObjective::Kind::Pix2Pix) {
        throw Error(ErrorCode::Config, "pix2pix_step requires a pix2pix objective");
    }
    obj.validate();
    Pix2PixLogs logs;
    const Tensor condition = stack.detach();
    const Tensor fake = gen.forward(condition, true, &rng);

    // Discriminator: real pairs -> 1, generated pairs -> 0, plus R1 on real pairs.
    disc.set_trainable(true);
    disc_opt.zero_grad();
    Tensor real = target.detach();
    if (obj.gp_coeff > 0.0) {
        real.set_requires_grad(true);
    }
    const Tensor real_logits = disc.forward(ad::concat_channels(condition, real));
    const Tensor fake_logits = disc.forward(ad::concat_channels(condition, fake.detach()));
    const Tensor bce_real = ad::bce_with_logits(real_logits, 1.0f);
    const Tensor bce_fake = ad::bce_with_logits(fake_logits, 0.0f);
    Tensor d_loss = ad::add(bce_real, bce_fake);
    if (obj.gp_coeff > 0.0) {
        const Tensor g = ad::grad(ad::sum(real_logits), {real}, true)[0];
        const Tensor r1 = ad::mean(ad::mul(g, g));
        logs.r1 = r1.item();
        d_loss = ad::add(d_loss, ad::scale(r1, static_cast<float>(obj.gp_coeff)));
    }
    d_loss.backward();
    disc_opt.step();
    logs.d_real_bce = bce_real.item();
    logs.d_fake_bce = bce_fake.item();
    logs.d_loss = d_loss.item();

    // Generator: fool the (updated) discriminator and match the target on returns.
    disc.set_trainable(false);
    gen_opt.zero_grad();
    const Tensor adv = ad::bce_with_logits(disc.forward(ad::concat_channels(condition, fake)), 1.0f);
    const Tensor l1 = ad::masked_l1(fake, target, mask);
    const Tensor g_loss = ad::add(adv, ad::scale(l1, static_cast<float>(obj.lambda)));
    g_loss.backward();
    gen_opt.step();
    disc.set_trainable(true);
    logs.g_adv = adv.item();
    logs.g_l1 = l1.item();
    logs.g_loss = g_loss.item();
    return logs;
}

}  // namespace lidarsim

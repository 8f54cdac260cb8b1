#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lidarsim/error.hpp"
#include "lidarsim/models.hpp"

using namespace lidarsim;
using ad::Shape;
using ad::Tensor;

namespace {

Tensor random_tensor(Shape s, std::mt19937_64& rng, float lo = 0.0f, float hi = 1.0f) {
    std::uniform_real_distribution<float> u(lo, hi);
    std::vector<float> v(s.numel());
    for (auto& x : v) x = u(rng);
    return Tensor::from(s, std::move(v));
}

Tensor random_mask(Shape s, std::mt19937_64& rng) {
    std::bernoulli_distribution b(0.6);
    std::vector<float> v(s.numel());
    for (auto& x : v) x = b(rng) ? 1.0f : 0.0f;
    return Tensor::from(s, std::move(v));
}

UNetConfig small_unet(int in_channels, OutputHead head = OutputHead::Linear) {
    UNetConfig cfg;
    cfg.in_channels = in_channels;
    cfg.base_width = 4;
    cfg.depth = 3;
    cfg.head = head;
    return cfg;
}

std::vector<std::vector<float>> values_of(const std::vector<Tensor>& ts) {
    std::vector<std::vector<float>> out;
    for (const auto& t : ts) out.emplace_back(t.data().begin(), t.data().end());
    return out;
}

}  // namespace

TEST(Models, ReceptiveFieldRecurrence) {
    const std::vector<KernelStride> patchgan{{4, 2}, {4, 2}, {4, 2}, {4, 1}, {4, 1}};
    EXPECT_EQ(patchgan_receptive_field(patchgan), 70);
    const std::vector<KernelStride> one{{1, 1}};
    EXPECT_EQ(patchgan_receptive_field(one), 1);
    const std::vector<KernelStride> two{{3, 1}, {3, 1}};
    EXPECT_EQ(patchgan_receptive_field(two), 5);
    PatchGanConfig cfg;
    cfg.in_channels = 3;
    cfg.base_width = 4;
    EXPECT_EQ(PatchDiscriminator(cfg, 1).receptive_field(), 70);
}

TEST(Models, FirstConvMatchesComboWidth) {
    for (int c : {2, 8}) {
        const UNet net = build_unet(c, 4, 3, 1);
        const auto params = net.parameters();
        ASSERT_FALSE(params.empty());
        EXPECT_EQ(params.front().second.shape().c, c) << params.front().first;
        std::mt19937_64 rng(2);
        const Tensor y = net.forward(random_tensor({1, c, 16, 32}, rng), false);
        EXPECT_EQ(y.shape(), (Shape{1, 1, 16, 32}));
    }
}

TEST(Models, DepthFiveBottleneckOnKittiGrid) {
    UNetConfig cfg;
    cfg.in_channels = 2;
    cfg.base_width = 2;
    cfg.depth = 5;
    const UNet net(cfg, 3);
    net.check_input(64, 1024);
    EXPECT_EQ(net.encoder_widths().size(), 5u);
    // Five halvings of 64 x 1024.
    EXPECT_EQ(64 >> 5, 2);
    EXPECT_EQ(1024 >> 5, 32);
    std::mt19937_64 rng(4);
    const Tensor y = net.forward(random_tensor({1, 2, 64, 1024}, rng), false);
    EXPECT_EQ(y.shape(), (Shape{1, 1, 64, 1024}));
    try {
        net.check_input(64, 1000);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::Config);
    }
}

TEST(Models, ParameterCountIsPureAndInitIsGaussian002) {
    const UNet a = build_unet(4, 8, 4, 1);
    const UNet b = build_unet(4, 8, 4, 99);
    EXPECT_EQ(a.parameter_count(), b.parameter_count());
    double sum = 0, sq = 0;
    std::size_t n = 0;
    for (const auto& [name, t] : a.parameters()) {
        if (name.find("weight") == std::string::npos || t.shape().h == 1) continue;
        for (float v : t.data()) {
            sum += v;
            sq += double(v) * v;
            ++n;
        }
    }
    ASSERT_GT(n, 10000u);
    EXPECT_NEAR(sum / n, 0.0, 1e-3);
    EXPECT_NEAR(std::sqrt(sq / n), 0.02, 1e-3);
    for (const auto& [name, t] : a.parameters()) {
        if (name.find("bias") == std::string::npos) continue;
        for (float v : t.data()) EXPECT_EQ(v, 0.0f) << name;
    }
}

TEST(Models, LinearHeadPassesBiasThrough) {
    const UNet net(small_unet(2), 5);
    for (auto& [name, t] : net.parameters()) {
        auto d = t.data();
        std::fill(d.begin(), d.end(), 0.0f);
    }
    for (auto& [name, t] : net.parameters()) {
        if (name.find("head") != std::string::npos && name.find("bias") != std::string::npos) t.data()[0] = 1.7f;
    }
    std::mt19937_64 rng(6);
    const Tensor y = net.forward(random_tensor({2, 2, 16, 32}, rng), false);
    for (float v : y.data()) EXPECT_FLOAT_EQ(v, 1.7f);
}

TEST(Models, SigmoidHeadStaysInsideUnitInterval) {
    const UNet net(small_unet(3, OutputHead::Sigmoid), 7);
    std::mt19937_64 rng(8);
    const Tensor y = net.forward(random_tensor({2, 3, 16, 32}, rng, -50.0f, 50.0f), false);
    for (float v : y.data()) {
        EXPECT_GT(v, 0.0f);
        EXPECT_LT(v, 1.0f);
    }
}

TEST(Models, DiscriminatorOutputShapeArithmetic) {
    PatchGanConfig cfg;
    cfg.in_channels = 3;
    cfg.base_width = 2;
    cfg.n_layers = 3;
    const PatchDiscriminator disc(cfg, 9);
    std::mt19937_64 rng(10);
    for (auto [h, w] : {std::pair{64, 256}, std::pair{32, 64}, std::pair{40, 48}}) {
        const auto [oh, ow] = disc.output_size(h, w);
        const Tensor y = disc.forward(random_tensor({1, 3, h, w}, rng));
        EXPECT_EQ(y.shape(), (Shape{1, 1, oh, ow})) << h << "x" << w;
    }
    EXPECT_EQ(disc.output_size(64, 256), (std::pair{6, 30}));
}

TEST(Models, UnetLossZeroForPerfectPrediction) {
    const UNet net(small_unet(2), 11);
    std::mt19937_64 rng(12);
    const Tensor stack = random_tensor({2, 2, 16, 32}, rng);
    const Tensor target = net.forward(stack, false).detach();
    const Tensor mask = random_mask({2, 1, 16, 32}, rng);
    EXPECT_EQ(unet_loss(net, stack, target, mask, false).item(), 0.0f);
}

TEST(Models, UntrainedLossWithinUnitRange) {
    const UNet net(small_unet(2), 13);
    std::mt19937_64 rng(14);
    const Tensor stack = random_tensor({2, 2, 16, 32}, rng);
    const Tensor target = random_tensor({2, 1, 16, 32}, rng);
    const Tensor mask = random_mask({2, 1, 16, 32}, rng);
    const float loss = unet_loss(net, stack, target, mask, false).item();
    EXPECT_GE(loss, 0.0f);
    EXPECT_LE(loss, 1.0f);
}

TEST(Models, LossIgnoresPredictionsOutsideMask) {
    std::mt19937_64 rng(15);
    const Tensor target = random_tensor({1, 1, 8, 8}, rng);
    const Tensor mask = random_mask({1, 1, 8, 8}, rng);
    Tensor pred = random_tensor({1, 1, 8, 8}, rng);
    Tensor other = pred.clone();
    for (std::size_t i = 0; i < 64; ++i)
        if (mask.data()[i] == 0.0f) other.data()[i] += 3.0f;
    EXPECT_EQ(ad::masked_mse(pred, target, mask).item(), ad::masked_mse(other, target, mask).item());
    EXPECT_EQ(ad::masked_l1(pred, target, mask).item(), ad::masked_l1(other, target, mask).item());
}

TEST(Models, ConstantZeroLogitsGiveLn2) {
    const Tensor logits = Tensor::zeros({1, 1, 6, 30});
    EXPECT_NEAR(ad::bce_with_logits(logits, 1.0f).item(), std::log(2.0), 1e-6);
    EXPECT_NEAR(ad::bce_with_logits(logits, 0.0f).item(), std::log(2.0), 1e-6);
}

TEST(Models, Pix2PixStepWithZeroLrChangesNothing) {
    UNet gen(small_unet(2, OutputHead::Sigmoid), 16);
    PatchGanConfig dcfg;
    dcfg.in_channels = 3;
    dcfg.base_width = 4;
    dcfg.n_layers = 2;
    PatchDiscriminator disc(dcfg, 17);
    ad::AdamConfig zero;
    zero.lr = 0.0;
    zero.beta1 = 0.5;
    ad::Adam gopt(gen.parameter_tensors(), zero);
    ad::Adam dopt(disc.parameter_tensors(), zero);
    const auto g0 = values_of(gen.parameter_tensors());
    const auto d0 = values_of(disc.parameter_tensors());
    std::mt19937_64 rng(18);
    const Tensor stack = random_tensor({2, 2, 32, 32}, rng);
    const Tensor target = random_tensor({2, 1, 32, 32}, rng);
    const Tensor mask = random_mask({2, 1, 32, 32}, rng);
    TrainObjective obj;
    obj.kind = TrainObjective::Kind::Pix2Pix;
    const auto logs = pix2pix_step(gen, disc, gopt, dopt, stack, target, mask, obj, rng);
    EXPECT_EQ(values_of(gen.parameter_tensors()), g0);
    EXPECT_EQ(values_of(disc.parameter_tensors()), d0);
    EXPECT_TRUE(std::isfinite(logs.g_loss) && std::isfinite(logs.d_loss));
    EXPECT_NEAR(logs.g_loss, logs.g_adv + 100.0 * logs.g_l1, 1e-3 * std::abs(logs.g_loss));
    EXPECT_NEAR(logs.d_loss, logs.d_real_bce + logs.d_fake_bce + 10.0 * logs.r1, 1e-5);
}

TEST(Models, Pix2PixStepTrainsBothNetworks) {
    UNet gen(small_unet(2, OutputHead::Sigmoid), 19);
    PatchGanConfig dcfg;
    dcfg.in_channels = 3;
    dcfg.base_width = 4;
    dcfg.n_layers = 2;
    PatchDiscriminator disc(dcfg, 20);
    ad::AdamConfig cfg;
    cfg.lr = 1e-3;
    cfg.beta1 = 0.5;
    ad::Adam gopt(gen.parameter_tensors(), cfg);
    ad::Adam dopt(disc.parameter_tensors(), cfg);
    const auto g0 = values_of(gen.parameter_tensors());
    const auto d0 = values_of(disc.parameter_tensors());
    std::mt19937_64 rng(21);
    const Tensor stack = random_tensor({2, 2, 32, 32}, rng);
    const Tensor target = random_tensor({2, 1, 32, 32}, rng);
    const Tensor mask = random_mask({2, 1, 32, 32}, rng);
    TrainObjective obj;
    obj.kind = TrainObjective::Kind::Pix2Pix;
    obj.lambda = 0.0;  // adversarial signal only
    pix2pix_step(gen, disc, gopt, dopt, stack, target, mask, obj, rng);
    EXPECT_NE(values_of(gen.parameter_tensors()), g0);
    EXPECT_NE(values_of(disc.parameter_tensors()), d0);
}

TEST(Models, Pix2PixStepRejectsL2Objective) {
    UNet gen(small_unet(2, OutputHead::Sigmoid), 1);
    PatchGanConfig dcfg;
    dcfg.in_channels = 3;
    dcfg.base_width = 4;
    dcfg.n_layers = 2;
    PatchDiscriminator disc(dcfg, 2);
    ad::Adam gopt(gen.parameter_tensors(), {});
    ad::Adam dopt(disc.parameter_tensors(), {});
    std::mt19937_64 rng(3);
    const Tensor x = random_tensor({1, 2, 16, 16}, rng);
    const Tensor t = random_tensor({1, 1, 16, 16}, rng);
    EXPECT_THROW(pix2pix_step(gen, disc, gopt, dopt, x, t, t, TrainObjective{}, rng), Error);
}

TEST(Models, InvalidConfigs) {
    UNetConfig u = small_unet(0);
    EXPECT_THROW(u.validate(), Error);
    u = small_unet(2);
    u.depth = 0;
    EXPECT_THROW(u.validate(), Error);
    PatchGanConfig p;
    p.n_layers = 0;
    EXPECT_THROW(p.validate(), Error);
    TrainObjective o;
    o.lambda = -1;
    EXPECT_THROW(o.validate(), Error);
}

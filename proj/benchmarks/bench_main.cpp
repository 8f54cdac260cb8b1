#include <benchmark/benchmark.h>

#include <random>

#include "lidarsim/autodiff/ops.hpp"
#include "lidarsim/geometry.hpp"
#include "lidarsim/kdtree.hpp"
#include "lidarsim/models.hpp"
#include "lidarsim/pipeline.hpp"
#include "lidarsim/projection.hpp"
#include "lidarsim/synth.hpp"

using namespace lidarsim;
using ad::Shape;
using ad::Tensor;

namespace {

Tensor random_tensor(Shape s, std::mt19937_64& rng, bool requires_grad = false) {
    std::normal_distribution<float> g(0.0f, 1.0f);
    std::vector<float> v(s.numel());
    for (auto& x : v) x = g(rng);
    return Tensor::from(s, std::move(v), requires_grad);
}

PointCloud synthetic_cloud(int height, int width) {
    ProjectionConfig grid;
    grid.height = height;
    grid.width = width;
    return synth_scene(1, SynthSceneConfig{}, grid).cloud;
}

void BM_Conv2dForwardBackward(benchmark::State& state) {
    const int c = static_cast<int>(state.range(0));
    std::mt19937_64 rng(1);
    const Tensor x = random_tensor({4, c, 32, 128}, rng, true);
    const Tensor w = random_tensor({2 * c, c, 4, 4}, rng, true);
    const Tensor b = random_tensor({1, 2 * c, 1, 1}, rng, true);
    for (auto _ : state) {
        Tensor y = ad::sum(ad::conv2d(x, w, b, 2, 1));
        y.backward();
        benchmark::DoNotOptimize(w.grad().data());
    }
}
BENCHMARK(BM_Conv2dForwardBackward)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_UNetTrainStep(benchmark::State& state) {
    const int base = static_cast<int>(state.range(0));
    const UNet net = build_unet(4, base, 5, 1);
    ad::AdamConfig cfg;
    cfg.lr = 3e-3;
    cfg.weight_decay = 1e-3;
    ad::Adam opt(net.parameter_tensors(), cfg);
    std::mt19937_64 rng(2);
    const Tensor x = random_tensor({4, 4, 64, 256}, rng);
    const Tensor t = random_tensor({4, 1, 64, 256}, rng);
    const Tensor m = Tensor::full({4, 1, 64, 256}, 1.0f);
    for (auto _ : state) {
        opt.zero_grad();
        Tensor loss = unet_loss(net, x, t, m, true, &rng);
        loss.backward();
        opt.step();
    }
    state.counters["params"] = static_cast<double>(net.parameter_count());
}
BENCHMARK(BM_UNetTrainStep)->Arg(8)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_KdTreeKnn(benchmark::State& state) {
    const PointCloud cloud = synthetic_cloud(64, 256);
    const KdTree tree(cloud.points);
    const int n = static_cast<int>(cloud.size());
    int q = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(tree.knn(q, 16));
        q = (q + 97) % n;
    }
    state.counters["points"] = n;
}
BENCHMARK(BM_KdTreeKnn);

void BM_KdTreeBuild(benchmark::State& state) {
    const PointCloud cloud = synthetic_cloud(64, 1024);
    for (auto _ : state) {
        KdTree tree(cloud.points);
        benchmark::DoNotOptimize(tree.size());
    }
}
BENCHMARK(BM_KdTreeBuild)->Unit(benchmark::kMillisecond);

void BM_IncidenceChannel(benchmark::State& state) {
    const PointCloud cloud = synthetic_cloud(64, 256);
    for (auto _ : state) {
        benchmark::DoNotOptimize(incidence_channel(cloud, 16).angle.data());
    }
}
BENCHMARK(BM_IncidenceChannel)->Unit(benchmark::kMillisecond);

void BM_SphericalProjection(benchmark::State& state) {
    const PointCloud cloud = synthetic_cloud(64, 1024);
    ProjectionConfig grid;
    for (auto _ : state) {
        benchmark::DoNotOptimize(spherical_project(cloud, grid).point_index.data());
    }
    state.counters["points"] = static_cast<double>(cloud.size());
}
BENCHMARK(BM_SphericalProjection)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();

// Microbenchmarks for the kernels that dominate training and prior generation.
#include <benchmark/benchmark.h>

#include <vector>

#include "pour/cascade.hpp"
#include "pour/metrics.hpp"
#include "pour/phantom.hpp"

using namespace pour;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    std::vector<float> v(static_cast<std::size_t>(n));
    Rng rng(seed);
    for (auto& x : v) x = float(rng.uniform(0.1, 1.0));
    return Tensor::from(std::move(shape), std::move(v));
}

void bm_conv3d_k3(benchmark::State& state) {
    const int c = int(state.range(0));
    auto x = random_tensor({1, c, 16, 16, 16}, 1);
    auto w = random_tensor({c, c, 3, 3, 3}, 2);
    auto b = random_tensor({c}, 3);
    for (auto _ : state) benchmark::DoNotOptimize(conv3d(x, w, b, 1, 1).node());
}
BENCHMARK(bm_conv3d_k3)->Arg(4)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

void bm_conv3d_stride2(benchmark::State& state) {
    auto x = random_tensor({1, 8, 17, 17, 17}, 1);
    auto w = random_tensor({16, 8, 3, 3, 3}, 2);
    auto b = random_tensor({16}, 3);
    for (auto _ : state) benchmark::DoNotOptimize(conv3d(x, w, b, 2, 1).node());
}
BENCHMARK(bm_conv3d_stride2)->Unit(benchmark::kMillisecond);

void bm_resample(benchmark::State& state) {
    auto x = random_tensor({1, 8, 16, 16, 16}, 1);
    const auto f = ResampleFactor(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(resample(x, f).node());
}
BENCHMARK(bm_resample)
    ->Arg(int(ResampleFactor::up2))
    ->Arg(int(ResampleFactor::down2))
    ->Unit(benchmark::kMillisecond);

void bm_ournet_forward(benchmark::State& state) {
    OurNetConfig cfg;
    cfg.base_channels = int(state.range(0));
    auto net = make_ournet<float>(cfg, 1);
    auto x = random_tensor({1, 2, 16, 16, 16}, 2);
    for (auto _ : state) benchmark::DoNotOptimize(ournet_forward(x, net).x_f.node());
}
BENCHMARK(bm_ournet_forward)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);

void bm_train_step(benchmark::State& state) {
    LoadedCase lc;
    PhantomSpec ps;
    ps.size = 16;
    ps.seed = 5;
    auto [mu_gt, lam_gt] = generate_phantom(ps);
    DegradeParams dp;
    dp.seed = 6;
    auto [lam, mu] = degrade(mu_gt, lam_gt, dp);
    lc.lambda = normalize_activity(lam);
    lc.mu_mlaa = normalize_mu(mu);
    lc.mu_gt = normalize_mu(mu_gt);
    CascadeConfig cc;
    cc.ournet.base_channels = 4;
    cc.training.batch_size = 2;
    cc.training.patches_per_volume = 4;
    cc.training.patch_size = 16;
    cc.training.seed = 7;
    cc.training.steps = 1;
    for (auto _ : state) benchmark::DoNotOptimize(train_stage(1, {lc}, nullptr, cc).losses);
}
BENCHMARK(bm_train_step)->Unit(benchmark::kMillisecond);

void bm_demons_register(benchmark::State& state) {
    PhantomSpec ps;
    ps.size = 32;
    ps.seed = 11;
    auto [mu_gt, lam_gt] = generate_phantom(ps);
    Volume3D f = normalize_mu(mu_gt);
    DeformationField t = DeformationField::zeros(f.dims);
    for (auto& v : t.comp[0]) v = 2.0f;
    Volume3D m = warp(f, t);
    DemonsConfig dc;
    for (auto _ : state) benchmark::DoNotOptimize(demons_register(m, f, dc).second.data);
}
BENCHMARK(bm_demons_register)->Unit(benchmark::kMillisecond);

void bm_atlas_match(benchmark::State& state) {
    PhantomSpec ps;
    ps.size = 32;
    AtlasDataset atlas = generate_atlas(32, ps, 9);
    ps.seed = 123;
    auto [mu_gt, lam_gt] = generate_phantom(ps);
    Volume3D q = normalize_mu(mu_gt);
    const int pre = int(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(atlas_match(q, atlas, pre).first);
}
BENCHMARK(bm_atlas_match)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);

void bm_ssim(benchmark::State& state) {
    const std::uint32_t n = std::uint32_t(state.range(0));
    Volume3D a = Volume3D::zeros({n, n, n}, VolumeKind::mu_normalized);
    Volume3D b = a;
    Rng rng(3);
    for (auto& v : a.data) v = float(rng.uniform());
    for (auto& v : b.data) v = float(rng.uniform());
    for (auto _ : state) benchmark::DoNotOptimize(ssim(a, b));
}
BENCHMARK(bm_ssim)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void bm_gaussian_smooth(benchmark::State& state) {
    Volume3D a = Volume3D::zeros({64, 64, 64}, VolumeKind::mu);
    Rng rng(4);
    for (auto& v : a.data) v = float(rng.uniform());
    for (auto _ : state) benchmark::DoNotOptimize(gaussian_smooth(a, 5.0).data);
}
BENCHMARK(bm_gaussian_smooth)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

#include "cgm/estimators.hpp"
#include "cgm/kernels.hpp"
#include "cgm/nn.hpp"

#include <benchmark/benchmark.h>

#include <random>

namespace {

using namespace cgm;

Points normal_points(std::mt19937_64& rng, std::size_t n, Eigen::Index d) {
    std::normal_distribution<double> normal;
    Points out;
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(Vector::NullaryExpr(d, [&](Eigen::Index) { return normal(rng); }));
    }
    return out;
}

void BM_Gram(benchmark::State& state) {
    std::mt19937_64 rng(1);
    const Points a = normal_points(rng, static_cast<std::size_t>(state.range(0)), 4);
    GaussianKernel k;
    for (auto _ : state) {
        benchmark::DoNotOptimize(gram(k, a, a));
    }
    state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Gram)->RangeMultiplier(2)->Range(32, 512)->Complexity(benchmark::oNSquared);

void BM_JointEstimator(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    std::mt19937_64 rng(2);
    const Batch data{normal_points(rng, n, 1), normal_points(rng, n, 1)};
    const GenBatch gen{data.xs, {}, normal_points(rng, n, 1)};
    GaussianKernel kx, ky;
    const Gradient mode = state.range(1) != 0 ? Gradient::Compute : Gradient::Skip;
    for (auto _ : state) {
        benchmark::DoNotOptimize(jmmd_hat(kx, ky, data, gen, mode));
    }
}
BENCHMARK(BM_JointEstimator)->ArgsProduct({{64, 256, 1024}, {0, 1}});

void BM_GroupedEstimator(benchmark::State& state) {
    const auto groups = static_cast<std::size_t>(state.range(0));
    std::mt19937_64 rng(3);
    GroupedBatch batch;
    for (std::size_t g = 0; g < groups; ++g) {
        batch.groups.push_back({normal_points(rng, 1, 1)[0], normal_points(rng, 2, 1), normal_points(rng, 4, 1)});
    }
    GaussianKernel ky;
    for (auto _ : state) {
        benchmark::DoNotOptimize(ammd_hat(ky, batch));
    }
}
BENCHMARK(BM_GroupedEstimator)->Arg(64)->Arg(256)->Arg(1024);

void BM_CmmdEstimator(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    std::mt19937_64 rng(4);
    const Batch data{normal_points(rng, n, 1), normal_points(rng, n, 1)};
    const GenBatch gen{normal_points(rng, n, 1), {}, normal_points(rng, n, 1)};
    GaussianKernel kx, ky;
    for (auto _ : state) {
        benchmark::DoNotOptimize(cmmd_hat_with_grad(kx, ky, data, gen, 0.1));
    }
}
BENCHMARK(BM_CmmdEstimator)->Arg(32)->Arg(128);

void BM_MlpForwardBackward(benchmark::State& state) {
    const Mlp net = Mlp::he_uniform({11, 64, 64, 1}, 5);
    std::mt19937_64 rng(6);
    std::normal_distribution<double> normal;
    const Matrix x = Matrix::NullaryExpr(11, state.range(0), [&](Eigen::Index, Eigen::Index) { return normal(rng); });
    for (auto _ : state) {
        const ForwardCache cache = net.forward(x);
        benchmark::DoNotOptimize(net.backward(cache, cache.output));
    }
}
BENCHMARK(BM_MlpForwardBackward)->Arg(64)->Arg(256);

}  // namespace

BENCHMARK_MAIN();

#include <benchmark/benchmark.h>

#include "mcn/network.hpp"
#include "mcn/ops.hpp"
#include "mcn/raw_pipeline.hpp"
#include "mcn/rng.hpp"

using namespace mcn;

namespace {

Tensor<float> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    std::vector<float> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
    return Tensor<float>(std::move(shape), std::move(v));
}

void BM_Conv2d3x3(benchmark::State& state) {
    const auto c = static_cast<std::size_t>(state.range(0));
    const auto x = random_tensor({1, c, 64, 64}, 1);
    const auto w = random_tensor({c, c, 3, 3}, 2);
    const auto b = random_tensor({c}, 3);
    for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, b, 1, 1));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(c * c * 9 * 64 * 64));
}
BENCHMARK(BM_Conv2d3x3)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_McnForward(benchmark::State& state) {
    const McnModel<float> model(McnConfig::make(static_cast<std::size_t>(state.range(0)), FusionKind::Residual, 8));
    const auto x = random_tensor({1, 4, 32, 32}, 4);
    for (auto _ : state) {
        NoGradGuard guard;
        benchmark::DoNotOptimize(mcn_forward(model, x));
    }
}
BENCHMARK(BM_McnForward)->Arg(2)->Arg(3)->Unit(benchmark::kMillisecond);

void BM_RimefGain(benchmark::State& state) {
    const auto x = random_tensor({512, 512}, 5, 0.0, 1.0);
    const IlluminationParams p = IlluminationParams::for_hdr(300.0);
    for (auto _ : state) benchmark::DoNotOptimize(rimef_gain(x, p));
    state.SetItemsProcessed(state.iterations() * 512 * 512);
}
BENCHMARK(BM_RimefGain)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

#include <benchmark/benchmark.h>

#include <cmath>
#include <random>
#include <vector>

#include "nqs/allocator.hpp"
#include "nqs/loss.hpp"

using namespace nqs;

namespace {

const NqsParams kTheta{1.12, 3.6, 0.59, 0.93, 1.5, 4.3, 0.45};

std::vector<RunConfig> random_runs(std::size_t n) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<RunConfig> runs;
  for (std::size_t i = 0; i < n; ++i)
    runs.push_back({std::int64_t(std::pow(10.0, 3 + 6 * u(rng))), std::int64_t(std::pow(2.0, 10 * u(rng))),
                    std::int64_t(std::pow(10.0, 1 + 5 * u(rng))), 1});
  return runs;
}

void BM_Loss(benchmark::State& state) {
  const RunConfig run{state.range(0), 64, 10'000, 1};
  for (auto _ : state) benchmark::DoNotOptimize(nqs_loss(kTheta, run));
}
BENCHMARK(BM_Loss)->Arg(100)->Arg(10'000)->Arg(1'000'000'000);

void BM_Gradient(benchmark::State& state) {
  const RunConfig run{state.range(0), 64, 10'000, 1};
  for (auto _ : state) benchmark::DoNotOptimize(nqs_gradient(kTheta, run));
}
BENCHMARK(BM_Gradient)->Arg(100)->Arg(1'000'000'000);

void BM_BatchDual(benchmark::State& state) {
  const auto runs = random_runs(static_cast<std::size_t>(state.range(0)));
  const BatchLossEvaluator eval(runs);
  for (auto _ : state) benchmark::DoNotOptimize(eval.evaluate_dual(kTheta));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_BatchDual)->Arg(100)->Arg(1000);

void BM_LayerNorm(benchmark::State& state) {
  LayerNormConfig ln{0.5};
  ln.n_segments = state.range(0);
  const RunConfig run{1'000'000, 64, 100'000, 1};
  for (auto _ : state) benchmark::DoNotOptimize(nqs_loss_layernorm(kTheta, ln, run));
}
BENCHMARK(BM_LayerNorm)->Arg(64)->Arg(4096);

void BM_Allocate(benchmark::State& state) {
  const GridSpec grid{Axis::log_spaced(1e3, 1e9, 8), Axis::log_spaced(1, 4096, 8), Axis::log_spaced(1, 1e6, 8)};
  ConstraintSet c;
  c.compute_max = 1e18;
  c.memory_max = 1e10;
  const auto model = LossModel::nqs(kTheta);
  for (auto _ : state) benchmark::DoNotOptimize(constrained_search(model, c, grid, 1));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(grid.size()));
}
BENCHMARK(BM_Allocate)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

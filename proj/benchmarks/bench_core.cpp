#include <benchmark/benchmark.h>

#include <vector>

#include "robustssm/faults.hpp"
#include "robustssm/model.hpp"
#include "robustssm/ops.hpp"
#include "robustssm/rng.hpp"

using namespace rssm;

namespace {

Tensor uniform(Shape shape, std::uint64_t seed, double lo, double hi) {
  Tensor t(std::move(shape));
  SplitMix64 rng(seed);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

ModelConfig four_class() {
  ModelConfig cfg;
  cfg.num_classes = 4;
  return cfg;
}

void BM_Forward(benchmark::State& state) {
  const ModelConfig cfg = four_class();
  const ParameterTree params = init_model(cfg, 1);
  const auto batch = static_cast<std::size_t>(state.range(0));
  const Tensor x = uniform({batch, 1, 28, 28}, 2, 0.0, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(forward(cfg, params, x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(1)->Arg(32)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_ForwardBackward(benchmark::State& state) {
  const ModelConfig cfg = four_class();
  const ParameterTree params = init_model(cfg, 1);
  const Tensor x = uniform({32, 1, 28, 28}, 2, 0.0, 1.0);
  const std::vector<std::int32_t> labels(32, 1);
  for (auto _ : state) {
    Tape tape;
    BoundParameters bound(tape, params, true);
    const Var loss = ops::softmax_cross_entropy(forward(cfg, bound, tape.constant(x)), labels);
    benchmark::DoNotOptimize(tape.backward(loss, bound.vars()));
  }
}
BENCHMARK(BM_ForwardBackward)->Unit(benchmark::kMillisecond);

void BM_SelectiveScan(benchmark::State& state) {
  const auto len = static_cast<std::size_t>(state.range(0));
  const std::size_t batch = 8, dim = 64, n = 8;
  const Tensor u = uniform({batch, len, dim}, 1, -1.0, 1.0);
  const Tensor delta = uniform({batch, len, dim}, 2, 0.01, 0.5);
  const Tensor a_log = uniform({dim, n}, 3, -1.0, 1.0);
  const Tensor b_in = uniform({batch, len, n}, 4, -1.0, 1.0);
  const Tensor c_out = uniform({batch, len, n}, 5, -1.0, 1.0);
  const Tensor skip = uniform({dim}, 6, -1.0, 1.0);
  for (auto _ : state) {
    Tape tape;
    const Var y = ops::selective_scan(tape.constant(u), tape.constant(delta), tape.constant(a_log),
                                      tape.constant(b_in), tape.constant(c_out), tape.constant(skip), false);
    benchmark::DoNotOptimize(y.value());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch * len * dim));
}
BENCHMARK(BM_SelectiveScan)->Arg(49)->Arg(196);

void BM_ApplyPlan(benchmark::State& state) {
  ParameterTree params = init_model(four_class(), 1);
  const FaultPlan plan =
      generate_plan(params, static_cast<std::size_t>(state.range(0)), BitRegion::any, 1235);
  for (auto _ : state) {
    apply_plan_in_place(params, plan);
    benchmark::ClobberMemory();
  }
}
BENCHMARK(BM_ApplyPlan)->Arg(1)->Arg(16)->Arg(1024);

void BM_GeneratePlan(benchmark::State& state) {
  const ParameterTree params = init_model(four_class(), 1);
  std::uint64_t seed = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(generate_plan(params, static_cast<std::size_t>(state.range(0)), BitRegion::exponent,
                                           ++seed));
  }
}
BENCHMARK(BM_GeneratePlan)->Arg(1)->Arg(16);

}  // namespace

BENCHMARK_MAIN();

#include <benchmark/benchmark.h>

#include "walab/data.hpp"
#include "walab/ndcore.hpp"
#include "walab/nn.hpp"
#include "walab/quadratic.hpp"
#include "walab/rng.hpp"

using namespace walab;

namespace {

Batch batch_of(Shape shape, std::size_t n) {
  SplitMix64 rng(3);
  Batch b{shape, std::vector<double>(shape.size() * n), std::vector<int>(n)};
  for (auto& v : b.inputs) v = rng.uniform01();
  for (auto& l : b.labels) l = static_cast<int>(rng.below(10));
  return b;
}

void BM_ToyCnnForward(benchmark::State& state) {
  const Model m(toy_cnn_spec());
  const auto w = m.init_weights(1);
  const auto b = batch_of(Shape{3, 32, 32}, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(m.forward_loss(w, b));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ToyCnnForward)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_ToyCnnBackward(benchmark::State& state) {
  const Model m(toy_cnn_spec());
  const auto w = m.init_weights(1);
  const auto b = batch_of(Shape{3, 32, 32}, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(m.backward(w, b));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ToyCnnBackward)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_MlpBackward(benchmark::State& state) {
  const int dims[] = {784, 128, 10};
  const Model m(mlp_spec(dims));
  const auto w = m.init_weights(1);
  const auto b = batch_of(Shape::flat(784), 128);
  for (auto _ : state) benchmark::DoNotOptimize(m.backward(w, b));
  state.SetItemsProcessed(state.iterations() * 128);
}
BENCHMARK(BM_MlpBackward)->Unit(benchmark::kMicrosecond);

void BM_RunningAverageUpdate(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto w = WeightVector::from(std::vector<double>(n, 0.5));
  auto avg = RunningAverage::seeded(w);
  for (auto _ : state) {
    avg = running_average_update(avg, w);
    benchmark::DoNotOptimize(avg.mean().values().data());
  }
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(n * sizeof(double)));
}
BENCHMARK(BM_RunningAverageUpdate)->Arg(268650);

void BM_QuadraticSimulate(benchmark::State& state) {
  QuadSpec s;
  s.curvatures = {1.0};
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(simulate(s, seed++));
}
BENCHMARK(BM_QuadraticSimulate)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();

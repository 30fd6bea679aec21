#include <benchmark/benchmark.h>

#include <random>

#include "cfan/kernels.hpp"

namespace {

cfan::Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  cfan::Matrix m(rows, cols);
  for (auto& v : m.data()) v = n(rng);
  return m;
}

std::vector<cfan::Template> random_templates(std::size_t count, std::size_t n, std::size_t m, std::size_t d) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<cfan::Template> out(count);
  for (auto& t : out) {
    t.instances.resize(n);
    for (auto& inst : t.instances) {
      inst.feature_map.resize(m);
      inst.embedding.resize(d);
      for (auto& v : inst.feature_map) v = g(rng);
      for (auto& v : inst.embedding) v = g(rng);
    }
  }
  return out;
}

void score_args(benchmark::internal::Benchmark* b) {
  b->Args({256, 256})->Args({1024, 1024})->Args({4096, 1024});
}

void BM_ScoreSerial(benchmark::State& state) {
  const auto p = random_matrix(static_cast<std::size_t>(state.range(0)), 64, 1);
  const auto g = random_matrix(static_cast<std::size_t>(state.range(1)), 64, 2);
  for (auto _ : state) benchmark::DoNotOptimize(cfan::kernels::score_matrix_serial(p, g));
  state.SetItemsProcessed(state.iterations() * state.range(0) * state.range(1));
}
BENCHMARK(BM_ScoreSerial)->Apply(score_args)->Unit(benchmark::kMillisecond);

void BM_ScoreParallel(benchmark::State& state) {
  const auto p = random_matrix(static_cast<std::size_t>(state.range(0)), 64, 1);
  const auto g = random_matrix(static_cast<std::size_t>(state.range(1)), 64, 2);
  for (auto _ : state) benchmark::DoNotOptimize(cfan::kernels::score_matrix_parallel(p, g));
  state.SetItemsProcessed(state.iterations() * state.range(0) * state.range(1));
  state.counters["threads"] = cfan::kernels::max_threads();
}
BENCHMARK(BM_ScoreParallel)->Apply(score_args)->Unit(benchmark::kMillisecond)->UseRealTime();

struct AggregationFixture {
  std::vector<cfan::Template> templates;
  cfan::QualityHead head;

  explicit AggregationFixture(std::size_t count) : templates(random_templates(count, 5, 128, 64)) {
    std::mt19937_64 rng(3);
    head = cfan::QualityHead::initialize(128, 64, cfan::QualityMode::component_wise, rng);
  }
};

void BM_AggregateSerial(benchmark::State& state) {
  const AggregationFixture f(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state)
    benchmark::DoNotOptimize(cfan::kernels::aggregate_templates_serial(f.templates, &f.head, cfan::PoolingMode::cfan, 64));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_AggregateSerial)->Arg(1000)->Arg(5000)->Unit(benchmark::kMillisecond);

void BM_AggregateParallel(benchmark::State& state) {
  const AggregationFixture f(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state)
    benchmark::DoNotOptimize(
        cfan::kernels::aggregate_templates_parallel(f.templates, &f.head, cfan::PoolingMode::cfan, 64));
  state.SetItemsProcessed(state.iterations() * state.range(0));
  state.counters["threads"] = cfan::kernels::max_threads();
}
BENCHMARK(BM_AggregateParallel)->Arg(1000)->Arg(5000)->Unit(benchmark::kMillisecond)->UseRealTime();

}  // namespace

BENCHMARK_MAIN();

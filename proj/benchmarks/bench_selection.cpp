#include <random>
#include <string>
#include <vector>

#include <benchmark/benchmark.h>

#include "qurate/selection.hpp"

namespace {

struct Fixture {
  std::vector<std::string> ids;
  std::vector<double> scores;
  qurate::DocumentIndex index;
  std::int64_t total = 0;
};

Fixture make_fixture(std::size_t n) {
  Fixture f;
  std::mt19937_64 rng(1);
  std::normal_distribution<double> z(0, 1);
  std::uniform_int_distribution<int> len(50, 2000);
  for (std::size_t i = 0; i < n; ++i) {
    f.ids.push_back("doc" + std::to_string(i));
    f.scores.push_back(z(rng));
    const int l = len(rng);
    f.index.add(f.ids.back(), l);
    f.total += l;
  }
  return f;
}

void BM_SampleLogits(benchmark::State& state) {
  const auto f = make_fixture(static_cast<std::size_t>(state.range(0)));
  qurate::SelectionConfig cfg;
  cfg.temperature = 2.0;
  cfg.token_budget = f.total / 10;
  for (auto _ : state) {
    ++cfg.seed;
    benchmark::DoNotOptimize(qurate::sample_logits(f.ids, f.scores, cfg, f.index));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_SampleLogits)->Arg(1000)->Arg(100000);

void BM_GumbelNoise(benchmark::State& state) {
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(qurate::gumbel_noise(++seed, "doc000123"));
}
BENCHMARK(BM_GumbelNoise);

}  // namespace

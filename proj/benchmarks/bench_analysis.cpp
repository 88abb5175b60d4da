#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include <benchmark/benchmark.h>

#include "qurate/analysis.hpp"

namespace {

void BM_KendallTau(benchmark::State& state) {
  std::vector<std::string> a;
  for (int i = 0; i < state.range(0); ++i) a.push_back("d" + std::to_string(i));
  auto b = a;
  std::shuffle(b.begin(), b.end(), std::mt19937_64(3));
  for (auto _ : state) benchmark::DoNotOptimize(qurate::kendall_tau(a, b));
}
BENCHMARK(BM_KendallTau)->Arg(10)->Arg(10000);

void BM_RankCorrelations(benchmark::State& state) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> z(0, 1);
  std::vector<std::string> ids;
  std::vector<double> x, y;
  for (int i = 0; i < state.range(0); ++i) {
    ids.push_back("d" + std::to_string(i));
    x.push_back(z(rng));
    y.push_back(x.back() + z(rng));
  }
  const std::vector<qurate::RatingTable> tables{{"x", ids, x}, {"y", ids, y}};
  for (auto _ : state) benchmark::DoNotOptimize(qurate::rank_correlations(tables));
}
BENCHMARK(BM_RankCorrelations)->Arg(100000)->Unit(benchmark::kMillisecond);

}  // namespace

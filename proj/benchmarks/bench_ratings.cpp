#include <random>
#include <string>
#include <vector>

#include <benchmark/benchmark.h>

#include "qurate/ratings.hpp"

namespace {

std::vector<qurate::JudgmentRecord> judgments(std::size_t items, std::size_t count) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> z(0, 1);
  std::vector<double> latent(items);
  for (auto& x : latent) x = z(rng);
  std::uniform_int_distribution<std::size_t> pick(0, items - 1);
  std::vector<qurate::JudgmentRecord> out;
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t a = pick(rng);
    std::size_t b = pick(rng);
    while (b == a) b = pick(rng);
    qurate::JudgmentRecord r{"d" + std::to_string(a), "d" + std::to_string(b), "c"};
    r.p_b_over_a = qurate::sigmoid(latent[b] - latent[a]);
    r.n_votes = 40;
    out.push_back(r);
  }
  return out;
}

void BM_FitRatings(benchmark::State& state) {
  const auto js = judgments(static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)));
  qurate::FitConfig cfg;
  cfg.l2_weight = 1e-3;
  for (auto _ : state) benchmark::DoNotOptimize(qurate::fit_ratings(js, cfg));
}
BENCHMARK(BM_FitRatings)->Args({50, 2000})->Args({1000, 10000})->Unit(benchmark::kMillisecond);

}  // namespace

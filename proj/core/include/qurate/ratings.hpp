#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "qurate/judge.hpp"

namespace qurate {

// Per-document scalar ratings (Bradley-Terry logits) for one criterion.
// Immutable once built; safe to share across threads.
class RatingTable {
 public:
  RatingTable() = default;
  RatingTable(std::string criterion, std::vector<std::string> ids, std::vector<double> scores);

  const std::string& criterion() const noexcept { return criterion_; }
  std::size_t size() const noexcept { return ids_.size(); }
  bool empty() const noexcept { return ids_.empty(); }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const std::vector<double>& scores() const noexcept { return scores_; }

  std::optional<std::size_t> index_of(std::string_view id) const;
  bool contains(std::string_view id) const { return index_of(id).has_value(); }
  double score(std::string_view id) const;  // throws DataError naming a missing id

  // Normalization state: set by normalize(); mean and variance are the
  // statistics of the scores before standardization.
  bool normalized() const noexcept { return normalized_; }
  double normalization_mean() const noexcept { return norm_mean_; }
  double normalization_variance() const noexcept { return norm_variance_; }
  void mark_normalized(double mean, double variance) noexcept;

  RatingTable with_scores(std::vector<double> scores) const;  // keeps ids and flags
  RatingTable subset(std::span<const std::string> ids) const;  // keeps flags

 private:
  std::string criterion_;
  std::vector<std::string> ids_;
  std::vector<double> scores_;
  std::unordered_map<std::string, std::size_t> index_;
  bool normalized_ = false;
  double norm_mean_ = 0.0;
  double norm_variance_ = 1.0;
};

struct FitConfig {
  double learning_rate = 1.0;  // initial step of the line search
  int max_iters = 10000;
  double grad_tolerance = 1e-6;
  double l2_weight = 0.0;
  std::uint64_t seed = 0;
};

struct FitReport {
  int iterations = 0;
  double final_loss = 0.0;
  double grad_norm = 0.0;  // max-norm
  std::size_t n_items = 0;
  std::size_t n_judgments = 0;
};

struct FitResult {
  RatingTable table;
  FitReport report;
};

// Mean binary cross-entropy of the Bradley-Terry model over the present
// judgments, plus l2_weight * mean(s^2).
double bt_loss(const RatingTable& scores, const std::vector<JudgmentRecord>& judgments,
               double l2_weight = 0.0);

// Gradient of bt_loss with respect to scores(), in table order.
std::vector<double> bt_gradient(const RatingTable& scores,
                                const std::vector<JudgmentRecord>& judgments,
                                double l2_weight = 0.0);

// Maximum-likelihood ratings, one free parameter per document, gauge-fixed to
// mean zero. Items are ordered by first appearance in the judgment list.
FitResult fit_ratings_with_report(const std::vector<JudgmentRecord>& judgments,
                                  const FitConfig& config, std::string criterion = {});
RatingTable fit_ratings(const std::vector<JudgmentRecord>& judgments, const FitConfig& config);

// sigmoid(s_b - s_a)
double predict_preference(const RatingTable& scores, std::string_view a, std::string_view b);

// Shift and scale to sample mean 0 and variance 1 (population variance, i.e.
// divided by n).
RatingTable normalize(const RatingTable& scores);

// Fraction of judgments with margin >= `margin` whose preferred side agrees
// with sign(s_B - s_A). A tie on either side counts 0.5.
double held_out_accuracy(const RatingTable& scores, const std::vector<JudgmentRecord>& judgments,
                         double margin);

double sigmoid(double x) noexcept;
// log(1 + exp(x)) without overflow.
double softplus(double x) noexcept;

// Ratings files: JSON Lines {"id": ..., "<criterion>": score, ...} with a
// "<path>.meta.json" sidecar describing each criterion.
struct RatingsProvenance {
  std::string judgments_digest;
  std::string source;  // "fit" or "annotate"
  FitConfig fit;
  bool has_fit = false;
};

struct CriterionStats {
  std::string name;
  std::size_t count = 0;
  bool normalized = false;
  double mean = 0.0;
  double variance = 1.0;
};

void write_ratings(const std::string& path, const std::vector<RatingTable>& tables,
                   const RatingsProvenance& provenance = {});
// Writes only the "<path>.meta.json" sidecar (for streaming writers).
void write_ratings_meta(const std::string& path, const std::vector<CriterionStats>& criteria,
                        const RatingsProvenance& provenance);
RatingTable read_ratings(const std::string& path, std::string_view criterion);
std::vector<std::string> ratings_criteria(const std::string& path);

}  // namespace qurate

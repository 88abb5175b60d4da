#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "qurate/ratings.hpp"

namespace qurate {

// doc_id -> attribute labels (topic cluster, role, region, domain, ...).
class AttributeTable {
 public:
  void add(std::string id, std::vector<std::string> labels);  // throws on empty labels or repeated ids
  const std::vector<std::string>* find(const std::string& id) const;
  std::size_t size() const noexcept { return labels_.size(); }
  const std::vector<std::string>& ids() const noexcept { return order_; }

 private:
  std::unordered_map<std::string, std::vector<std::string>> labels_;
  std::vector<std::string> order_;
};

// JSON Lines {"id": str, "labels": [str, ...]}.
AttributeTable read_attributes(const std::string& path);

struct AttributeRetention {
  std::string label;
  std::int64_t retained = 0;
  std::int64_t total = 0;
  double rate = 0.0;
};

// Multi-label documents count once per label in both numerator and denominator.
struct RetentionReport {
  std::vector<AttributeRetention> attributes;  // sorted by label
  std::int64_t selected = 0;
  std::int64_t universe = 0;
  double selection_fraction = 0.0;
  std::int64_t omitted_empty = 0;  // labels with zero total (never emitted)
};

// Throws DataError when a selected id is not in the attribute table.
RetentionReport retention_rates(const AttributeTable& attributes, const std::unordered_set<std::string>& selected);

// (concordant - discordant) / C(n, 2) between two orderings of the same ids.
// O(n log n) by counting inversions.
double kendall_tau(std::span<const std::string> ranking_a, std::span<const std::string> ranking_b);

struct CorrelationMatrices {
  std::vector<std::string> criteria;
  std::vector<std::vector<double>> pearson;
  std::vector<std::vector<double>> spearman;
};

// Pearson on scores and Spearman on average ranks, aligned by id. All tables
// must cover the same ids.
CorrelationMatrices rank_correlations(const std::vector<RatingTable>& tables);

// Average ranks (1-based, ties share the mean rank).
std::vector<double> average_ranks(std::span<const double> values);

struct PercentilePick {
  std::string group;  // empty when not grouped
  double percentile = 0.0;
  std::string id;
  double score = 0.0;
};

struct PercentileResult {
  std::vector<PercentilePick> picks;
  std::int64_t empty_groups = 0;
};

// For each q, the document at rank ceil(q / 100 * n) in ascending score order
// (ties by ascending id), with the rank clamped to [1, n]. With group_by, runs
// separately within each label's documents.
PercentileResult percentile_documents(const RatingTable& ratings, std::span<const double> percentiles,
                                      const AttributeTable* group_by = nullptr);

// Truncates to at most max_bytes without splitting a UTF-8 sequence.
std::string truncate_utf8(std::string_view text, std::size_t max_bytes);

void write_retention_csv(std::ostream& out, const RetentionReport& report);
void write_correlations_csv(std::ostream& out, const CorrelationMatrices& matrices);
void print_retention_table(std::ostream& out, const RetentionReport& report);
void print_correlation_table(std::ostream& out, const CorrelationMatrices& matrices);

}  // namespace qurate

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qurate/corpus.hpp"
#include "qurate/ratings.hpp"

namespace qurate {

struct SelectionConfig {
  double temperature = 1.0;  // 0 selects the top-k path
  std::int64_t token_budget = 0;
  bool inverse = false;
  std::uint64_t seed = 0;
  std::optional<std::map<std::string, double>> domain_proportions;
  unsigned jobs = 1;  // worker threads for key assignment; does not affect results
};

struct SelectionEntry {
  std::string id;
  double gumbel_key = 0.0;  // the score itself on the top-k path
  std::int64_t sample_rank = 0;  // 1-based
  std::string domain;
  std::int64_t token_count = 0;
};

// Ordered by descending key (ties by ascending id); an entry's rank is its
// position in that order.
struct SelectionResult {
  std::vector<SelectionEntry> entries;
  std::int64_t total_tokens = 0;
  SelectionConfig config;
  std::string method;  // "sample", "topk", "mix", or "per_domain:<inner>"
};

// Gumbel noise for a document: a pure function of (seed, doc_id).
double gumbel_noise(std::uint64_t seed, std::string_view doc_id);

// score / temperature + noise. Throws UsageError for temperature <= 0.
double gumbel_key(double score, double temperature, double noise);

// Sampling engine on raw logits: every document gets score/temperature plus
// its own Gumbel noise and documents are taken in descending key order until
// the running token count first reaches the budget (the crossing document is
// included). Equivalent in distribution to sequential softmax sampling
// without replacement. Does not require normalized scores.
SelectionResult sample_logits(std::span<const std::string> ids, std::span<const double> scores,
                              const SelectionConfig& config, const DocumentIndex& corpus);

// Softmax sampling without replacement over normalized ratings.
SelectionResult sample_without_replacement(const RatingTable& ratings, const SelectionConfig& config,
                                           const DocumentIndex& corpus);

// Highest scores first, ties by ascending id, until the budget is reached.
SelectionResult select_topk(const RatingTable& ratings, std::int64_t token_budget,
                            const DocumentIndex& corpus);

// Dispatches on temperature (0 means top-k) after applying `inverse`.
SelectionResult select(const RatingTable& ratings, const SelectionConfig& config,
                       const DocumentIndex& corpus);

RatingTable invert_ratings(const RatingTable& ratings);

// Union of the inputs without repeated ids (first occurrence kept), then a
// uniform random subsample until the budget is reached.
SelectionResult mix_criteria(const std::vector<SelectionResult>& selections, std::int64_t token_budget,
                             std::uint64_t seed);

// Per-domain budgets by largest-remainder rounding of proportion * budget;
// each domain is selected independently with the configured method and the
// results are merged by key.
SelectionResult select_per_domain(const RatingTable& ratings, const SelectionConfig& config,
                                  const DocumentIndex& corpus);

// Largest-remainder apportionment; ties go to the lexicographically smaller domain.
std::map<std::string, std::int64_t> apportion_budget(const std::map<std::string, double>& proportions,
                                                     std::int64_t token_budget);

enum class CurriculumDirection { kSampledOrder, kReverseSampledOrder, kShuffled };

CurriculumDirection parse_curriculum_direction(std::string_view name);
std::string_view to_string(CurriculumDirection direction);

std::vector<std::string> curriculum_order(const SelectionResult& selection, CurriculumDirection direction,
                                          std::uint64_t seed = 0);

// Manifest files: a header line echoing the configuration, then one line per
// entry {"id", "gumbel_key", "sample_rank", "domain", "token_count"}.
struct ManifestHeader {
  std::string ratings_digest;
  std::string criterion;
  std::string extra_json;  // optional serialized object merged into the header
};

void write_manifest(const std::string& path, const SelectionResult& result, const ManifestHeader& header);
SelectionResult read_manifest(const std::string& path);

}  // namespace qurate

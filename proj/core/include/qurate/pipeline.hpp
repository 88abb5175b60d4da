#pragma once

// The end-to-end curation pipeline behind the `qurate` subcommands:
// judge -> fit -> annotate -> select -> curriculum / analyze.
//
// Every stage is deterministic given its configuration and the top-level
// seed. Stage seeds are derived by hashing the stage name into that seed.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "qurate/analysis.hpp"
#include "qurate/corpus.hpp"
#include "qurate/http_judge.hpp"
#include "qurate/judge.hpp"
#include "qurate/ratings.hpp"
#include "qurate/selection.hpp"

namespace qurate {

struct PipelinePaths {
  std::string corpus;
  std::string judgments;
  std::string fit_ratings;  // per-document ratings fitted to the judgments
  std::string ratings;      // corpus-wide annotated ratings
  std::string manifest;
  std::string attributes;
  std::string curriculum;
  std::string report_dir;
  std::string latent_ratings;  // ground truth for the simulated judge
  std::string segment_scores;  // precomputed segment scores for annotation
};

struct JudgeSettings {
  std::string kind = "simulated";  // "simulated" or "http"
  double positional_bias = 0.0;
  int votes_per_order = kDefaultVotesPerOrder;
  std::int64_t random_pairs = 0;                      // pairs drawn across the whole corpus
  std::map<std::string, std::int64_t> domain_quotas;  // extra pairs drawn within a domain
  std::int64_t max_records = -1;                      // stop after this many new records; -1 = no limit
  HttpJudgeConfig http;
};

struct AnalyzeSettings {
  std::vector<double> percentiles{5.0, 30.0, 70.0, 95.0};
  std::size_t excerpt_bytes = 400;
  bool group_percentiles = false;
};

struct PipelineConfig {
  PipelinePaths paths;
  std::vector<std::string> criteria;
  std::uint64_t seed = 0;
  unsigned jobs = 1;
  int verbosity = 1;
  std::string tokenizer = "whitespace";
  std::size_t max_segment_len = kDefaultMaxSegmentLen;

  JudgeSettings judge;

  FitConfig fit;
  double fit_min_margin = 0.5;    // training judgments need at least this margin
  double heldout_fraction = 0.1;
  double heldout_margin = 0.5;

  SelectionConfig selection;
  std::string curriculum_direction = "reverse-sampled-order";

  AnalyzeSettings analyze;
};

// Reads a JSON configuration file; unknown keys are rejected.
PipelineConfig load_pipeline_config(const std::string& path);
// Applies a JSON object of settings on top of `config` (same schema as the file).
void apply_config_json(PipelineConfig& config, const std::string& json_text);

// Scores one segment of a document for a criterion; nullopt when unscorable.
class SegmentScorer {
 public:
  virtual ~SegmentScorer() = default;
  virtual std::optional<double> score(const Segment& segment, const std::string& criterion) const = 0;
};

// Scores every segment with the document's fitted rating.
class TableScorer final : public SegmentScorer {
 public:
  explicit TableScorer(std::vector<RatingTable> tables);
  std::optional<double> score(const Segment& segment, const std::string& criterion) const override;

 private:
  std::map<std::string, RatingTable> tables_;
};

// Looks segment scores up in a JSON Lines file of
// {"id": doc_id, "segment": index, "<criterion>": score, ...}.
class SegmentFileScorer final : public SegmentScorer {
 public:
  explicit SegmentFileScorer(const std::string& path);
  std::optional<double> score(const Segment& segment, const std::string& criterion) const override;

 private:
  std::map<std::pair<std::string, std::size_t>, std::map<std::string, double>> scores_;
};

struct JudgeSummary {
  std::int64_t pairs = 0;
  std::int64_t written = 0;
  std::int64_t skipped_existing = 0;
  std::int64_t absent = 0;
  bool stopped_early = false;
};

struct FitCriterionSummary {
  std::string criterion;
  FitReport report;
  std::size_t train_judgments = 0;
  std::size_t heldout_judgments = 0;
  std::optional<double> heldout_accuracy;
};

struct AnnotateSummary {
  std::int64_t documents = 0;
  std::map<std::string, std::int64_t> rated;
  std::map<std::string, std::int64_t> absent;
};

struct AnalyzeSummary {
  std::optional<RetentionReport> retention;
  std::optional<CorrelationMatrices> correlations;
  std::vector<PercentilePick> percentiles;
};

JudgeSummary run_judge(const PipelineConfig& config, std::ostream& log);
std::vector<FitCriterionSummary> run_fit(const PipelineConfig& config, std::ostream& log);
AnnotateSummary run_annotate(const PipelineConfig& config, std::ostream& log,
                             const SegmentScorer* scorer = nullptr);
SelectionResult run_select(const PipelineConfig& config, std::ostream& log);
std::vector<std::string> run_curriculum(const PipelineConfig& config, std::ostream& log);
AnalyzeSummary run_analyze(const PipelineConfig& config, std::ostream& log);

// Sampled document pairs for judging; deterministic given the seed.
struct DocPair {
  std::size_t a;
  std::size_t b;
};
std::vector<DocPair> sample_pairs(const std::vector<std::string>& domains, std::int64_t random_pairs,
                                  const std::map<std::string, std::int64_t>& domain_quotas, std::uint64_t seed);

}  // namespace qurate

// qurate: judge, fit, annotate, select, curriculum, analyze.
//
// Settings come from an optional JSON config file (--config); flags given on
// the command line override it.

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "qurate/error.hpp"
#include "qurate/pipeline.hpp"

namespace {

using qurate::ExitCode;
using qurate::PipelineConfig;

struct Flags {
  std::string config_path;
  std::uint64_t seed = 0;
  std::vector<std::string> criteria;
  double temperature = 1.0;
  std::int64_t budget_tokens = 0;
  bool inverse = false;
  unsigned jobs = 1;
  int verbose = 0;
  bool quiet = false;

  std::string corpus, judgments, fit_ratings, ratings, manifest, attributes, output, report_dir,
      latent_ratings, segment_scores;
  std::string direction;
  std::string judge_kind;
  double positional_bias = 0.0;
  int votes_per_order = 0;
  std::int64_t pairs = 0;
  std::int64_t max_records = -1;
  std::string base_url, model;
};

struct Options {
  CLI::Option* seed = nullptr;
  CLI::Option* temperature = nullptr;
  CLI::Option* budget = nullptr;
  CLI::Option* inverse = nullptr;
  CLI::Option* jobs = nullptr;
  CLI::Option* bias = nullptr;
  CLI::Option* votes = nullptr;
  CLI::Option* pairs = nullptr;
  CLI::Option* max_records = nullptr;
};

void add_common(CLI::App* cmd, Flags& f, Options& o) {
  cmd->add_option("--config", f.config_path, "JSON configuration file")->check(CLI::ExistingFile);
  o.seed = cmd->add_option("--seed", f.seed, "Top-level random seed");
  cmd->add_option("--criterion", f.criteria, "Criterion name (repeatable)");
  o.temperature = cmd->add_option("--temperature", f.temperature, "Sampling temperature; 0 selects top-k");
  o.budget = cmd->add_option("--budget-tokens", f.budget_tokens, "Token budget for the selection");
  o.inverse = cmd->add_flag("--inverse", f.inverse, "Negate ratings before selecting");
  o.jobs = cmd->add_option("--jobs", f.jobs, "Worker threads")->check(CLI::PositiveNumber);
  cmd->add_flag("-v,--verbose", f.verbose, "More output");
  cmd->add_flag("-q,--quiet", f.quiet, "No progress output");
}

void set_if(std::string& dst, const std::string& src) {
  if (!src.empty()) dst = src;
}

PipelineConfig build_config(const Flags& f, const Options& o, const std::string& command) {
  PipelineConfig c = f.config_path.empty() ? PipelineConfig{} : qurate::load_pipeline_config(f.config_path);
  if (o.seed->count()) c.seed = f.seed;
  if (!f.criteria.empty()) c.criteria = f.criteria;
  if (o.temperature->count()) c.selection.temperature = f.temperature;
  if (o.budget->count()) c.selection.token_budget = f.budget_tokens;
  if (o.inverse->count()) c.selection.inverse = f.inverse;
  if (o.jobs->count()) c.jobs = f.jobs;
  if (f.quiet) c.verbosity = 0;
  c.verbosity += f.verbose;

  set_if(c.paths.corpus, f.corpus);
  set_if(c.paths.judgments, f.judgments);
  set_if(c.paths.fit_ratings, f.fit_ratings);
  set_if(c.paths.ratings, f.ratings);
  set_if(c.paths.manifest, f.manifest);
  set_if(c.paths.attributes, f.attributes);
  set_if(c.paths.report_dir, f.report_dir);
  set_if(c.paths.latent_ratings, f.latent_ratings);
  set_if(c.paths.segment_scores, f.segment_scores);
  if (!f.output.empty()) {
    if (command == "judge") c.paths.judgments = f.output;
    if (command == "fit") c.paths.fit_ratings = f.output;
    if (command == "annotate") c.paths.ratings = f.output;
    if (command == "select") c.paths.manifest = f.output;
    if (command == "curriculum") c.paths.curriculum = f.output;
    if (command == "analyze") c.paths.report_dir = f.output;
  }
  set_if(c.curriculum_direction, f.direction);
  set_if(c.judge.kind, f.judge_kind);
  set_if(c.judge.http.base_url, f.base_url);
  set_if(c.judge.http.model, f.model);
  if (o.bias && o.bias->count()) c.judge.positional_bias = f.positional_bias;
  if (o.votes && o.votes->count()) c.judge.votes_per_order = f.votes_per_order;
  if (o.pairs && o.pairs->count()) c.judge.random_pairs = f.pairs;
  if (o.max_records && o.max_records->count()) c.judge.max_records = f.max_records;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qurate: pairwise-judgment quality ratings and corpus selection"};
  app.set_version_flag("--version", std::string(QURATE_VERSION));
  app.require_subcommand(1);

  Flags f;
  std::vector<std::pair<CLI::App*, Options>> commands;

  auto* judge = app.add_subcommand("judge", "Collect pairwise judgments for sampled document pairs");
  Options judge_opts;
  add_common(judge, f, judge_opts);
  judge->add_option("--corpus", f.corpus, "Corpus JSON Lines");
  judge->add_option("--output,--judgments", f.judgments, "Judgment file (appended to on resume)");
  judge->add_option("--judge", f.judge_kind, "simulated or http")->check(CLI::IsMember({"simulated", "http"}));
  judge->add_option("--latent-ratings", f.latent_ratings, "Ground-truth ratings for the simulated judge");
  judge_opts.bias = judge->add_option("--positional-bias", f.positional_bias, "Simulated first-position bias");
  judge_opts.votes = judge->add_option("--votes-per-order", f.votes_per_order, "Votes in each presentation order");
  judge_opts.pairs = judge->add_option("--pairs", f.pairs, "Random pairs across the corpus");
  judge_opts.max_records = judge->add_option("--max-records", f.max_records, "Stop after this many new records");
  judge->add_option("--base-url", f.base_url, "Chat-completion endpoint base URL");
  judge->add_option("--model", f.model, "Judge model name");
  commands.emplace_back(judge, judge_opts);

  auto* fit = app.add_subcommand("fit", "Fit Bradley-Terry ratings to judgments");
  Options fit_opts;
  add_common(fit, f, fit_opts);
  fit->add_option("--judgments", f.judgments, "Judgment file");
  fit->add_option("--output,--fit-ratings", f.fit_ratings, "Fitted ratings file");
  commands.emplace_back(fit, fit_opts);

  auto* annotate = app.add_subcommand("annotate", "Rate every document of a corpus");
  Options annotate_opts;
  add_common(annotate, f, annotate_opts);
  annotate->add_option("--corpus", f.corpus, "Corpus JSON Lines");
  annotate->add_option("--fit-ratings", f.fit_ratings, "Fitted ratings used as segment scorer");
  annotate->add_option("--segment-scores", f.segment_scores, "Precomputed segment scores");
  annotate->add_option("--output,--ratings", f.ratings, "Corpus ratings file");
  commands.emplace_back(annotate, annotate_opts);

  auto* sel = app.add_subcommand("select", "Sample a subset of the corpus under a token budget");
  Options select_opts;
  add_common(sel, f, select_opts);
  sel->add_option("--corpus", f.corpus, "Corpus JSON Lines");
  sel->add_option("--ratings", f.ratings, "Corpus ratings file");
  sel->add_option("--output,--manifest", f.manifest, "Selection manifest");
  commands.emplace_back(sel, select_opts);

  auto* curriculum = app.add_subcommand("curriculum", "Order a selection for training");
  Options curriculum_opts;
  add_common(curriculum, f, curriculum_opts);
  curriculum->add_option("--manifest", f.manifest, "Selection manifest");
  curriculum->add_option("--direction", f.direction, "sampled-order, reverse-sampled-order or shuffled");
  curriculum->add_option("--output", f.output, "Ordered id list");
  commands.emplace_back(curriculum, curriculum_opts);

  auto* analyze = app.add_subcommand("analyze", "Retention rates, correlations and percentile documents");
  Options analyze_opts;
  add_common(analyze, f, analyze_opts);
  analyze->add_option("--manifest", f.manifest, "Selection manifest");
  analyze->add_option("--attributes", f.attributes, "Attribute labels JSON Lines");
  analyze->add_option("--ratings", f.ratings, "Corpus ratings file");
  analyze->add_option("--corpus", f.corpus, "Corpus JSON Lines (for excerpts)");
  analyze->add_option("--output,--report-dir", f.report_dir, "Report directory");
  commands.emplace_back(analyze, analyze_opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::kUsage);
  }

  try {
    for (auto& [cmd, opts] : commands) {
      if (!cmd->parsed()) continue;
      const std::string name = cmd->get_name();
      const PipelineConfig config = build_config(f, opts, name);
      std::ostream& log = std::cerr;
      if (name == "judge") qurate::run_judge(config, log);
      if (name == "fit") qurate::run_fit(config, log);
      if (name == "annotate") qurate::run_annotate(config, log);
      if (name == "select") qurate::run_select(config, log);
      if (name == "curriculum") qurate::run_curriculum(config, log);
      if (name == "analyze") {
        // Tables go to stdout; file outputs to the report directory.
        qurate::run_analyze(config, config.verbosity > 0 ? std::cout : log);
      }
    }
  } catch (const qurate::Error& e) {
    std::cerr << "qurate: " << e.what() << '\n';
    return static_cast<int>(e.exit_code());
  } catch (const std::exception& e) {
    std::cerr << "qurate: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kData);
  }
  return static_cast<int>(ExitCode::kSuccess);
}

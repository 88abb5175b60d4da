#include "qurate/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_set>

#include "jsonl.hpp"
#include "qurate/hashing.hpp"

namespace qurate {
namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

void require_path(const std::string& value, const char* what) {
  if (value.empty()) throw UsageError(std::string("missing path: ") + what);
}

void require_input(const std::string& path, const char* what) {
  require_path(path, what);
  if (!fs::exists(path)) throw DataError(std::string(what) + " not found: " + path);
}

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw UsageError("config: \"" + where + "\" must be an object");
  for (const auto& [key, _] : obj.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw UsageError("config: unknown key \"" + key + "\" in " + where);
    }
  }
}

template <typename T>
void take(const json& obj, const char* key, T& out) {
  if (const auto it = obj.find(key); it != obj.end()) {
    try {
      out = it->get<T>();
    } catch (const json::exception&) {
      throw UsageError(std::string("config: \"") + key + "\" has the wrong type");
    }
  }
}

std::string provenance_line(const ojson& header) { return "# " + header.dump(); }

std::vector<std::string> resolve_criteria(const PipelineConfig& config, const std::string& ratings_path) {
  if (!config.criteria.empty()) return config.criteria;
  auto names = ratings_criteria(ratings_path);
  if (names.empty()) throw UsageError("no criteria configured and none recorded in " + ratings_path + ".meta.json");
  return names;
}

std::string judgment_key(std::string_view a, std::string_view b, std::string_view criterion) {
  std::string key = make_pair_id(a, b);
  key.push_back('\x1f');
  key.append(criterion);
  return key;
}

std::unordered_map<std::string, double> to_map(const RatingTable& table) {
  std::unordered_map<std::string, double> out;
  out.reserve(table.size());
  for (std::size_t i = 0; i < table.size(); ++i) out.emplace(table.ids()[i], table.scores()[i]);
  return out;
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads; exceptions are returned
// per index rather than thrown.
void parallel_indices(std::size_t n, unsigned jobs, const std::function<void(std::size_t)>& fn,
                      std::vector<std::exception_ptr>& errors) {
  errors.assign(n, nullptr);
  auto guarded = [&](std::size_t i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) guarded(i);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(jobs, n);
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) guarded(i);
    });
  }
  for (auto& t : threads) t.join();
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

void apply_config_json(PipelineConfig& c, const std::string& json_text) {
  const json root = json::parse(json_text, nullptr, false);
  if (root.is_discarded()) throw UsageError("config: malformed JSON");
  check_keys(root,
             {"seed", "jobs", "verbosity", "tokenizer", "max_segment_len", "criteria", "paths", "judge", "fit",
              "select", "curriculum", "analyze"},
             "top level");
  take(root, "seed", c.seed);
  take(root, "jobs", c.jobs);
  take(root, "verbosity", c.verbosity);
  take(root, "tokenizer", c.tokenizer);
  take(root, "max_segment_len", c.max_segment_len);
  take(root, "criteria", c.criteria);

  if (root.contains("paths")) {
    const auto& p = root["paths"];
    check_keys(p,
               {"corpus", "judgments", "fit_ratings", "ratings", "manifest", "attributes", "curriculum",
                "report_dir", "latent_ratings", "segment_scores"},
               "paths");
    take(p, "corpus", c.paths.corpus);
    take(p, "judgments", c.paths.judgments);
    take(p, "fit_ratings", c.paths.fit_ratings);
    take(p, "ratings", c.paths.ratings);
    take(p, "manifest", c.paths.manifest);
    take(p, "attributes", c.paths.attributes);
    take(p, "curriculum", c.paths.curriculum);
    take(p, "report_dir", c.paths.report_dir);
    take(p, "latent_ratings", c.paths.latent_ratings);
    take(p, "segment_scores", c.paths.segment_scores);
  }
  if (root.contains("judge")) {
    const auto& j = root["judge"];
    check_keys(j,
               {"kind", "positional_bias", "votes_per_order", "random_pairs", "domain_quotas", "max_records",
                "base_url", "model", "max_retries", "initial_backoff_ms", "timeout_s", "temperature"},
               "judge");
    take(j, "kind", c.judge.kind);
    take(j, "positional_bias", c.judge.positional_bias);
    take(j, "votes_per_order", c.judge.votes_per_order);
    take(j, "random_pairs", c.judge.random_pairs);
    take(j, "domain_quotas", c.judge.domain_quotas);
    take(j, "max_records", c.judge.max_records);
    take(j, "base_url", c.judge.http.base_url);
    take(j, "model", c.judge.http.model);
    take(j, "max_retries", c.judge.http.max_retries);
    take(j, "temperature", c.judge.http.temperature);
    if (j.contains("initial_backoff_ms")) {
      c.judge.http.initial_backoff = std::chrono::milliseconds(j["initial_backoff_ms"].get<std::int64_t>());
    }
    if (j.contains("timeout_s")) c.judge.http.timeout = std::chrono::seconds(j["timeout_s"].get<std::int64_t>());
  }
  if (root.contains("fit")) {
    const auto& f = root["fit"];
    check_keys(f,
               {"learning_rate", "max_iters", "grad_tolerance", "l2_weight", "min_margin", "heldout_fraction",
                "heldout_margin"},
               "fit");
    take(f, "learning_rate", c.fit.learning_rate);
    take(f, "max_iters", c.fit.max_iters);
    take(f, "grad_tolerance", c.fit.grad_tolerance);
    take(f, "l2_weight", c.fit.l2_weight);
    take(f, "min_margin", c.fit_min_margin);
    take(f, "heldout_fraction", c.heldout_fraction);
    take(f, "heldout_margin", c.heldout_margin);
  }
  if (root.contains("select")) {
    const auto& s = root["select"];
    check_keys(s, {"temperature", "budget_tokens", "inverse", "domain_proportions"}, "select");
    take(s, "temperature", c.selection.temperature);
    take(s, "budget_tokens", c.selection.token_budget);
    take(s, "inverse", c.selection.inverse);
    if (s.contains("domain_proportions") && !s["domain_proportions"].is_null()) {
      std::map<std::string, double> props;
      take(s, "domain_proportions", props);
      c.selection.domain_proportions = props;
    }
  }
  if (root.contains("curriculum")) {
    check_keys(root["curriculum"], {"direction"}, "curriculum");
    take(root["curriculum"], "direction", c.curriculum_direction);
  }
  if (root.contains("analyze")) {
    const auto& a = root["analyze"];
    check_keys(a, {"percentiles", "excerpt_bytes", "group_percentiles"}, "analyze");
    take(a, "percentiles", c.analyze.percentiles);
    take(a, "excerpt_bytes", c.analyze.excerpt_bytes);
    take(a, "group_percentiles", c.analyze.group_percentiles);
  }
}

PipelineConfig load_pipeline_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  PipelineConfig config;
  apply_config_json(config, buf.str());
  return config;
}

// ---------------------------------------------------------------------------
// Scorers

TableScorer::TableScorer(std::vector<RatingTable> tables) {
  for (auto& t : tables) {
    const std::string name = t.criterion();
    tables_.emplace(name, std::move(t));
  }
}

std::optional<double> TableScorer::score(const Segment& segment, const std::string& criterion) const {
  const auto it = tables_.find(criterion);
  if (it == tables_.end()) return std::nullopt;
  const auto i = it->second.index_of(segment.doc_id);
  if (!i) return std::nullopt;
  return it->second.scores()[*i];
}

SegmentFileScorer::SegmentFileScorer(const std::string& path) {
  jsonl::Reader reader(path);
  while (auto rec = reader.next()) {
    if (jsonl::is_header(*rec)) continue;
    const auto line = reader.line_number();
    auto id = jsonl::require<std::string>(*rec, "id", path, line);
    const auto segment = jsonl::require<std::size_t>(*rec, "segment", path, line);
    auto& slot = scores_[{std::move(id), segment}];
    for (const auto& [key, value] : rec->items()) {
      if (key == "id" || key == "segment" || !value.is_number()) continue;
      slot[key] = value.get<double>();
    }
  }
}

std::optional<double> SegmentFileScorer::score(const Segment& segment, const std::string& criterion) const {
  const auto it = scores_.find({segment.doc_id, segment.index});
  if (it == scores_.end()) return std::nullopt;
  const auto c = it->second.find(criterion);
  if (c == it->second.end()) return std::nullopt;
  return c->second;
}

// ---------------------------------------------------------------------------
// Pair sampling

std::vector<DocPair> sample_pairs(const std::vector<std::string>& domains, std::int64_t random_pairs,
                                  const std::map<std::string, std::int64_t>& domain_quotas, std::uint64_t seed) {
  const CounterRng rng(seed);
  std::set<std::pair<std::size_t, std::size_t>> used;
  std::vector<DocPair> pairs;

  auto draw = [&](const std::vector<std::size_t>& pool, std::int64_t count, std::string_view label) {
    if (count <= 0) return;
    const auto n = pool.size();
    if (n < 2) throw DataError("cannot sample pairs from " + std::string(label) + ": fewer than 2 documents");
    const double possible = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
    if (static_cast<double>(count) > possible) {
      throw DataError("cannot sample " + std::to_string(count) + " distinct pairs from " + std::string(label));
    }
    const std::uint64_t stream = fnv1a64(label);
    std::uint64_t counter = 0;
    std::int64_t made = 0;
    const std::uint64_t max_draws = 64 * static_cast<std::uint64_t>(count) + 4096;
    while (made < count) {
      if (counter > 2 * max_draws) {
        throw DataError("pair sampling for " + std::string(label) + " is too dense; lower the pair count");
      }
      const auto i = static_cast<std::size_t>(rng.uniform(stream, counter++) * static_cast<double>(n));
      auto j = static_cast<std::size_t>(rng.uniform(stream, counter++) * static_cast<double>(n - 1));
      if (j >= i) ++j;
      const std::size_t a = pool[i], b = pool[j];
      if (used.emplace(std::min(a, b), std::max(a, b)).second) {
        pairs.push_back({a, b});
        ++made;
      }
    }
  };

  std::vector<std::size_t> all(domains.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  draw(all, random_pairs, "pairs:all");
  for (const auto& [domain, quota] : domain_quotas) {
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < domains.size(); ++i) {
      if (domains[i] == domain) pool.push_back(i);
    }
    draw(pool, quota, "pairs:domain:" + domain);
  }
  return pairs;
}

// ---------------------------------------------------------------------------
// judge

JudgeSummary run_judge(const PipelineConfig& config, std::ostream& log) {
  require_path(config.paths.judgments, "judgments");
  require_input(config.paths.corpus, "corpus");
  if (config.criteria.empty()) throw UsageError("judge: no criteria configured");
  for (const auto& c : config.criteria) config.judge.http.criteria.at(c);
  if (config.judge.votes_per_order < 1) throw UsageError("votes_per_order must be at least 1");

  const auto tokenizer = make_tokenizer(config.tokenizer);
  const std::uint64_t judge_seed = derive_seed(config.seed, "judge");

  std::map<std::string, std::unique_ptr<Judge>> judges;
  if (config.judge.kind == "simulated") {
    require_input(config.paths.latent_ratings, "latent ratings");
    for (const auto& c : config.criteria) {
      judges[c] = std::make_unique<SimulatedJudge>(to_map(read_ratings(config.paths.latent_ratings, c)),
                                                   config.judge.positional_bias, derive_seed(judge_seed, c));
    }
  } else if (config.judge.kind == "http") {
    auto shared = std::make_shared<HttpChatJudge>(config.judge.http);
    struct Forward final : Judge {
      std::shared_ptr<HttpChatJudge> inner;
      std::optional<Slot> vote(const VoteRequest& r) override { return inner->vote(r); }
    };
    for (const auto& c : config.criteria) {
      auto f = std::make_unique<Forward>();
      f->inner = shared;
      judges[c] = std::move(f);
    }
  } else {
    throw UsageError("unknown judge kind \"" + config.judge.kind + "\"");
  }

  jsonl::LockFile lock(config.paths.judgments);

  const DocumentIndex index = index_corpus(config.paths.corpus, *tokenizer);
  std::vector<std::string> domains;
  domains.reserve(index.size());
  for (const auto& id : index.ids()) domains.push_back(index.at(id).domain);
  const auto pairs = sample_pairs(domains, config.judge.random_pairs, config.judge.domain_quotas, judge_seed);

  std::unordered_set<std::string> done;
  const bool resuming = fs::exists(config.paths.judgments) && fs::file_size(config.paths.judgments) > 0;
  if (resuming) {
    for (const auto& r : read_judgments(config.paths.judgments)) {
      done.insert(judgment_key(r.text_a_id, r.text_b_id, r.criterion));
    }
  }

  JudgeSummary summary;
  summary.pairs = static_cast<std::int64_t>(pairs.size());

  struct Task {
    std::size_t pair;
    std::vector<std::string> criteria;
  };
  std::vector<Task> tasks;
  std::unordered_set<std::string> needed;
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto& a = index.ids()[pairs[p].a];
    const auto& b = index.ids()[pairs[p].b];
    Task t{p, {}};
    for (const auto& c : config.criteria) {
      if (done.count(judgment_key(a, b, c))) {
        ++summary.skipped_existing;
      } else {
        t.criteria.push_back(c);
      }
    }
    if (!t.criteria.empty()) {
      needed.insert(a);
      needed.insert(b);
      tasks.push_back(std::move(t));
    }
  }

  std::unordered_map<std::string, std::string> texts;
  if (!tasks.empty()) {
    for_each_document(
        config.paths.corpus, *tokenizer,
        [&](Document&& doc) {
          if (needed.count(doc.id)) texts.emplace(doc.id, std::move(doc.text));
        },
        ReaderOptions{.check_unique_ids = false});
  }

  std::ofstream out(config.paths.judgments, std::ios::app | std::ios::binary);
  if (!out) throw DataError("cannot open " + config.paths.judgments + " for writing");
  if (!resuming) {
    ojson header;
    header["version"] = QURATE_VERSION;
    header["corpus_digest"] = file_digest(config.paths.corpus);
    header["seed"] = config.seed;
    header["judge"] = config.judge.kind;
    header["votes_per_order"] = config.judge.votes_per_order;
    header["criteria"] = config.criteria;
    if (config.judge.kind == "http") header["model"] = config.judge.http.model;
    out << ojson{{"header", header}}.dump() << '\n';
  }

  const std::size_t batch = std::max<std::size_t>(1, static_cast<std::size_t>(config.jobs) * 8);
  for (std::size_t start = 0; start < tasks.size(); start += batch) {
    const std::size_t end = std::min(tasks.size(), start + batch);
    std::vector<std::vector<JudgmentRecord>> results(end - start);
    std::vector<std::exception_ptr> errors;
    parallel_indices(
        end - start, config.jobs,
        [&](std::size_t k) {
          const Task& task = tasks[start + k];
          const auto& a = index.ids()[pairs[task.pair].a];
          const auto& b = index.ids()[pairs[task.pair].b];
          const std::uint64_t pair_stream = fnv1a64(make_pair_id(a, b));
          const std::size_t length = draw_snippet_length(judge_seed, pair_stream);
          const auto snip_a = extract_snippet(texts.at(a), *tokenizer, length, judge_seed, pair_stream ^ fnv1a64(a));
          const auto snip_b = extract_snippet(texts.at(b), *tokenizer, length, judge_seed, pair_stream ^ mix64(fnv1a64(b)));
          for (const auto& c : task.criteria) {
            JudgmentRecord record;
            if (snip_a.length == 0 || snip_b.length == 0) {
              record = JudgmentRecord{a, b, c};
              record.status = JudgmentStatus::kAbsent;
            } else {
              record = judge_pair(*judges.at(c), c, PairTexts{a, b, snip_a.text, snip_b.text},
                                  config.judge.votes_per_order);
            }
            record.snippet_len = static_cast<int>(std::max(snip_a.length, snip_b.length));
            results[k].push_back(std::move(record));
          }
        },
        errors);

    for (std::size_t k = 0; k < results.size(); ++k) {
      if (errors[k]) {
        out.flush();
        try {
          std::rethrow_exception(errors[k]);
        } catch (const ServiceError& e) {
          throw ServiceError(std::string(e.what()) + "; wrote " + std::to_string(summary.written) +
                             " new records to " + config.paths.judgments +
                             ". Rerun the same command to resume.");
        }
      }
      for (const auto& record : results[k]) {
        if (config.judge.max_records >= 0 && summary.written >= config.judge.max_records) {
          summary.stopped_early = true;
          break;
        }
        out << judgment_to_json_line(record) << '\n';
        ++summary.written;
        if (!record.present()) ++summary.absent;
      }
      if (summary.stopped_early) break;
    }
    out.flush();
    if (summary.stopped_early) break;
  }
  if (!out) throw DataError("write failed: " + config.paths.judgments);

  if (config.verbosity > 0) {
    log << "judge: " << summary.pairs << " pairs, " << summary.written << " new records (" << summary.absent
        << " absent), " << summary.skipped_existing << " already judged\n";
  }
  return summary;
}

// ---------------------------------------------------------------------------
// fit

std::vector<FitCriterionSummary> run_fit(const PipelineConfig& config, std::ostream& log) {
  require_path(config.paths.fit_ratings, "fit_ratings");
  require_input(config.paths.judgments, "judgments");
  if (!(config.heldout_fraction >= 0.0 && config.heldout_fraction < 1.0)) {
    throw UsageError("heldout_fraction must be in [0, 1)");
  }

  const auto records = read_judgments(config.paths.judgments);
  std::vector<std::string> criteria = config.criteria;
  if (criteria.empty()) {
    std::set<std::string> names;
    for (const auto& r : records) names.insert(r.criterion);
    criteria.assign(names.begin(), names.end());
  }
  if (criteria.empty()) throw DataError(config.paths.judgments + ": no judgments");

  jsonl::LockFile lock(config.paths.fit_ratings);
  FitConfig fit = config.fit;
  fit.seed = derive_seed(config.seed, "fit");
  const CounterRng split_rng(fit.seed);

  std::vector<RatingTable> tables;
  std::vector<FitCriterionSummary> summaries;
  for (const auto& criterion : criteria) {
    std::vector<JudgmentRecord> train, heldout;
    for (const auto& r : records) {
      if (r.criterion != criterion || !r.present()) continue;
      const double u = split_rng.uniform(fnv1a64(make_pair_id(r.text_a_id, r.text_b_id)) ^ fnv1a64(criterion));
      (u < config.heldout_fraction ? heldout : train).push_back(r);
    }
    if (train.empty() && heldout.empty()) {
      throw DataError(config.paths.judgments + ": no judgments for criterion \"" + criterion + "\"");
    }
    train = filter_by_margin(train, config.fit_min_margin);
    if (train.empty()) {
      throw DataError("criterion \"" + criterion + "\": no training judgments with confidence margin >= " +
                      std::to_string(config.fit_min_margin));
    }

    FitResult result;
    try {
      result = fit_ratings_with_report(train, fit, criterion);
    } catch (const DataError& e) {
      throw DataError(config.paths.judgments + " [" + criterion + "]: " + e.what());
    }

    FitCriterionSummary summary{criterion, result.report, train.size(), 0, std::nullopt};
    std::vector<JudgmentRecord> scorable;
    for (auto& r : heldout) {
      if (result.table.contains(r.text_a_id) && result.table.contains(r.text_b_id)) scorable.push_back(std::move(r));
    }
    summary.heldout_judgments = scorable.size();
    const auto confident = filter_by_margin(scorable, config.heldout_margin);
    if (!confident.empty()) summary.heldout_accuracy = held_out_accuracy(result.table, confident, config.heldout_margin);

    tables.push_back(normalize(result.table));
    summaries.push_back(summary);
    if (config.verbosity > 0) {
      log << "fit[" << criterion << "]: " << result.report.n_items << " items, " << train.size()
          << " judgments, " << result.report.iterations << " iterations, loss " << result.report.final_loss;
      if (summary.heldout_accuracy) log << ", held-out accuracy " << *summary.heldout_accuracy;
      log << '\n';
    }
  }

  RatingsProvenance provenance;
  provenance.source = "fit";
  provenance.judgments_digest = file_digest(config.paths.judgments);
  provenance.fit = fit;
  provenance.has_fit = true;

  ojson report;
  report["version"] = QURATE_VERSION;
  report["judgments_digest"] = provenance.judgments_digest;
  report["seed"] = config.seed;
  report["min_margin"] = config.fit_min_margin;
  report["heldout_fraction"] = config.heldout_fraction;
  report["heldout_margin"] = config.heldout_margin;
  ojson per = ojson::object();
  for (const auto& s : summaries) {
    per[s.criterion] = {{"items", s.report.n_items},
                        {"train_judgments", s.train_judgments},
                        {"heldout_judgments", s.heldout_judgments},
                        {"iterations", s.report.iterations},
                        {"final_loss", s.report.final_loss},
                        {"grad_norm", s.report.grad_norm},
                        {"heldout_accuracy", s.heldout_accuracy ? ojson(*s.heldout_accuracy) : ojson(nullptr)}};
  }
  report["criteria"] = per;

  write_ratings(config.paths.fit_ratings, tables, provenance);
  jsonl::AtomicWriter report_out(config.paths.fit_ratings + ".report.json");
  report_out.stream() << report.dump(2) << '\n';
  report_out.commit();
  return summaries;
}

// ---------------------------------------------------------------------------
// annotate

AnnotateSummary run_annotate(const PipelineConfig& config, std::ostream& log, const SegmentScorer* scorer) {
  require_path(config.paths.ratings, "ratings");
  require_input(config.paths.corpus, "corpus");

  std::unique_ptr<SegmentScorer> owned;
  std::vector<std::string> criteria = config.criteria;
  std::string digest_source;
  if (!scorer) {
    if (!config.paths.segment_scores.empty()) {
      require_input(config.paths.segment_scores, "segment scores");
      if (criteria.empty()) throw UsageError("annotate: criteria must be configured with segment scores");
      owned = std::make_unique<SegmentFileScorer>(config.paths.segment_scores);
      digest_source = config.paths.segment_scores;
    } else {
      require_input(config.paths.fit_ratings, "fit ratings");
      criteria = resolve_criteria(config, config.paths.fit_ratings);
      std::vector<RatingTable> tables;
      for (const auto& c : criteria) tables.push_back(read_ratings(config.paths.fit_ratings, c));
      owned = std::make_unique<TableScorer>(std::move(tables));
      digest_source = config.paths.fit_ratings;
    }
    scorer = owned.get();
  }
  if (criteria.empty()) throw UsageError("annotate: no criteria configured");

  jsonl::LockFile lock(config.paths.ratings);
  const auto tokenizer = make_tokenizer(config.tokenizer);

  struct Running {
    std::int64_t n = 0;
    double mean = 0.0;
    double m2 = 0.0;
  };
  std::vector<Running> stats(criteria.size());
  AnnotateSummary summary;

  // Pass 1: raw aggregated ratings to a scratch file, with running moments.
  const std::string raw_path = config.paths.ratings + ".raw";
  {
    jsonl::AtomicWriter raw(raw_path);
    std::vector<SegmentScore> parts;
    for_each_document(
        config.paths.corpus, *tokenizer,
        [&](Document&& doc) {
          ++summary.documents;
          std::vector<Segment> segments;
          try {
            segments = segment_document(doc, *tokenizer, config.max_segment_len);
          } catch (const DataError&) {
            // empty document: absent under every criterion
          }
          ojson line;
          line["id"] = doc.id;
          for (std::size_t c = 0; c < criteria.size(); ++c) {
            parts.clear();
            for (const auto& seg : segments) {
              if (const auto s = scorer->score(seg, criteria[c])) {
                parts.push_back({*s, static_cast<std::int64_t>(seg.length)});
              }
            }
            if (parts.empty()) {
              line[criteria[c]] = nullptr;
              ++summary.absent[criteria[c]];
              continue;
            }
            const double value = aggregate_rating(parts);
            line[criteria[c]] = value;
            ++summary.rated[criteria[c]];
            auto& r = stats[c];
            ++r.n;
            const double delta = value - r.mean;
            r.mean += delta / static_cast<double>(r.n);
            r.m2 += delta * (value - r.mean);
          }
          raw.stream() << line.dump() << '\n';
        },
        ReaderOptions{.check_unique_ids = false});
    raw.commit();
  }

  // Pass 2: standardize each criterion.
  std::vector<CriterionStats> meta;
  std::vector<double> inv_sd(criteria.size());
  for (std::size_t c = 0; c < criteria.size(); ++c) {
    const auto& r = stats[c];
    const double variance = r.n > 0 ? r.m2 / static_cast<double>(r.n) : 0.0;
    if (r.n < 2 || !(variance > 0.0)) {
      std::remove(raw_path.c_str());
      throw DataError("annotate: degenerate ratings for criterion \"" + criteria[c] + "\"");
    }
    inv_sd[c] = 1.0 / std::sqrt(variance);
    meta.push_back({criteria[c], static_cast<std::size_t>(r.n), true, r.mean, variance});
  }
  {
    jsonl::AtomicWriter out(config.paths.ratings);
    jsonl::Reader raw(raw_path);
    while (auto rec = raw.next()) {
      ojson line;
      line["id"] = (*rec)["id"];
      for (std::size_t c = 0; c < criteria.size(); ++c) {
        const auto& v = (*rec)[criteria[c]];
        if (v.is_null()) {
          line[criteria[c]] = nullptr;
        } else {
          line[criteria[c]] = (v.get<double>() - stats[c].mean) * inv_sd[c];
        }
      }
      out.stream() << line.dump() << '\n';
    }
    out.commit();
  }
  std::remove(raw_path.c_str());

  RatingsProvenance provenance;
  provenance.source = "annotate";
  provenance.judgments_digest = file_digest(digest_source.empty() ? config.paths.corpus : digest_source);
  write_ratings_meta(config.paths.ratings, meta, provenance);

  if (config.verbosity > 0) {
    log << "annotate: " << summary.documents << " documents";
    for (const auto& c : criteria) log << "; " << c << " rated " << summary.rated[c] << ", absent " << summary.absent[c];
    log << '\n';
  }
  return summary;
}

// ---------------------------------------------------------------------------
// select

SelectionResult run_select(const PipelineConfig& config, std::ostream& log) {
  require_path(config.paths.manifest, "manifest");
  require_input(config.paths.corpus, "corpus");
  require_input(config.paths.ratings, "ratings");
  const auto criteria = resolve_criteria(config, config.paths.ratings);

  jsonl::LockFile lock(config.paths.manifest);
  const auto tokenizer = make_tokenizer(config.tokenizer);
  const DocumentIndex index = index_corpus(config.paths.corpus, *tokenizer);
  const std::uint64_t select_seed = derive_seed(config.seed, "select");

  auto select_one = [&](const std::string& criterion, std::uint64_t seed) {
    const RatingTable table = read_ratings(config.paths.ratings, criterion);
    SelectionConfig sc = config.selection;
    sc.seed = seed;
    sc.jobs = config.jobs;
    return sc.domain_proportions ? select_per_domain(table, sc, index) : select(table, sc, index);
  };

  SelectionResult result;
  if (criteria.size() == 1) {
    result = select_one(criteria.front(), select_seed);
  } else {
    std::vector<SelectionResult> parts;
    for (const auto& c : criteria) parts.push_back(select_one(c, derive_seed(select_seed, c)));
    result = mix_criteria(parts, config.selection.token_budget, derive_seed(select_seed, "mix"));
  }

  std::string joined;
  for (const auto& c : criteria) joined += (joined.empty() ? "" : "+") + c;
  ojson extra;
  extra["corpus_digest"] = file_digest(config.paths.corpus);
  extra["pipeline_seed"] = config.seed;
  write_manifest(config.paths.manifest, result, {file_digest(config.paths.ratings), joined, extra.dump()});

  if (config.verbosity > 0) {
    log << "select: " << result.entries.size() << " documents, " << result.total_tokens << " tokens (budget "
        << config.selection.token_budget << ", method " << result.method << ")\n";
  }
  return result;
}

// ---------------------------------------------------------------------------
// curriculum

std::vector<std::string> run_curriculum(const PipelineConfig& config, std::ostream& log) {
  require_path(config.paths.curriculum, "curriculum");
  require_input(config.paths.manifest, "manifest");
  const auto direction = parse_curriculum_direction(config.curriculum_direction);
  const auto selection = read_manifest(config.paths.manifest);
  if (selection.entries.empty()) throw DataError(config.paths.manifest + ": empty selection");

  jsonl::LockFile lock(config.paths.curriculum);
  const std::uint64_t seed = derive_seed(config.seed, "curriculum");
  const auto ids = curriculum_order(selection, direction, seed);

  ojson header;
  header["version"] = QURATE_VERSION;
  header["manifest_digest"] = file_digest(config.paths.manifest);
  header["direction"] = std::string(to_string(direction));
  header["seed"] = config.seed;
  jsonl::AtomicWriter out(config.paths.curriculum);
  out.stream() << provenance_line(header) << '\n';
  for (const auto& id : ids) out.stream() << id << '\n';
  out.commit();

  if (config.verbosity > 0) log << "curriculum: " << ids.size() << " documents, " << to_string(direction) << '\n';
  return ids;
}

// ---------------------------------------------------------------------------
// analyze

AnalyzeSummary run_analyze(const PipelineConfig& config, std::ostream& log) {
  require_path(config.paths.report_dir, "report_dir");
  require_input(config.paths.manifest, "manifest");
  fs::create_directories(config.paths.report_dir);
  const auto selection = read_manifest(config.paths.manifest);
  const std::string manifest_digest = file_digest(config.paths.manifest);

  AnalyzeSummary summary;
  std::optional<AttributeTable> attributes;
  if (!config.paths.attributes.empty()) {
    require_input(config.paths.attributes, "attributes");
    attributes = read_attributes(config.paths.attributes);
    std::unordered_set<std::string> selected;
    for (const auto& e : selection.entries) selected.insert(e.id);
    summary.retention = retention_rates(*attributes, selected);

    ojson header;
    header["version"] = QURATE_VERSION;
    header["manifest_digest"] = manifest_digest;
    header["attributes_digest"] = file_digest(config.paths.attributes);
    header["label_counting"] = "per-label: a document counts once in the total of each of its labels";
    jsonl::AtomicWriter out((fs::path(config.paths.report_dir) / "retention.csv").string());
    out.stream() << provenance_line(header) << '\n';
    write_retention_csv(out.stream(), *summary.retention);
    out.commit();
    if (config.verbosity > 0) print_retention_table(log, *summary.retention);
  }

  if (!config.paths.ratings.empty()) {
    require_input(config.paths.ratings, "ratings");
    const auto criteria = resolve_criteria(config, config.paths.ratings);
    std::vector<RatingTable> tables;
    for (const auto& c : criteria) tables.push_back(read_ratings(config.paths.ratings, c));
    const std::string ratings_digest = file_digest(config.paths.ratings);

    if (tables.size() >= 2) {
      std::vector<std::string> common;
      for (const auto& id : tables.front().ids()) {
        if (std::all_of(tables.begin() + 1, tables.end(), [&](const RatingTable& t) { return t.contains(id); })) {
          common.push_back(id);
        }
      }
      std::vector<RatingTable> aligned;
      for (const auto& t : tables) aligned.push_back(t.subset(common));
      summary.correlations = rank_correlations(aligned);

      ojson header;
      header["version"] = QURATE_VERSION;
      header["ratings_digest"] = ratings_digest;
      header["items"] = common.size();
      jsonl::AtomicWriter out((fs::path(config.paths.report_dir) / "correlations.csv").string());
      out.stream() << provenance_line(header) << '\n';
      write_correlations_csv(out.stream(), *summary.correlations);
      out.commit();
      if (config.verbosity > 0) print_correlation_table(log, *summary.correlations);
    }

    std::vector<std::pair<std::string, PercentilePick>> picks;
    for (const auto& t : tables) {
      const auto result = percentile_documents(
          t, config.analyze.percentiles, config.analyze.group_percentiles && attributes ? &*attributes : nullptr);
      if (result.empty_groups > 0 && config.verbosity > 0) {
        log << "analyze: " << result.empty_groups << " empty attribute groups omitted for " << t.criterion() << '\n';
      }
      for (const auto& p : result.picks) {
        picks.emplace_back(t.criterion(), p);
        summary.percentiles.push_back(p);
      }
    }

    std::unordered_map<std::string, std::string> excerpts;
    if (!config.paths.corpus.empty() && fs::exists(config.paths.corpus)) {
      std::unordered_set<std::string> wanted;
      for (const auto& [_, p] : picks) wanted.insert(p.id);
      const auto tokenizer = make_tokenizer(config.tokenizer);
      for_each_document(
          config.paths.corpus, *tokenizer,
          [&](Document&& doc) {
            if (wanted.count(doc.id)) excerpts[doc.id] = truncate_utf8(doc.text, config.analyze.excerpt_bytes);
          },
          ReaderOptions{.check_unique_ids = false});
    }

    jsonl::AtomicWriter out((fs::path(config.paths.report_dir) / "percentiles.jsonl").string());
    ojson header;
    header["version"] = QURATE_VERSION;
    header["ratings_digest"] = ratings_digest;
    header["rank_rule"] = "ceil(q/100*n) in ascending score order, clamped to [1, n]";
    out.stream() << ojson{{"header", header}}.dump() << '\n';
    for (const auto& [criterion, p] : picks) {
      ojson line;
      line["criterion"] = criterion;
      if (!p.group.empty()) line["group"] = p.group;
      line["percentile"] = p.percentile;
      line["id"] = p.id;
      line["score"] = p.score;
      const auto it = excerpts.find(p.id);
      line["excerpt"] = it == excerpts.end() ? "" : it->second;
      out.stream() << line.dump(-1, ' ', false, ojson::error_handler_t::replace) << '\n';
    }
    out.commit();
  }
  return summary;
}

}  // namespace qurate

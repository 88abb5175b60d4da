#include <sys/file.h>
#include <sys/resource.h>
#include <sys/wait.h>
#include <fcntl.h>
#include <unistd.h>

#include <cmath>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "qurate/error.hpp"
#include "qurate/pipeline.hpp"
#include "test_support.hpp"

using namespace qurate;
using json = nlohmann::json;

namespace {

std::vector<testing::FixtureDoc> make_docs(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0, 1);
  std::uniform_int_distribution<std::size_t> len(20, 80);
  std::vector<testing::FixtureDoc> docs;
  for (std::size_t i = 0; i < n; ++i) {
    testing::FixtureDoc d;
    d.id = testing::doc_id(i);
    d.tokens = len(rng);
    d.domain = i % 5 < 3 ? "web" : "books";
    d.latent = z(rng);
    d.labels = {"topic" + std::to_string(i % 4)};
    if (d.latent > 1.0) d.labels.push_back("quality:high");
    docs.push_back(d);
  }
  return docs;
}

struct Workspace {
  testing::TempDir dir;
  std::vector<testing::FixtureDoc> docs;
  PipelineConfig config;

  explicit Workspace(std::size_t n = 120, std::int64_t pairs = 600) {
    docs = make_docs(n, 5);
    testing::write_corpus(dir.file("corpus.jsonl"), docs);
    testing::write_latent(dir.file("latent.jsonl"), docs, "writing_style");
    testing::write_attributes(dir.file("attrs.jsonl"), docs);
    config.paths.corpus = dir.file("corpus.jsonl");
    config.paths.latent_ratings = dir.file("latent.jsonl");
    config.paths.judgments = dir.file("judgments.jsonl");
    config.paths.fit_ratings = dir.file("fit.jsonl");
    config.paths.ratings = dir.file("ratings.jsonl");
    config.paths.manifest = dir.file("manifest.jsonl");
    config.paths.attributes = dir.file("attrs.jsonl");
    config.paths.curriculum = dir.file("curriculum.txt");
    config.paths.report_dir = dir.file("report");
    config.criteria = {"writing_style"};
    config.seed = 11;
    config.verbosity = 0;
    config.judge.random_pairs = pairs;
    config.judge.votes_per_order = 5;
    config.fit.l2_weight = 1e-3;
    config.selection.temperature = 1.0;
    config.selection.token_budget = 1000;
  }
};

std::vector<std::string> record_lines(const std::string& path) {
  std::vector<std::string> out;
  for (const auto& line : testing::read_lines(path)) {
    if (line.rfind("{\"header\"", 0) != 0) out.push_back(line);
  }
  return out;
}

}  // namespace

TEST_CASE("config files map onto pipeline settings") {
  PipelineConfig c;
  apply_config_json(c, R"({
    "seed": 7, "jobs": 3, "criteria": ["writing_style", "facts_trivia"],
    "paths": {"corpus": "c.jsonl", "manifest": "m.jsonl"},
    "judge": {"kind": "http", "base_url": "http://localhost:1/v1", "model": "m", "max_retries": 2,
              "initial_backoff_ms": 50, "random_pairs": 10, "domain_quotas": {"web": 4}},
    "fit": {"l2_weight": 0.01, "min_margin": 0.25, "heldout_fraction": 0.2},
    "select": {"temperature": 2.0, "budget_tokens": 500, "inverse": true, "domain_proportions": {"web": 1.0}},
    "curriculum": {"direction": "shuffled"},
    "analyze": {"percentiles": [50], "group_percentiles": true}
  })");
  CHECK(c.seed == 7);
  CHECK(c.jobs == 3);
  CHECK(c.criteria.size() == 2);
  CHECK(c.paths.corpus == "c.jsonl");
  CHECK(c.judge.kind == "http");
  CHECK(c.judge.http.max_retries == 2);
  CHECK(c.judge.http.initial_backoff == std::chrono::milliseconds(50));
  CHECK(c.judge.domain_quotas.at("web") == 4);
  CHECK(c.fit.l2_weight == 0.01);
  CHECK(c.fit_min_margin == 0.25);
  CHECK(c.heldout_fraction == 0.2);
  CHECK(c.selection.temperature == 2.0);
  CHECK(c.selection.token_budget == 500);
  CHECK(c.selection.inverse);
  REQUIRE(c.selection.domain_proportions);
  CHECK(c.selection.domain_proportions->at("web") == 1.0);
  CHECK(c.curriculum_direction == "shuffled");
  CHECK(c.analyze.group_percentiles);

  PipelineConfig d;
  CHECK_THROWS_AS(apply_config_json(d, R"({"sede": 1})"), UsageError);
  CHECK_THROWS_AS(apply_config_json(d, R"({"fit": {"l2": 1}})"), UsageError);
  CHECK_THROWS_AS(apply_config_json(d, R"({"seed": "one"})"), UsageError);
  CHECK_THROWS_AS(apply_config_json(d, "{"), UsageError);
  CHECK_THROWS_AS(load_pipeline_config("/nonexistent/config.json"), UsageError);
}

TEST_CASE("pair sampling") {
  std::vector<std::string> domains;
  for (int i = 0; i < 50; ++i) domains.push_back(i < 30 ? "web" : "books");
  const auto pairs = sample_pairs(domains, 300, {{"books", 40}}, 3);
  REQUIRE(pairs.size() == 340);
  std::set<std::pair<std::size_t, std::size_t>> seen;
  std::size_t books_only = 0;
  for (const auto& p : pairs) {
    CHECK(p.a != p.b);
    CHECK(p.a < domains.size());
    CHECK(p.b < domains.size());
    seen.insert({std::min(p.a, p.b), std::max(p.a, p.b)});
  }
  for (std::size_t k = 300; k < pairs.size(); ++k) {
    if (domains[pairs[k].a] == "books" && domains[pairs[k].b] == "books") ++books_only;
  }
  CHECK(books_only == 40);
  CHECK(seen.size() >= 300);

  const auto again = sample_pairs(domains, 300, {{"books", 40}}, 3);
  bool same = true;
  for (std::size_t k = 0; k < pairs.size(); ++k) same = same && pairs[k].a == again[k].a && pairs[k].b == again[k].b;
  CHECK(same);

  CHECK_THROWS_AS(sample_pairs({"x"}, 1, {}, 0), DataError);
  CHECK_THROWS_AS(sample_pairs({"x", "x", "x"}, 4, {}, 0), DataError);
  CHECK_THROWS_AS(sample_pairs(domains, 0, {{"poetry", 1}}, 0), DataError);
}

TEST_CASE("pipeline stages run end to end") {
  Workspace w;
  w.config.judge.votes_per_order = 20;
  const auto js = run_judge(w.config, std::cerr);
  CHECK(js.pairs == 600);
  CHECK(js.written == 600);
  const auto lines = testing::read_lines(w.config.paths.judgments);
  REQUIRE(lines.size() == 601);
  const auto header = json::parse(lines[0]);
  CHECK(header["header"]["judge"] == "simulated");
  CHECK(header["header"]["criteria"][0] == "writing_style");
  const auto first = json::parse(lines[1]);
  std::vector<std::string> keys;
  for (const auto& [k, _] : first.items()) keys.push_back(k);
  CHECK(keys.size() == 7);
  CHECK(lines[1].rfind("{\"text_a_id\":", 0) == 0);

  const auto fits = run_fit(w.config, std::cerr);
  REQUIRE(fits.size() == 1);
  REQUIRE(fits[0].heldout_accuracy);
  CHECK(*fits[0].heldout_accuracy >= 0.8);
  const auto fit_table = read_ratings(w.config.paths.fit_ratings, "writing_style");
  CHECK(fit_table.normalized());
  const auto report = json::parse(testing::read_text(w.config.paths.fit_ratings + ".report.json"));
  CHECK(report["criteria"]["writing_style"]["train_judgments"].get<std::size_t>() == fits[0].train_judgments);

  // Fitted ratings track the latent ratings.
  std::vector<double> fitted, latent;
  for (const auto& d : w.docs) {
    if (!fit_table.contains(d.id)) continue;
    fitted.push_back(fit_table.score(d.id));
    latent.push_back(d.latent);
  }
  CHECK(testing::ref_spearman(fitted, latent) > 0.85);

  const auto ann = run_annotate(w.config, std::cerr);
  CHECK(ann.documents == 120);
  CHECK(ann.rated.at("writing_style") == static_cast<std::int64_t>(fit_table.size()));
  CHECK_FALSE(std::filesystem::exists(w.config.paths.ratings + ".raw"));

  const auto sel = run_select(w.config, std::cerr);
  CHECK(sel.total_tokens >= 1000);
  const auto manifest = read_manifest(w.config.paths.manifest);
  CHECK(manifest.entries.size() == sel.entries.size());

  const auto order = run_curriculum(w.config, std::cerr);
  CHECK(order.size() == sel.entries.size());
  CHECK(order.front() == sel.entries.back().id);
  const auto curriculum_lines = testing::read_lines(w.config.paths.curriculum);
  CHECK(curriculum_lines[0].rfind("# {", 0) == 0);
  CHECK(curriculum_lines.size() == order.size() + 1);

  const auto an = run_analyze(w.config, std::cerr);
  REQUIRE(an.retention);
  CHECK(an.retention->selected == sel.entries.size());
  const auto retention = testing::read_lines(w.config.paths.report_dir + "/retention.csv");
  CHECK(retention[0].rfind("# {", 0) == 0);
  CHECK(retention[1] == "attribute,retained,total,rate");
  const auto pct = testing::read_lines(w.config.paths.report_dir + "/percentiles.jsonl");
  REQUIRE(pct.size() == 5);
  const auto pick = json::parse(pct[1]);
  CHECK(pick["criterion"] == "writing_style");
  CHECK(pick["percentile"] == 5.0);
  CHECK_FALSE(pick["excerpt"].get<std::string>().empty());
}

TEST_CASE("judging resumes without duplicating records") {
  Workspace interrupted;
  interrupted.config.judge.max_records = 50;
  const auto partial = run_judge(interrupted.config, std::cerr);
  CHECK(partial.written == 50);
  CHECK(partial.stopped_early);
  CHECK(record_lines(interrupted.config.paths.judgments).size() == 50);

  interrupted.config.judge.max_records = -1;
  const auto rest = run_judge(interrupted.config, std::cerr);
  CHECK(rest.skipped_existing == 50);
  CHECK(rest.written == 550);

  const auto records = read_judgments(interrupted.config.paths.judgments);
  std::set<std::tuple<std::string, std::string, std::string>> keys;
  for (const auto& r : records) keys.insert({r.text_a_id, r.text_b_id, r.criterion});
  CHECK(keys.size() == records.size());
  CHECK(records.size() == 600);

  // Resuming yields the same file as an uninterrupted run.
  Workspace straight;
  run_judge(straight.config, std::cerr);
  CHECK(testing::read_text(straight.config.paths.judgments) ==
        testing::read_text(interrupted.config.paths.judgments));

  // A third run has nothing left to do.
  const auto none = run_judge(interrupted.config, std::cerr);
  CHECK(none.written == 0);
  CHECK(none.skipped_existing == 600);
}

TEST_CASE("judging honours domain quotas and is independent of the job count") {
  Workspace w(120, 100);
  w.config.judge.domain_quotas = {{"books", 30}};
  const auto summary = run_judge(w.config, std::cerr);
  CHECK(summary.pairs == 130);
  std::map<std::string, std::string> domain;
  for (const auto& d : w.docs) domain[d.id] = d.domain;
  const auto records = read_judgments(w.config.paths.judgments);
  REQUIRE(records.size() == 130);
  for (std::size_t k = 100; k < records.size(); ++k) {
    CHECK(domain[records[k].text_a_id] == "books");
    CHECK(domain[records[k].text_b_id] == "books");
  }

  Workspace parallel(120, 100);
  parallel.config.judge.domain_quotas = {{"books", 30}};
  parallel.config.jobs = 4;
  run_judge(parallel.config, std::cerr);
  CHECK(testing::read_text(parallel.config.paths.judgments) == testing::read_text(w.config.paths.judgments));
}

TEST_CASE("fit rejects empty input and leaves no output") {
  Workspace w;
  testing::write_text(w.config.paths.judgments, "");
  CHECK_THROWS_AS(run_fit(w.config, std::cerr), DataError);
  CHECK_FALSE(std::filesystem::exists(w.config.paths.fit_ratings));
  CHECK_FALSE(std::filesystem::exists(w.config.paths.fit_ratings + ".meta.json"));

  // All judgments below the training margin.
  testing::write_text(w.config.paths.judgments,
                      "{\"text_a_id\":\"doc000000\",\"text_b_id\":\"doc000001\",\"criterion\":\"writing_style\","
                      "\"p_b_over_a\":0.6,\"n_votes\":10,\"snippet_len\":50,\"status\":\"ok\"}\n");
  CHECK_THROWS_AS(run_fit(w.config, std::cerr), DataError);
  CHECK_FALSE(std::filesystem::exists(w.config.paths.fit_ratings));
}

TEST_CASE("stage outputs are byte-identical across reruns") {
  Workspace w;
  run_judge(w.config, std::cerr);
  run_fit(w.config, std::cerr);
  const auto fit1 = testing::read_text(w.config.paths.fit_ratings);
  const auto meta1 = testing::read_text(w.config.paths.fit_ratings + ".meta.json");
  run_fit(w.config, std::cerr);
  CHECK(testing::read_text(w.config.paths.fit_ratings) == fit1);
  CHECK(testing::read_text(w.config.paths.fit_ratings + ".meta.json") == meta1);

  run_annotate(w.config, std::cerr);
  run_select(w.config, std::cerr);
  const auto man1 = testing::read_text(w.config.paths.manifest);
  w.config.jobs = 3;
  run_select(w.config, std::cerr);
  CHECK(testing::read_text(w.config.paths.manifest) == man1);

  w.config.seed = 12;
  run_select(w.config, std::cerr);
  CHECK(testing::read_text(w.config.paths.manifest) != man1);
}

TEST_CASE("annotating single-segment documents reproduces the fitted ratings") {
  Workspace w;
  run_judge(w.config, std::cerr);
  run_fit(w.config, std::cerr);
  run_annotate(w.config, std::cerr);
  const auto fitted = read_ratings(w.config.paths.fit_ratings, "writing_style");
  const auto annotated = read_ratings(w.config.paths.ratings, "writing_style");
  CHECK(annotated.normalized());
  REQUIRE(annotated.size() == fitted.size());
  for (const auto& id : fitted.ids()) {
    CHECK(annotated.score(id) == doctest::Approx(fitted.score(id)).epsilon(1e-9));
  }
}

TEST_CASE("annotation with segment scores") {
  testing::TempDir dir;
  // doc a: 700 tokens -> segments of 512 and 188; doc b: one segment; doc c: empty.
  testing::write_text(dir.file("corpus.jsonl"),
                      "{\"id\":\"a\",\"text\":\"" + testing::words(700) + "\"}\n"
                      "{\"id\":\"b\",\"text\":\"" + testing::words(10) + "\"}\n"
                      "{\"id\":\"c\",\"text\":\"\"}\n"
                      "{\"id\":\"d\",\"text\":\"" + testing::words(5) + "\"}\n");
  testing::write_text(dir.file("segments.jsonl"),
                      "{\"id\":\"a\",\"segment\":0,\"writing_style\":1.0}\n"
                      "{\"id\":\"a\",\"segment\":1,\"writing_style\":3.0}\n"
                      "{\"id\":\"b\",\"segment\":0,\"writing_style\":-2.0}\n"
                      "{\"id\":\"d\",\"segment\":0,\"writing_style\":0.5}\n");
  PipelineConfig c;
  c.verbosity = 0;
  c.criteria = {"writing_style"};
  c.paths.corpus = dir.file("corpus.jsonl");
  c.paths.segment_scores = dir.file("segments.jsonl");
  c.paths.ratings = dir.file("ratings.jsonl");
  const auto summary = run_annotate(c, std::cerr);
  CHECK(summary.documents == 4);
  CHECK(summary.rated.at("writing_style") == 3);
  CHECK(summary.absent.at("writing_style") == 1);

  const double raw_a = (1.0 * 512 + 3.0 * 188) / 700.0;
  const std::vector<double> raw{raw_a, -2.0, 0.5};
  const double mean = static_cast<double>(testing::ref_mean(raw));
  const double sd = std::sqrt(static_cast<double>(testing::ref_population_variance(raw)));
  const auto table = read_ratings(c.paths.ratings, "writing_style");
  CHECK(table.ids() == std::vector<std::string>{"a", "b", "d"});
  CHECK(table.score("a") == doctest::Approx((raw_a - mean) / sd).epsilon(1e-12));
  CHECK(table.score("b") == doctest::Approx((-2.0 - mean) / sd).epsilon(1e-12));
  const auto lines = testing::read_lines(c.paths.ratings);
  CHECK(lines[2] == "{\"id\":\"c\",\"writing_style\":null}");
}

TEST_CASE("an http judge failure reports progress and keeps written records") {
  Workspace w(20, 10);
  w.config.judge.kind = "http";
  w.config.judge.http.base_url = "http://127.0.0.1:1/v1";
  w.config.judge.http.model = "m";
  w.config.judge.http.max_retries = 0;
  w.config.judge.http.timeout = std::chrono::seconds(1);
  try {
    run_judge(w.config, std::cerr);
    FAIL("expected a service error");
  } catch (const ServiceError& e) {
    CHECK(std::string(e.what()).find("wrote 0 new records") != std::string::npos);
  }
  CHECK(testing::read_lines(w.config.paths.judgments).size() == 1);  // header only
}

#ifdef QURATE_CLI_PATH

namespace {

struct RunResult {
  int exit_code = -1;
  long max_rss_kb = 0;
};

RunResult run_cli(const std::vector<std::string>& args, const std::vector<std::string>& env = {}) {
  const pid_t pid = ::fork();
  if (pid == 0) {
    const int devnull = ::open("/dev/null", O_WRONLY);
    ::dup2(devnull, 1);
    ::dup2(devnull, 2);
    for (const auto& e : env) ::putenv(const_cast<char*>(e.c_str()));
    std::vector<char*> argv{const_cast<char*>(QURATE_CLI_PATH)};
    for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    ::execv(QURATE_CLI_PATH, argv.data());
    ::_exit(127);
  }
  int status = 0;
  struct rusage usage {};
  ::wait4(pid, &status, 0, &usage);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, usage.ru_maxrss};
}

}  // namespace

TEST_CASE("cli exit codes") {
  Workspace w(40, 60);
  const auto& p = w.config.paths;
  CHECK(run_cli({}).exit_code == 1);
  CHECK(run_cli({"--help"}).exit_code == 0);
  CHECK(run_cli({"frobnicate"}).exit_code == 1);
  CHECK(run_cli({"select", "--budget-tokens", "many"}).exit_code == 1);
  CHECK(run_cli({"fit", "--judgments", p.judgments}).exit_code == 1);  // no output path
  CHECK(run_cli({"fit", "--judgments", w.dir.file("missing.jsonl"), "--output", p.fit_ratings}).exit_code == 2);

  testing::write_text(w.dir.file("bad.jsonl"), "{\"id\":\"x\"\n");
  CHECK(run_cli({"judge", "--corpus", w.dir.file("bad.jsonl"), "--latent-ratings", p.latent_ratings, "--output",
                 p.judgments, "--criterion", "writing_style", "--pairs", "3"})
            .exit_code == 2);
  CHECK(run_cli({"judge", "--corpus", p.corpus, "--latent-ratings", p.latent_ratings, "--output", p.judgments,
                 "--criterion", "no_such_criterion", "--pairs", "3"})
            .exit_code == 1);

  testing::write_text(w.dir.file("http.json"), R"({"judge": {"max_retries": 0, "timeout_s": 1}})");
  CHECK(run_cli({"judge", "--config", w.dir.file("http.json"), "--corpus", p.corpus, "--output",
                 w.dir.file("http_judgments.jsonl"), "--criterion", "writing_style", "--pairs", "3", "--judge",
                 "http", "--base-url", "http://127.0.0.1:1/v1", "--model", "m"},
                {"QURATE_API_KEY=test-key"})
            .exit_code == 3);

  const std::vector<std::string> judge_args{"judge", "--corpus", p.corpus, "--latent-ratings", p.latent_ratings,
                                            "--output", p.judgments, "--criterion", "writing_style",
                                            "--pairs", "60", "--seed", "4", "-q"};
  CHECK(run_cli(judge_args).exit_code == 0);
  CHECK(record_lines(p.judgments).size() == 60);
  // Sparse comparison graph with no regularization: not identifiable.
  CHECK(run_cli({"fit", "--judgments", p.judgments, "--output", p.fit_ratings}).exit_code == 2);
  CHECK_FALSE(std::filesystem::exists(p.fit_ratings));
  testing::write_text(w.dir.file("fit.json"), R"({"fit": {"l2_weight": 0.001}})");
  CHECK(run_cli({"fit", "--config", w.dir.file("fit.json"), "--judgments", p.judgments, "--output", p.fit_ratings,
                 "--seed", "4"})
            .exit_code == 0);
  CHECK(run_cli({"annotate", "--corpus", p.corpus, "--fit-ratings", p.fit_ratings, "--output", p.ratings})
            .exit_code == 0);
  CHECK(run_cli({"select", "--corpus", p.corpus, "--ratings", p.ratings, "--output", p.manifest,
                 "--budget-tokens", "300", "--temperature", "0"})
            .exit_code == 0);
  CHECK(run_cli({"curriculum", "--manifest", p.manifest, "--output", p.curriculum}).exit_code == 0);
  CHECK(run_cli({"analyze", "--manifest", p.manifest, "--attributes", p.attributes, "--ratings", p.ratings,
                 "--corpus", p.corpus, "--output", p.report_dir})
            .exit_code == 0);
  CHECK(std::filesystem::exists(p.report_dir + "/retention.csv"));

  // A held lock on the output makes a second run refuse with a usage error.
  const std::string lock_path = p.manifest + ".lock";
  const int fd = ::open(lock_path.c_str(), O_CREAT | O_RDWR, 0644);
  REQUIRE(::flock(fd, LOCK_EX) == 0);
  CHECK(run_cli({"select", "--corpus", p.corpus, "--ratings", p.ratings, "--output", p.manifest,
                 "--budget-tokens", "300"})
            .exit_code == 1);
  ::close(fd);
  CHECK(run_cli({"select", "--corpus", p.corpus, "--ratings", p.ratings, "--output", p.manifest,
                 "--budget-tokens", "300"})
            .exit_code == 0);
}

TEST_CASE("annotate memory does not grow with corpus size") {
  testing::TempDir dir;
  const std::string fit_path = dir.file("fit.jsonl");
  {
    std::vector<std::string> ids;
    std::vector<double> scores;
    for (int i = 0; i < 200; ++i) {
      ids.push_back(testing::doc_id(static_cast<std::size_t>(i)));
      scores.push_back(std::sin(i));
    }
    RatingsProvenance prov;
    prov.source = "fit";
    write_ratings(fit_path, {normalize(RatingTable("writing_style", ids, scores))}, prov);
  }
  auto measure = [&](std::size_t n) {
    const std::string corpus = dir.file("corpus" + std::to_string(n) + ".jsonl");
    {
      std::ofstream out(corpus);
      const std::string text = testing::words(60);
      for (std::size_t i = 0; i < n; ++i) out << "{\"id\":\"" << testing::doc_id(i) << "\",\"text\":\"" << text << "\"}\n";
    }
    const auto r = run_cli({"annotate", "--corpus", corpus, "--fit-ratings", fit_path, "--output",
                            dir.file("ratings" + std::to_string(n) + ".jsonl"), "-q"});
    CHECK(r.exit_code == 0);
    return r.max_rss_kb;
  };
  const long small = measure(10000);
  const long large = measure(100000);
  // The large corpus file is about 50 MB; holding it would show up here.
  CHECK(large - small < 8 * 1024);
}

#endif

TEST_CASE("fit report on the recovery fixture") {
  // 50 items; pairs are distinct here, so 1000 of the 1225 possible.
  Workspace w(50, 1000);
  w.config.judge.votes_per_order = 20;
  w.config.fit.l2_weight = 0.0;
  run_judge(w.config, std::cerr);
  run_fit(w.config, std::cerr);
  const auto report = json::parse(testing::read_text(w.config.paths.fit_ratings + ".report.json"));
  const auto& c = report["criteria"]["writing_style"];
  CHECK(c["heldout_accuracy"].get<double>() >= 0.9);
  CHECK(c["heldout_judgments"].get<int>() > 50);
  CHECK(c["grad_norm"].get<double>() <= 1e-6);
  CHECK(report["heldout_fraction"] == 0.1);
}

TEST_CASE("a tau = 2 selection at a 10% budget satisfies the selection invariants") {
  Workspace w(300, 3000);
  std::int64_t total = 0;
  std::map<std::string, std::int64_t> tokens;
  for (const auto& d : w.docs) {
    total += static_cast<std::int64_t>(d.tokens);
    tokens[d.id] = static_cast<std::int64_t>(d.tokens);
  }
  w.config.selection.temperature = 2.0;
  w.config.selection.token_budget = total / 10;
  run_judge(w.config, std::cerr);
  run_fit(w.config, std::cerr);
  run_annotate(w.config, std::cerr);
  run_select(w.config, std::cerr);
  const auto m = read_manifest(w.config.paths.manifest);
  REQUIRE_FALSE(m.entries.empty());
  std::set<std::string> ids;
  std::int64_t sum = 0;
  for (std::size_t k = 0; k < m.entries.size(); ++k) {
    const auto& e = m.entries[k];
    CHECK(ids.insert(e.id).second);
    CHECK(e.sample_rank == static_cast<std::int64_t>(k + 1));
    CHECK(e.token_count == tokens.at(e.id));
    if (k) CHECK(m.entries[k - 1].gumbel_key >= e.gumbel_key);
    sum += e.token_count;
  }
  CHECK(sum == m.total_tokens);
  CHECK(sum >= w.config.selection.token_budget);
  CHECK(sum - m.entries.back().token_count < w.config.selection.token_budget);
  const auto header = json::parse(testing::read_lines(w.config.paths.manifest)[0]);
  CHECK(header["header"]["pipeline_seed"] == 11);
  CHECK(header["header"].contains("ratings_digest"));
  CHECK(header["header"].contains("corpus_digest"));
}

TEST_CASE("analyze on a uniform manifest reports retention near the selection fraction") {
  testing::TempDir dir;
  std::vector<testing::FixtureDoc> docs;
  std::vector<std::string> ids;
  DocumentIndex index;
  for (std::size_t i = 0; i < 10000; ++i) {
    testing::FixtureDoc d;
    d.id = testing::doc_id(i);
    d.labels = {"topic" + std::to_string(i % 7), "region" + std::to_string((i / 7) % 3)};
    docs.push_back(d);
    ids.push_back(d.id);
    index.add(d.id, 1);
  }
  testing::write_attributes(dir.file("attrs.jsonl"), docs);
  SelectionConfig sc;
  sc.token_budget = 1000;
  sc.seed = 8;
  const auto sel = sample_logits(ids, std::vector<double>(ids.size(), 0.0), sc, index);
  write_manifest(dir.file("m.jsonl"), sel, {"none", "uniform", "{}"});

  PipelineConfig c;
  c.verbosity = 0;
  c.paths.manifest = dir.file("m.jsonl");
  c.paths.attributes = dir.file("attrs.jsonl");
  c.paths.report_dir = dir.file("report");
  const auto summary = run_analyze(c, std::cerr);
  REQUIRE(summary.retention);
  CHECK(summary.retention->attributes.size() == 10);
  // Ten attributes tested together: 4 sd keeps the family-wise false alarm rate below 0.1%.
  for (const auto& a : summary.retention->attributes) {
    const double N = 10000, n = 1000, K = static_cast<double>(a.total);
    const double sd = std::sqrt(n * (K / N) * (1 - K / N) * (N - n) / (N - 1)) / K;
    CHECK(std::abs(a.rate - 0.1) <= 4 * sd);
  }
  const auto csv = testing::read_lines(c.paths.report_dir + "/retention.csv");
  CHECK(csv[0].find("per-label") != std::string::npos);
  CHECK(csv.size() == 12);
}

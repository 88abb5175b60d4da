#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <random>
#include <set>
#include <string>

#include "doctest.h"
#include "qurate/error.hpp"
#include "qurate/judge.hpp"
#include "test_support.hpp"

using namespace qurate;

namespace {

// Always picks whichever text is shown first.
struct FirstSlotJudge final : Judge {
  std::optional<Slot> vote(const VoteRequest&) override { return Slot::kFirst; }
};

// Deterministic judge: prefers the lexicographically larger id.
struct LargerIdJudge final : Judge {
  std::optional<Slot> vote(const VoteRequest& r) override {
    return r.first_id > r.second_id ? Slot::kFirst : Slot::kSecond;
  }
};

// Replies with garbage for the first `bad` samples of each order.
struct PartlyUnparseableJudge final : Judge {
  std::uint32_t bad;
  explicit PartlyUnparseableJudge(std::uint32_t b) : bad(b) {}
  std::optional<Slot> vote(const VoteRequest& r) override {
    if (r.sample_index < bad) return std::nullopt;
    return Slot::kSecond;
  }
};

struct RefusingJudge final : Judge {
  int calls = 0;
  std::optional<Slot> vote(const VoteRequest&) override {
    if (++calls == 3) throw JudgeRefusal("content_filter");
    return Slot::kFirst;
  }
};

struct RecordingJudge final : Judge {
  std::vector<std::string> keys;
  std::vector<std::string> shown_first;
  std::optional<Slot> vote(const VoteRequest& r) override {
    keys.push_back(r.idempotency_key);
    shown_first.emplace_back(r.first_id);
    return Slot::kFirst;
  }
};

PairTexts pair(std::string_view a, std::string_view b) { return {a, b, "text of a", "text of b"}; }

}  // namespace

TEST_CASE("prompt rendering matches the golden file") {
  const auto golden = testing::read_text(std::string(QURATE_TEST_GOLDEN_DIR) + "/prompt_writing_style_x_y.txt");
  REQUIRE_FALSE(golden.empty());
  CHECK(build_prompt("writing_style", "x", "y") == golden);
  CHECK(default_prompt_template_version() == "pairwise_v1");
}

TEST_CASE("criterion fragments") {
  CHECK(build_prompt("writing_style", "x", "y").find("has a more polished and beautiful writing style.") !=
        std::string::npos);
  CHECK(build_prompt("facts_trivia", "x", "y").find("contains more facts and trivia.") != std::string::npos);
  CHECK(build_prompt("educational_value", "x", "y").find("has more educational value") != std::string::npos);
  CHECK(build_prompt("required_expertise", "x", "y").find("requires greater expertise") != std::string::npos);
  CHECK_THROWS_WITH_AS(build_prompt("humor", "x", "y"), doctest::Contains("humor"), UsageError);
  CHECK_THROWS_AS(build_prompt("writing_style", "", "y"), DataError);

  CriterionRegistry reg;
  reg.add({"humor", "is funnier."});
  CHECK(build_prompt("humor", "x", "y", reg).find("choose the text which is funnier.") != std::string::npos);
  CHECK_THROWS_AS(reg.add({"humor", "again"}), UsageError);
  CHECK_THROWS_AS(reg.add({"blank", ""}), UsageError);
  CHECK(reg.names().size() == 5);
}

TEST_CASE("swapping texts only swaps the option slots") {
  const auto ab = build_prompt("writing_style", "FIRST {text_b} body", "SECOND body");
  const auto ba = build_prompt("writing_style", "SECOND body", "FIRST {text_b} body");
  const auto slot = [](const std::string& p, const std::string& label) {
    const auto start = p.find(label + "]\n... ") + label.size() + 6;
    return p.substr(start, p.find(" ...\n", start) - start);
  };
  CHECK(slot(ab, "[Option A") == "FIRST {text_b} body");
  CHECK(slot(ab, "[Option B") == "SECOND body");
  CHECK(slot(ba, "[Option A") == "SECOND body");
  CHECK(slot(ba, "[Option B") == "FIRST {text_b} body");
  auto blank = [&](std::string p) {
    for (const char* t : {"FIRST {text_b} body", "SECOND body"}) {
      for (auto pos = p.find(t); pos != std::string::npos; pos = p.find(t)) p.replace(pos, std::strlen(t), "#");
    }
    return p;
  };
  CHECK(blank(ab) == blank(ba));
}

TEST_CASE("confidence margin and filtering") {
  CHECK(confidence_margin(0.5) == 0.0);
  CHECK(confidence_margin(0.9) == doctest::Approx(0.8));
  CHECK(confidence_margin(0.0) == 1.0);
  for (double p : {0.0, 0.1, 0.37, 0.5, 0.73, 1.0}) CHECK(confidence_margin(p) == confidence_margin(1.0 - p));

  std::vector<JudgmentRecord> recs;
  for (double p : {0.3, 1.0, 0.5}) recs.push_back({"a", "b", "writing_style", p, 40});
  CHECK(filter_by_margin(recs, 0.0).size() == 3);
  const auto strict = filter_by_margin(recs, 1.0);
  REQUIRE(strict.size() == 1);
  CHECK(strict[0].p_b_over_a == 1.0);
  CHECK_THROWS_AS(filter_by_margin(recs, 1.5), UsageError);

  recs.push_back({"c", "d", "writing_style", 0.9, 0, 0, JudgmentStatus::kAbsent});
  CHECK(filter_by_margin(recs, 0.0).size() == 3);  // absent records never pass
  const auto kept = filter_by_margin(recs, 0.3);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].p_b_over_a == 0.3);  // order preserved
  CHECK(kept[1].p_b_over_a == 1.0);
}

TEST_CASE("pure positional bias cancels exactly") {
  FirstSlotJudge judge;
  for (int votes : {1, 2, 7, 20}) {
    const auto r = judge_pair(judge, "writing_style", pair("a", "b"), votes);
    CHECK(r.present());
    CHECK(r.p_b_over_a == 0.5);
    CHECK(r.n_votes == 2 * votes);
  }
}

TEST_CASE("both-order symmetry for deterministic judges") {
  LargerIdJudge larger;
  const auto ab = judge_pair(larger, "facts_trivia", pair("a", "b"), 5);
  const auto ba = judge_pair(larger, "facts_trivia", pair("b", "a"), 5);
  CHECK(ab.p_b_over_a == 1.0);
  CHECK(ab.p_b_over_a + ba.p_b_over_a == 1.0);

  std::unordered_map<std::string, double> ratings{{"a", 0.3}, {"b", -0.4}};
  for (double bias : {0.0, 0.25, 0.6}) {
    SimulatedJudge sim(ratings, bias, 99);
    for (int votes : {1, 5, 20}) {
      const auto x = judge_pair(sim, "writing_style", pair("a", "b"), votes);
      const auto y = judge_pair(sim, "writing_style", pair("b", "a"), votes);
      CHECK(x.p_b_over_a + y.p_b_over_a == 1.0);
    }
  }
}

TEST_CASE("vote order and idempotency keys") {
  RecordingJudge rec;
  judge_pair(rec, "writing_style", pair("a", "b"), 3);
  REQUIRE(rec.keys.size() == 6);
  CHECK(rec.shown_first == std::vector<std::string>{"a", "a", "a", "b", "b", "b"});
  std::set<std::string> unique(rec.keys.begin(), rec.keys.end());
  CHECK(unique.size() == 6);
  RecordingJudge again;
  judge_pair(again, "writing_style", pair("a", "b"), 3);
  CHECK(again.keys == rec.keys);
  RecordingJudge other;
  judge_pair(other, "facts_trivia", pair("a", "b"), 3);
  CHECK(other.keys != rec.keys);
}

TEST_CASE("unparseable votes are dropped and refusals are absent") {
  PartlyUnparseableJudge partial(2);
  const auto r = judge_pair(partial, "writing_style", pair("a", "b"), 5);
  CHECK(r.n_votes == 6);
  // Second slot: B when A is first, A when B is first.
  CHECK(r.p_b_over_a == 0.5);

  PartlyUnparseableJudge none(10);
  const auto empty = judge_pair(none, "writing_style", pair("a", "b"), 5);
  CHECK_FALSE(empty.present());
  CHECK(empty.n_votes == 0);

  RefusingJudge refusing;
  const auto refused = judge_pair(refusing, "writing_style", pair("a", "b"), 5);
  CHECK_FALSE(refused.present());
  CHECK(refused.n_votes == 0);

  CHECK_THROWS_AS(judge_pair(partial, "writing_style", pair("a", "b"), 0), UsageError);
}

TEST_CASE("simulated judge vote rates") {
  const int n = 100000;
  auto rate_b = [&](SimulatedJudge& j, std::string_view first, std::string_view second, std::string_view b_id) {
    int b = 0;
    for (int i = 0; i < n; ++i) {
      VoteRequest r{"writing_style", first, second, "", "", static_cast<std::uint32_t>(i), {}};
      const auto slot = j.vote(r);
      const auto chosen = *slot == Slot::kFirst ? first : second;
      b += chosen == b_id;
    }
    return static_cast<double>(b) / n;
  };
  const double sd_half = std::sqrt(0.25 / n);

  SimulatedJudge equal({{"a", 0.0}, {"b", 0.0}}, 0.0, 1);
  CHECK(std::abs(rate_b(equal, "a", "b", "b") - 0.5) < 3 * sd_half);

  SimulatedJudge saturated({{"a", 0.0}, {"b", 50.0}}, 0.0, 2);
  CHECK(rate_b(saturated, "a", "b", "b") >= 0.999);

  // bias 0.3, equal ratings, A shown first: 0.7 * 0.5 + 0.3 * 0
  SimulatedJudge biased({{"a", 0.0}, {"b", 0.0}}, 0.3, 3);
  CHECK(std::abs(rate_b(biased, "a", "b", "b") - 0.35) < 3 * std::sqrt(0.35 * 0.65 / n));
  CHECK(biased.first_slot_probability("a", "b") == doctest::Approx(0.65));

  CHECK_THROWS_AS(SimulatedJudge({{"a", 0.0}}, 1.0, 0), UsageError);
  CHECK_THROWS_AS(SimulatedJudge({{"a", INFINITY}}, 0.0, 0), DataError);
  CHECK_THROWS_AS(rate_b(equal, "a", "zz", "zz"), DataError);
}

TEST_CASE("aggregated preference tracks the generating probability") {
  const double gap = std::log(0.73 / 0.27);
  SimulatedJudge judge({{"a", 0.0}, {"b", gap}}, 0.0, 17);
  const auto r = judge_pair(judge, "writing_style", pair("a", "b"), 50000);
  CHECK(r.n_votes == 100000);
  CHECK(std::abs(r.p_b_over_a - 0.73) <= 0.01);

  SimulatedJudge same({{"a", 1.0}, {"b", 1.0}}, 0.0, 18);
  const auto s = judge_pair(same, "writing_style", pair("a", "b"), 50000);
  CHECK(std::abs(s.p_b_over_a - 0.5) <= 3 * std::sqrt(0.25 / 100000));
}

TEST_CASE("snippet lengths and windows") {
  int full = 0;
  std::map<std::size_t, int> short_lengths;
  for (std::uint64_t s = 0; s < 20000; ++s) {
    const auto n = draw_snippet_length(9, s);
    REQUIRE(n >= 256);
    REQUIRE(n <= 512);
    if (n == 512) {
      ++full;
    } else {
      ++short_lengths[n];
    }
  }
  // Half the draws are 512 outright; the uniform half adds 1/257 of its mass at 512.
  const double expected_full = 0.5 + 0.5 / 257.0;
  CHECK(std::abs(full / 20000.0 - expected_full) < 4 * std::sqrt(expected_full * (1 - expected_full) / 20000));
  CHECK(short_lengths.begin()->first == 256);
  CHECK(short_lengths.size() > 200);

  WhitespaceTokenizer tok;
  const std::string text = testing::words(1000);
  const auto snip = extract_snippet(text, tok, 300, 4, 77);
  CHECK(snip.length == 300);
  CHECK(tok.count(snip.text) == 300);
  CHECK(text.find(snip.text) != std::string::npos);
  CHECK(extract_snippet(text, tok, 300, 4, 77).text == snip.text);
  const auto clipped = extract_snippet("just three words", tok, 512, 4, 77);
  CHECK(clipped.length == 3);
  CHECK(clipped.text == "just three words");
  CHECK(extract_snippet("   ", tok, 512, 4, 77).length == 0);
}

TEST_CASE("judgment file round trip and validation") {
  testing::TempDir dir;
  const auto path = dir.file("j.jsonl");
  std::vector<JudgmentRecord> recs{{"a", "b", "writing_style", 0.25, 40, 300},
                                   {"c", "d", "facts_trivia", 0.5, 0, 0, JudgmentStatus::kAbsent}};
  {
    std::ofstream out(path);
    out << "{\"header\":{\"version\":\"x\"}}\n";
    for (const auto& r : recs) out << judgment_to_json_line(r) << '\n';
  }
  const auto lines = testing::read_lines(path);
  CHECK(lines[1] ==
        R"({"text_a_id":"a","text_b_id":"b","criterion":"writing_style","p_b_over_a":0.25,"n_votes":40,"snippet_len":300,"status":"present"})");
  const auto back = read_judgments(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].p_b_over_a == 0.25);
  CHECK(back[0].snippet_len == 300);
  CHECK_FALSE(back[1].present());

  testing::write_text(path, R"({"text_a_id":"a","text_b_id":"b","criterion":"c","p_b_over_a":1.5,"n_votes":2})" "\n");
  CHECK_THROWS_WITH_AS(read_judgments(path), doctest::Contains(":1:"), DataError);
  testing::write_text(path, R"({"text_a_id":"a","text_b_id":"b","criterion":"c","p_b_over_a":0.5,"n_votes":0})" "\n");
  CHECK_THROWS_AS(read_judgments(path), DataError);
  // Minimal external format: the five required keys only.
  testing::write_text(path, R"({"text_a_id":"a","text_b_id":"b","criterion":"c","p_b_over_a":0.75,"n_votes":40})" "\n");
  CHECK(read_judgments(path).at(0).p_b_over_a == 0.75);
}

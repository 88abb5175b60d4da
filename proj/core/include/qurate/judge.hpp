#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "qurate/corpus.hpp"
#include "qurate/error.hpp"

namespace qurate {

inline constexpr int kDefaultVotesPerOrder = 20;

struct Criterion {
  std::string name;
  std::string prompt_fragment;  // completes "choose the text which ..."
};

// Criteria known by name. Starts with the four built-in criteria; callers may
// register more.
class CriterionRegistry {
 public:
  CriterionRegistry();

  void add(Criterion criterion);  // throws UsageError on duplicates or empty fragments
  const Criterion& at(std::string_view name) const;  // throws UsageError naming it
  bool contains(std::string_view name) const;
  std::vector<std::string> names() const;

  static const CriterionRegistry& builtin();

 private:
  std::vector<Criterion> criteria_;
};

// The versioned template text compiled into the library.
std::string_view default_prompt_template();
std::string_view default_prompt_template_version();

// Substitutes {criterion}, {text_a} and {text_b} into the template.
std::string render_prompt(std::string_view templ, const Criterion& criterion,
                          std::string_view text_a, std::string_view text_b);

// Renders the built-in template for a criterion name looked up in `registry`.
std::string build_prompt(std::string_view criterion, std::string_view text_a,
                         std::string_view text_b,
                         const CriterionRegistry& registry = CriterionRegistry::builtin());

// Which document of the pair is presented first.
enum class Order : std::uint8_t { kAFirst, kBFirst };

// A slot in the rendered prompt: "Option A" is the first text shown.
enum class Slot : std::uint8_t { kFirst, kSecond };

enum class Choice : std::uint8_t { kA, kB };

// One query as the judge sees it: texts in presentation order.
struct VoteRequest {
  std::string_view criterion;
  std::string_view first_id;
  std::string_view second_id;
  std::string_view first_text;
  std::string_view second_text;
  std::uint32_t sample_index = 0;
  // Stable across retries and reruns; derived from (pair, order, sample_index).
  std::string idempotency_key;
};

// The judge declined to answer (e.g. a content filter). The pair is recorded
// as absent rather than imputed.
class JudgeRefusal : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Judge {
 public:
  virtual ~Judge() = default;
  // nullopt when the response could not be parsed into a choice. Throws
  // JudgeRefusal on refusals and ServiceError on transport failure.
  virtual std::optional<Slot> vote(const VoteRequest& request) = 0;
};

struct RawVote {
  std::string pair_id;
  Order order = Order::kAFirst;
  std::string criterion;
  std::uint32_t sample_index = 0;
  Choice choice = Choice::kA;
};

enum class JudgmentStatus : std::uint8_t { kPresent, kAbsent };

struct JudgmentRecord {
  std::string text_a_id;
  std::string text_b_id;
  std::string criterion;
  double p_b_over_a = 0.5;
  int n_votes = 0;
  int snippet_len = 0;
  JudgmentStatus status = JudgmentStatus::kPresent;

  bool present() const noexcept { return status == JudgmentStatus::kPresent; }
};

std::string make_pair_id(std::string_view a_id, std::string_view b_id);

struct PairTexts {
  std::string_view a_id;
  std::string_view b_id;
  std::string_view a_text;
  std::string_view b_text;
};

// Queries the judge votes_per_order times in each presentation order. Votes
// that could not be parsed are dropped. A refusal yields an empty vector and
// sets *refused.
std::vector<RawVote> collect_votes(Judge& judge, std::string_view criterion, const PairTexts& pair,
                                   int votes_per_order, bool* refused = nullptr);

// Mean over the two orders of the fraction of votes for B. Absent when either
// order has no usable votes.
JudgmentRecord aggregate_votes(std::string_view a_id, std::string_view b_id,
                               std::string_view criterion, const std::vector<RawVote>& votes);

JudgmentRecord judge_pair(Judge& judge, std::string_view criterion, const PairTexts& pair,
                          int votes_per_order = kDefaultVotesPerOrder);

// |2p - 1|
double confidence_margin(double p_b_over_a);

// Present records with confidence_margin >= threshold, order preserved.
std::vector<JudgmentRecord> filter_by_margin(const std::vector<JudgmentRecord>& records,
                                             double threshold);

// A judge that follows the Bradley-Terry generative model from known latent
// ratings, plus an optional pull towards whichever text is shown first:
//   P(choose B) = (1 - bias) * sigmoid(s_B - s_A) + bias * [B shown first]
// Each vote is a pure function of (seed, criterion, shown ids, sample index),
// so the judge is safe to share between threads.
class SimulatedJudge final : public Judge {
 public:
  SimulatedJudge(std::unordered_map<std::string, double> true_ratings, double positional_bias,
                 std::uint64_t seed);

  std::optional<Slot> vote(const VoteRequest& request) override;

  // Probability of choosing the first-shown text.
  double first_slot_probability(std::string_view first_id, std::string_view second_id) const;

 private:
  double rating(std::string_view id) const;

  std::unordered_map<std::string, double> ratings_;
  double bias_;
  std::uint64_t seed_;
};

SimulatedJudge make_simulated_judge(std::unordered_map<std::string, double> true_ratings,
                                    double positional_bias, std::uint64_t seed = 0);

// Random contiguous token window used as a judging snippet: the window length
// is Uniform[256, 512] half of the time and 512 otherwise, clipped to the
// document length.
struct Snippet {
  std::string text;
  std::size_t length = 0;
};

std::size_t draw_snippet_length(std::uint64_t seed, std::uint64_t stream);
Snippet extract_snippet(std::string_view text, const Tokenizer& tokenizer, std::size_t length,
                        std::uint64_t seed, std::uint64_t stream);

// Judgment files: JSON Lines with text_a_id, text_b_id, criterion,
// p_b_over_a (null when absent), n_votes, plus snippet_len and status.
std::vector<JudgmentRecord> read_judgments(const std::string& path);
std::string judgment_to_json_line(const JudgmentRecord& record);

}  // namespace qurate

#include "qurate/judge.hpp"

#include <algorithm>
#include <cmath>

#include "jsonl.hpp"
#include "qurate/hashing.hpp"

namespace qurate {
namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
}

}  // namespace

CriterionRegistry::CriterionRegistry() {
  criteria_ = {
      {"writing_style", "has a more polished and beautiful writing style."},
      {"facts_trivia",
       "contains more facts and trivia. Prefer specific facts and obscure trivia over more "
       "common knowledge."},
      {"educational_value",
       "has more educational value, e.g., it includes clear explanations, step-by-step "
       "reasoning, or questions and answers."},
      {"required_expertise", "requires greater expertise and prerequisite knowledge to understand it."},
  };
}

void CriterionRegistry::add(Criterion criterion) {
  if (criterion.name.empty()) throw UsageError("criterion name must be nonempty");
  if (criterion.prompt_fragment.empty()) {
    throw UsageError("criterion \"" + criterion.name + "\" has an empty prompt fragment");
  }
  if (contains(criterion.name)) throw UsageError("criterion \"" + criterion.name + "\" already defined");
  criteria_.push_back(std::move(criterion));
}

const Criterion& CriterionRegistry::at(std::string_view name) const {
  for (const auto& c : criteria_) {
    if (c.name == name) return c;
  }
  throw UsageError("unknown criterion \"" + std::string(name) + "\"");
}

bool CriterionRegistry::contains(std::string_view name) const {
  return std::any_of(criteria_.begin(), criteria_.end(),
                     [&](const Criterion& c) { return c.name == name; });
}

std::vector<std::string> CriterionRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& c : criteria_) out.push_back(c.name);
  return out;
}

const CriterionRegistry& CriterionRegistry::builtin() {
  static const CriterionRegistry registry;
  return registry;
}

std::string render_prompt(std::string_view templ, const Criterion& criterion,
                          std::string_view text_a, std::string_view text_b) {
  if (text_a.empty() || text_b.empty()) throw DataError("cannot build a prompt for an empty text");
  // Substitute the texts last so that braces inside them are left alone.
  std::string out(templ);
  replace_all(out, "{criterion}", criterion.prompt_fragment);
  const auto a_pos = out.find("{text_a}");
  const auto b_pos = out.find("{text_b}");
  if (a_pos == std::string::npos || b_pos == std::string::npos || b_pos < a_pos) {
    throw UsageError("prompt template must contain {text_a} followed by {text_b}");
  }
  std::string rendered;
  rendered.reserve(out.size() + text_a.size() + text_b.size());
  rendered.append(out, 0, a_pos);
  rendered.append(text_a);
  rendered.append(out, a_pos + 8, b_pos - a_pos - 8);
  rendered.append(text_b);
  rendered.append(out, b_pos + 8);
  return rendered;
}

std::string build_prompt(std::string_view criterion, std::string_view text_a,
                         std::string_view text_b, const CriterionRegistry& registry) {
  return render_prompt(default_prompt_template(), registry.at(criterion), text_a, text_b);
}

std::string make_pair_id(std::string_view a_id, std::string_view b_id) {
  std::string id;
  id.reserve(a_id.size() + b_id.size() + 1);
  id.append(a_id).push_back('\x1f');
  id.append(b_id);
  return id;
}

std::vector<RawVote> collect_votes(Judge& judge, std::string_view criterion, const PairTexts& pair,
                                   int votes_per_order, bool* refused) {
  if (votes_per_order < 1) throw UsageError("votes_per_order must be at least 1");
  if (refused) *refused = false;
  const std::string pair_id = make_pair_id(pair.a_id, pair.b_id);
  const std::uint64_t pair_hash = fnv1a64(pair_id) ^ fnv1a64(criterion);

  std::vector<RawVote> votes;
  votes.reserve(2 * static_cast<std::size_t>(votes_per_order));
  for (Order order : {Order::kAFirst, Order::kBFirst}) {
    const bool a_first = order == Order::kAFirst;
    VoteRequest request{criterion,
                        a_first ? pair.a_id : pair.b_id,
                        a_first ? pair.b_id : pair.a_id,
                        a_first ? pair.a_text : pair.b_text,
                        a_first ? pair.b_text : pair.a_text,
                        0,
                        {}};
    for (int i = 0; i < votes_per_order; ++i) {
      request.sample_index = static_cast<std::uint32_t>(i);
      request.idempotency_key =
          to_hex(mix64(pair_hash ^ (a_first ? 0x5555555555555555ull : 0xaaaaaaaaaaaaaaaaull)) +
                 static_cast<std::uint64_t>(i));
      std::optional<Slot> slot;
      try {
        slot = judge.vote(request);
      } catch (const JudgeRefusal&) {
        if (refused) *refused = true;
        return {};
      }
      if (!slot) continue;
      const bool chose_b = (*slot == Slot::kSecond) == a_first;
      votes.push_back(RawVote{pair_id, order, std::string(criterion), request.sample_index,
                              chose_b ? Choice::kB : Choice::kA});
    }
  }
  return votes;
}

JudgmentRecord aggregate_votes(std::string_view a_id, std::string_view b_id,
                               std::string_view criterion, const std::vector<RawVote>& votes) {
  JudgmentRecord record{std::string(a_id), std::string(b_id), std::string(criterion)};
  int count[2] = {0, 0};
  int b_count[2] = {0, 0};
  for (const auto& v : votes) {
    const auto o = static_cast<int>(v.order);
    ++count[o];
    if (v.choice == Choice::kB) ++b_count[o];
  }
  record.n_votes = count[0] + count[1];
  if (count[0] == 0 || count[1] == 0) {
    record.status = JudgmentStatus::kAbsent;
    return record;
  }
  const double rate_a_first = static_cast<double>(b_count[0]) / count[0];
  const double rate_b_first = static_cast<double>(b_count[1]) / count[1];
  record.p_b_over_a = 0.5 * (rate_a_first + rate_b_first);
  return record;
}

JudgmentRecord judge_pair(Judge& judge, std::string_view criterion, const PairTexts& pair,
                          int votes_per_order) {
  bool refused = false;
  const auto votes = collect_votes(judge, criterion, pair, votes_per_order, &refused);
  auto record = aggregate_votes(pair.a_id, pair.b_id, criterion, votes);
  if (refused) {
    record.status = JudgmentStatus::kAbsent;
    record.n_votes = 0;
  }
  return record;
}

double confidence_margin(double p_b_over_a) { return std::abs(2.0 * p_b_over_a - 1.0); }

std::vector<JudgmentRecord> filter_by_margin(const std::vector<JudgmentRecord>& records,
                                             double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw UsageError("margin threshold must be in [0, 1]");
  std::vector<JudgmentRecord> kept;
  for (const auto& r : records) {
    if (r.present() && confidence_margin(r.p_b_over_a) >= threshold) kept.push_back(r);
  }
  return kept;
}

SimulatedJudge::SimulatedJudge(std::unordered_map<std::string, double> true_ratings,
                               double positional_bias, std::uint64_t seed)
    : ratings_(std::move(true_ratings)), bias_(positional_bias), seed_(seed) {
  if (!(positional_bias >= 0.0 && positional_bias < 1.0)) {
    throw UsageError("positional_bias must be in [0, 1)");
  }
  for (const auto& [id, s] : ratings_) {
    if (!std::isfinite(s)) throw DataError("latent rating for \"" + id + "\" is not finite");
  }
}

double SimulatedJudge::rating(std::string_view id) const {
  const auto it = ratings_.find(std::string(id));
  if (it == ratings_.end()) throw DataError("simulated judge has no rating for \"" + std::string(id) + "\"");
  return it->second;
}

double SimulatedJudge::first_slot_probability(std::string_view first_id,
                                              std::string_view second_id) const {
  return (1.0 - bias_) * sigmoid(rating(first_id) - rating(second_id)) + bias_;
}

std::optional<Slot> SimulatedJudge::vote(const VoteRequest& request) {
  const double p_first = first_slot_probability(request.first_id, request.second_id);
  const std::uint64_t stream =
      mix64(mix64(fnv1a64(request.first_id)) + 0x9e3779b97f4a7c15ull * fnv1a64(request.second_id)) ^
      fnv1a64(request.criterion);
  const double u = CounterRng(seed_).uniform(stream, request.sample_index);
  return u < p_first ? Slot::kFirst : Slot::kSecond;
}

SimulatedJudge make_simulated_judge(std::unordered_map<std::string, double> true_ratings,
                                    double positional_bias, std::uint64_t seed) {
  return SimulatedJudge(std::move(true_ratings), positional_bias, seed);
}

std::size_t draw_snippet_length(std::uint64_t seed, std::uint64_t stream) {
  const CounterRng rng(seed);
  if (rng.uniform(stream, 0) < 0.5) {
    return 256 + static_cast<std::size_t>(rng.uniform(stream, 1) * 257.0);
  }
  return 512;
}

Snippet extract_snippet(std::string_view text, const Tokenizer& tokenizer, std::size_t length,
                        std::uint64_t seed, std::uint64_t stream) {
  const auto tokens = tokenizer.tokenize(text);
  if (tokens.empty()) return {};
  const std::size_t n = std::min(length, tokens.size());
  const std::size_t slack = tokens.size() - n;
  const std::size_t start =
      slack == 0 ? 0
                 : static_cast<std::size_t>(CounterRng(seed).uniform(stream, 2) * static_cast<double>(slack + 1));
  const char* base = text.data();
  const auto first = static_cast<std::size_t>(tokens[start].data() - base);
  const auto& last_tok = tokens[start + n - 1];
  const auto last = static_cast<std::size_t>(last_tok.data() - base) + last_tok.size();
  return Snippet{std::string(text.substr(first, last - first)), n};
}

std::vector<JudgmentRecord> read_judgments(const std::string& path) {
  jsonl::Reader reader(path);
  std::vector<JudgmentRecord> records;
  while (auto rec = reader.next()) {
    if (jsonl::is_header(*rec)) continue;
    const auto line = reader.line_number();
    JudgmentRecord r;
    r.text_a_id = jsonl::require<std::string>(*rec, "text_a_id", path, line);
    r.text_b_id = jsonl::require<std::string>(*rec, "text_b_id", path, line);
    r.criterion = jsonl::require<std::string>(*rec, "criterion", path, line);
    r.n_votes = jsonl::require<int>(*rec, "n_votes", path, line);
    if (rec->contains("snippet_len")) r.snippet_len = jsonl::require<int>(*rec, "snippet_len", path, line);
    const bool absent = rec->value("status", std::string("present")) == "absent";
    const auto p = rec->find("p_b_over_a");
    if (p == rec->end()) jsonl::fail(path, line, "missing required field \"p_b_over_a\"");
    if (absent || p->is_null()) {
      r.status = JudgmentStatus::kAbsent;
      r.p_b_over_a = 0.5;
    } else {
      r.p_b_over_a = jsonl::require<double>(*rec, "p_b_over_a", path, line);
      if (!(r.p_b_over_a >= 0.0 && r.p_b_over_a <= 1.0)) jsonl::fail(path, line, "p_b_over_a outside [0, 1]");
      if (r.n_votes < 1) jsonl::fail(path, line, "n_votes must be at least 1");
    }
    records.push_back(std::move(r));
  }
  return records;
}

std::string judgment_to_json_line(const JudgmentRecord& r) {
  nlohmann::ordered_json j;
  j["text_a_id"] = r.text_a_id;
  j["text_b_id"] = r.text_b_id;
  j["criterion"] = r.criterion;
  if (r.present()) {
    j["p_b_over_a"] = r.p_b_over_a;
  } else {
    j["p_b_over_a"] = nullptr;
  }
  j["n_votes"] = r.n_votes;
  j["snippet_len"] = r.snippet_len;
  j["status"] = r.present() ? "present" : "absent";
  return j.dump(-1, ' ', false, nlohmann::ordered_json::error_handler_t::replace);
}

}  // namespace qurate

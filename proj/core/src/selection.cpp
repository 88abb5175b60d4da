#include "qurate/selection.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <queue>
#include <thread>
#include <unordered_set>

#include "jsonl.hpp"
#include "qurate/hashing.hpp"

namespace qurate {
namespace {

struct Candidate {
  const std::string* id;
  double key;
  std::int64_t tokens;
  const std::string* domain;
};

// Strict weak order: descending key, then ascending id.
bool ranks_before(const Candidate& x, const Candidate& y) {
  if (x.key != y.key) return x.key > y.key;
  return *x.id < *y.id;
}

void check_budget(std::int64_t budget) {
  if (budget <= 0) throw UsageError("token budget must be positive");
}

// Assigns keys in `jobs` chunks, sorts each chunk, and merges the sorted runs
// until the running token count reaches the budget.
SelectionResult take_by_keys(std::span<const std::string> ids, const std::function<double(std::size_t)>& key_of,
                             std::int64_t budget, const DocumentIndex& corpus, unsigned jobs) {
  check_budget(budget);
  const std::size_t n = ids.size();
  std::vector<Candidate> cands(n);
  std::int64_t available = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& info = corpus.at(ids[i]);
    cands[i] = Candidate{&ids[i], 0.0, info.token_count, &info.domain};
    available += info.token_count;
  }
  if (available < budget) {
    throw DataError("token budget " + std::to_string(budget) + " exceeds the " + std::to_string(available) +
                    " tokens available (shortfall " + std::to_string(budget - available) + ")");
  }

  const std::size_t workers = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(1, n / 1024));
  const std::size_t chunk = (n + workers - 1) / std::max<std::size_t>(workers, 1);
  auto fill_and_sort = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) cands[i].key = key_of(i);
    std::sort(cands.begin() + static_cast<std::ptrdiff_t>(begin), cands.begin() + static_cast<std::ptrdiff_t>(end),
              ranks_before);
  };
  std::vector<std::pair<std::size_t, std::size_t>> runs;
  for (std::size_t begin = 0; begin < n; begin += chunk) runs.emplace_back(begin, std::min(n, begin + chunk));
  if (runs.size() <= 1) {
    if (!runs.empty()) fill_and_sort(runs[0].first, runs[0].second);
  } else {
    std::vector<std::thread> threads;
    for (const auto& [b, e] : runs) threads.emplace_back(fill_and_sort, b, e);
    for (auto& t : threads) t.join();
  }

  auto heap_cmp = [&](std::size_t r1, std::size_t r2) {
    return ranks_before(cands[runs[r2].first], cands[runs[r1].first]);
  };
  std::priority_queue<std::size_t, std::vector<std::size_t>, decltype(heap_cmp)> heap(heap_cmp);
  for (std::size_t r = 0; r < runs.size(); ++r) heap.push(r);

  SelectionResult result;
  while (result.total_tokens < budget && !heap.empty()) {
    const std::size_t r = heap.top();
    heap.pop();
    const Candidate& c = cands[runs[r].first];
    result.entries.push_back(SelectionEntry{*c.id, c.key, static_cast<std::int64_t>(result.entries.size() + 1),
                                            *c.domain, c.tokens});
    result.total_tokens += c.tokens;
    if (++runs[r].first < runs[r].second) heap.push(r);
  }
  return result;
}

void sort_and_rank(std::vector<SelectionEntry>& entries) {
  std::sort(entries.begin(), entries.end(), [](const SelectionEntry& x, const SelectionEntry& y) {
    if (x.gumbel_key != y.gumbel_key) return x.gumbel_key > y.gumbel_key;
    return x.id < y.id;
  });
  for (std::size_t i = 0; i < entries.size(); ++i) entries[i].sample_rank = static_cast<std::int64_t>(i + 1);
}

}  // namespace

double gumbel_noise(std::uint64_t seed, std::string_view doc_id) {
  return CounterRng(seed).gumbel(fnv1a64(doc_id));
}

double gumbel_key(double score, double temperature, double noise) {
  if (!(temperature > 0.0)) {
    throw UsageError("temperature must be positive for Gumbel sampling; use top-k selection for temperature 0");
  }
  return score / temperature + noise;
}

SelectionResult sample_logits(std::span<const std::string> ids, std::span<const double> scores,
                              const SelectionConfig& config, const DocumentIndex& corpus) {
  if (ids.size() != scores.size()) throw UsageError("ids and scores differ in length");
  gumbel_key(0.0, config.temperature, 0.0);  // validates the temperature
  const CounterRng rng(config.seed);
  auto result = take_by_keys(
      ids,
      [&](std::size_t i) {
        return gumbel_key(scores[i], config.temperature, rng.gumbel(fnv1a64(ids[i])));
      },
      config.token_budget, corpus, config.jobs);
  result.config = config;
  result.method = "sample";
  return result;
}

SelectionResult sample_without_replacement(const RatingTable& ratings, const SelectionConfig& config,
                                           const DocumentIndex& corpus) {
  if (!ratings.normalized()) {
    throw DataError("ratings for \"" + ratings.criterion() + "\" are not normalized; normalize before sampling");
  }
  return sample_logits(ratings.ids(), ratings.scores(), config, corpus);
}

SelectionResult select_topk(const RatingTable& ratings, std::int64_t token_budget, const DocumentIndex& corpus) {
  const auto& scores = ratings.scores();
  auto result = take_by_keys(
      ratings.ids(), [&](std::size_t i) { return scores[i]; }, token_budget, corpus, 1);
  result.config.temperature = 0.0;
  result.config.token_budget = token_budget;
  result.method = "topk";
  return result;
}

SelectionResult select(const RatingTable& ratings, const SelectionConfig& config, const DocumentIndex& corpus) {
  if (!(config.temperature >= 0.0)) throw UsageError("temperature must be nonnegative");
  if (config.inverse) {
    SelectionConfig plain = config;
    plain.inverse = false;
    auto result = select(invert_ratings(ratings), plain, corpus);
    result.config.inverse = true;
    return result;
  }
  if (config.temperature == 0.0) {
    auto result = select_topk(ratings, config.token_budget, corpus);
    result.config = config;
    return result;
  }
  return sample_without_replacement(ratings, config, corpus);
}

RatingTable invert_ratings(const RatingTable& ratings) {
  std::vector<double> negated(ratings.scores());
  for (double& s : negated) s = -s;
  return ratings.with_scores(std::move(negated));
}

SelectionResult mix_criteria(const std::vector<SelectionResult>& selections, std::int64_t token_budget,
                             std::uint64_t seed) {
  if (selections.size() < 2) throw UsageError("mixing needs at least two selections");
  check_budget(token_budget);
  std::unordered_set<std::string> seen;
  std::vector<SelectionEntry> pool;
  std::int64_t available = 0;
  for (const auto& sel : selections) {
    for (const auto& e : sel.entries) {
      if (seen.insert(e.id).second) {
        pool.push_back(e);
        available += e.token_count;
      }
    }
  }
  if (available < token_budget) {
    throw DataError("mixed selections hold " + std::to_string(available) + " tokens, fewer than the budget " +
                    std::to_string(token_budget));
  }
  const CounterRng rng(seed);
  for (auto& e : pool) e.gumbel_key = rng.gumbel(fnv1a64(e.id));
  sort_and_rank(pool);

  SelectionResult result;
  for (auto& e : pool) {
    if (result.total_tokens >= token_budget) break;
    result.total_tokens += e.token_count;
    result.entries.push_back(std::move(e));
  }
  result.config = selections.front().config;
  result.config.token_budget = token_budget;
  result.config.seed = seed;
  result.method = "mix";
  return result;
}

std::map<std::string, std::int64_t> apportion_budget(const std::map<std::string, double>& proportions,
                                                     std::int64_t token_budget) {
  check_budget(token_budget);
  double sum = 0.0;
  for (const auto& [domain, p] : proportions) {
    if (!(p >= 0.0)) throw UsageError("domain proportion for \"" + domain + "\" is negative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw UsageError("domain proportions must sum to 1");

  std::map<std::string, std::int64_t> budgets;
  std::vector<std::pair<double, std::string>> remainders;
  std::int64_t assigned = 0;
  for (const auto& [domain, p] : proportions) {
    const double quota = p * static_cast<double>(token_budget);
    const auto whole = static_cast<std::int64_t>(std::floor(quota + 1e-9 * std::max(1.0, quota)));
    budgets[domain] = whole;
    assigned += whole;
    remainders.emplace_back(quota - static_cast<double>(whole), domain);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& x, const auto& y) { return x.first > y.first; });
  for (std::size_t i = 0; assigned < token_budget && i < remainders.size(); ++i, ++assigned) {
    ++budgets[remainders[i].second];
  }
  return budgets;
}

SelectionResult select_per_domain(const RatingTable& ratings, const SelectionConfig& config,
                                  const DocumentIndex& corpus) {
  if (!config.domain_proportions) throw UsageError("per-domain selection needs domain proportions");
  const auto& proportions = *config.domain_proportions;

  std::map<std::string, std::vector<std::string>> by_domain;
  for (const auto& id : ratings.ids()) by_domain[corpus.at(id).domain].push_back(id);
  for (const auto& [domain, _] : by_domain) {
    if (!proportions.count(domain)) {
      throw DataError("domain \"" + domain + "\" has no configured proportion");
    }
  }
  const auto budgets = apportion_budget(proportions, config.token_budget);

  SelectionConfig inner = config;
  inner.domain_proportions.reset();
  SelectionResult merged;
  for (const auto& [domain, budget] : budgets) {
    if (budget == 0) continue;
    const auto it = by_domain.find(domain);
    std::int64_t available = 0;
    if (it != by_domain.end()) {
      for (const auto& id : it->second) available += corpus.at(id).token_count;
    }
    if (budget > available) {
      throw DataError("domain \"" + domain + "\" budget of " + std::to_string(budget) + " tokens exceeds its " +
                      std::to_string(available) + " rated tokens");
    }
    inner.token_budget = budget;
    auto part = select(ratings.subset(it->second), inner, corpus);
    merged.total_tokens += part.total_tokens;
    merged.method = "per_domain:" + part.method;
    for (auto& e : part.entries) merged.entries.push_back(std::move(e));
  }
  sort_and_rank(merged.entries);
  merged.config = config;
  return merged;
}

CurriculumDirection parse_curriculum_direction(std::string_view name) {
  if (name == "sampled" || name == "sampled-order") return CurriculumDirection::kSampledOrder;
  if (name == "reverse" || name == "reverse-sampled-order") return CurriculumDirection::kReverseSampledOrder;
  if (name == "shuffled" || name == "shuffle") return CurriculumDirection::kShuffled;
  throw UsageError("unknown curriculum direction \"" + std::string(name) + "\"");
}

std::string_view to_string(CurriculumDirection direction) {
  switch (direction) {
    case CurriculumDirection::kSampledOrder: return "sampled-order";
    case CurriculumDirection::kReverseSampledOrder: return "reverse-sampled-order";
    case CurriculumDirection::kShuffled: return "shuffled";
  }
  return "unknown";
}

std::vector<std::string> curriculum_order(const SelectionResult& selection, CurriculumDirection direction,
                                          std::uint64_t seed) {
  std::vector<const SelectionEntry*> order;
  order.reserve(selection.entries.size());
  for (const auto& e : selection.entries) order.push_back(&e);
  std::stable_sort(order.begin(), order.end(), [](const SelectionEntry* x, const SelectionEntry* y) {
    return x->sample_rank < y->sample_rank;
  });

  std::vector<std::string> ids;
  ids.reserve(order.size());
  for (const auto* e : order) ids.push_back(e->id);
  switch (direction) {
    case CurriculumDirection::kSampledOrder:
      break;
    case CurriculumDirection::kReverseSampledOrder:
      std::reverse(ids.begin(), ids.end());
      break;
    case CurriculumDirection::kShuffled: {
      const CounterRng rng(seed);
      std::vector<std::pair<double, std::string>> keyed;
      keyed.reserve(ids.size());
      for (auto& id : ids) keyed.emplace_back(rng.uniform(fnv1a64(id)), std::move(id));
      std::sort(keyed.begin(), keyed.end());
      ids.clear();
      for (auto& [_, id] : keyed) ids.push_back(std::move(id));
      break;
    }
  }
  return ids;
}

void write_manifest(const std::string& path, const SelectionResult& result, const ManifestHeader& header) {
  using ojson = nlohmann::ordered_json;
  ojson h;
  h["version"] = QURATE_VERSION;
  h["method"] = result.method;
  h["criterion"] = header.criterion;
  h["temperature"] = result.config.temperature;
  h["token_budget"] = result.config.token_budget;
  h["inverse"] = result.config.inverse;
  h["seed"] = result.config.seed;
  if (result.config.domain_proportions) {
    h["domain_proportions"] = *result.config.domain_proportions;
  } else {
    h["domain_proportions"] = nullptr;
  }
  h["ratings_digest"] = header.ratings_digest;
  h["count"] = result.entries.size();
  h["total_tokens"] = result.total_tokens;
  if (!header.extra_json.empty()) {
    const auto extra = ojson::parse(header.extra_json);
    for (const auto& [k, v] : extra.items()) h[k] = v;
  }

  jsonl::AtomicWriter out(path);
  auto write = [&](const ojson& j) { out.stream() << j.dump(-1, ' ', false, ojson::error_handler_t::replace) << '\n'; };
  write(ojson{{"header", h}});
  for (const auto& e : result.entries) {
    ojson line;
    line["id"] = e.id;
    line["gumbel_key"] = e.gumbel_key;
    line["sample_rank"] = e.sample_rank;
    line["domain"] = e.domain;
    line["token_count"] = e.token_count;
    write(line);
  }
  out.commit();
}

SelectionResult read_manifest(const std::string& path) {
  jsonl::Reader reader(path);
  SelectionResult result;
  bool have_header = false;
  while (auto rec = reader.next()) {
    const auto line = reader.line_number();
    if (jsonl::is_header(*rec)) {
      const auto& h = (*rec)["header"];
      result.method = h.value("method", std::string());
      result.config.temperature = h.value("temperature", 0.0);
      result.config.token_budget = h.value("token_budget", std::int64_t{0});
      result.config.inverse = h.value("inverse", false);
      result.config.seed = h.value("seed", std::uint64_t{0});
      if (h.contains("domain_proportions") && h["domain_proportions"].is_object()) {
        result.config.domain_proportions = h["domain_proportions"].get<std::map<std::string, double>>();
      }
      have_header = true;
      continue;
    }
    SelectionEntry e;
    e.id = jsonl::require<std::string>(*rec, "id", path, line);
    e.gumbel_key = jsonl::require<double>(*rec, "gumbel_key", path, line);
    e.sample_rank = jsonl::require<std::int64_t>(*rec, "sample_rank", path, line);
    e.domain = rec->value("domain", std::string(kUnknownDomain));
    e.token_count = jsonl::require<std::int64_t>(*rec, "token_count", path, line);
    result.total_tokens += e.token_count;
    result.entries.push_back(std::move(e));
  }
  if (!have_header) throw DataError(path + ": manifest has no header line");
  return result;
}

}  // namespace qurate

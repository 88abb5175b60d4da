#include "qurate/ratings.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "jsonl.hpp"
#include "qurate/hashing.hpp"

namespace qurate {
namespace {

struct Edge {
  std::size_t a;
  std::size_t b;
  double p;
};

// Judgments resolved to table indices; absent records are skipped.
std::vector<Edge> compile_edges(const RatingTable& table, const std::vector<JudgmentRecord>& judgments) {
  std::vector<Edge> edges;
  edges.reserve(judgments.size());
  for (const auto& j : judgments) {
    if (!j.present()) continue;
    const auto a = table.index_of(j.text_a_id);
    if (!a) throw DataError("no rating for document \"" + j.text_a_id + "\"");
    const auto b = table.index_of(j.text_b_id);
    if (!b) throw DataError("no rating for document \"" + j.text_b_id + "\"");
    edges.push_back({*a, *b, j.p_b_over_a});
  }
  return edges;
}

double mean_of_squares(std::span<const double> s) {
  double acc = 0.0;
  for (double x : s) acc += x * x;
  return s.empty() ? 0.0 : acc / static_cast<double>(s.size());
}

double edge_loss(std::span<const Edge> edges, std::span<const double> s, double l2_weight) {
  double total = 0.0;
  for (const auto& e : edges) {
    const double d = s[e.b] - s[e.a];
    total += e.p * softplus(-d) + (1.0 - e.p) * softplus(d);
  }
  double loss = edges.empty() ? 0.0 : total / static_cast<double>(edges.size());
  if (l2_weight > 0.0) loss += l2_weight * mean_of_squares(s);
  return loss;
}

// Gradient, and optionally the diagonal of the Hessian.
void edge_gradient(std::span<const Edge> edges, std::span<const double> s, double l2_weight,
                   std::vector<double>& grad, std::vector<double>* diag) {
  const std::size_t n = s.size();
  grad.assign(n, 0.0);
  if (diag) diag->assign(n, 0.0);
  const double inv_m = edges.empty() ? 0.0 : 1.0 / static_cast<double>(edges.size());
  for (const auto& e : edges) {
    const double q = sigmoid(s[e.b] - s[e.a]);
    const double r = (q - e.p) * inv_m;
    grad[e.b] += r;
    grad[e.a] -= r;
    if (diag) {
      const double h = q * (1.0 - q) * inv_m;
      (*diag)[e.a] += h;
      (*diag)[e.b] += h;
    }
  }
  if (l2_weight > 0.0) {
    const double c = 2.0 * l2_weight / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      grad[i] += c * s[i];
      if (diag) (*diag)[i] += c;
    }
  }
}

double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

void center(std::vector<double>& s) {
  if (s.empty()) return;
  const double mean = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
  for (double& x : s) x -= mean;
}

std::size_t count_components(std::size_t n, std::span<const Edge> edges) {
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  std::size_t components = n;
  for (const auto& e : edges) {
    const auto ra = find(e.a);
    const auto rb = find(e.b);
    if (ra != rb) {
      parent[ra] = rb;
      --components;
    }
  }
  return components;
}

}  // namespace

double sigmoid(double x) noexcept {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) noexcept { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

RatingTable::RatingTable(std::string criterion, std::vector<std::string> ids, std::vector<double> scores)
    : criterion_(std::move(criterion)), ids_(std::move(ids)), scores_(std::move(scores)) {
  if (ids_.size() != scores_.size()) throw DataError("rating table ids and scores differ in length");
  index_.reserve(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!std::isfinite(scores_[i])) throw DataError("rating for \"" + ids_[i] + "\" is not finite");
    if (!index_.emplace(ids_[i], i).second) throw DataError("duplicate rating id \"" + ids_[i] + "\"");
  }
}

std::optional<std::size_t> RatingTable::index_of(std::string_view id) const {
  const auto it = index_.find(std::string(id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

double RatingTable::score(std::string_view id) const {
  if (const auto i = index_of(id)) return scores_[*i];
  throw DataError("no rating for document \"" + std::string(id) + "\"");
}

void RatingTable::mark_normalized(double mean, double variance) noexcept {
  normalized_ = true;
  norm_mean_ = mean;
  norm_variance_ = variance;
}

RatingTable RatingTable::with_scores(std::vector<double> scores) const {
  RatingTable out(criterion_, ids_, std::move(scores));
  out.normalized_ = normalized_;
  out.norm_mean_ = norm_mean_;
  out.norm_variance_ = norm_variance_;
  return out;
}

RatingTable RatingTable::subset(std::span<const std::string> ids) const {
  std::vector<double> scores;
  scores.reserve(ids.size());
  for (const auto& id : ids) scores.push_back(score(id));
  RatingTable out(criterion_, std::vector<std::string>(ids.begin(), ids.end()), std::move(scores));
  out.normalized_ = normalized_;
  out.norm_mean_ = norm_mean_;
  out.norm_variance_ = norm_variance_;
  return out;
}

double bt_loss(const RatingTable& scores, const std::vector<JudgmentRecord>& judgments, double l2_weight) {
  const auto edges = compile_edges(scores, judgments);
  return edge_loss(edges, scores.scores(), l2_weight);
}

std::vector<double> bt_gradient(const RatingTable& scores, const std::vector<JudgmentRecord>& judgments,
                                double l2_weight) {
  const auto edges = compile_edges(scores, judgments);
  std::vector<double> grad;
  edge_gradient(edges, scores.scores(), l2_weight, grad, nullptr);
  return grad;
}

FitResult fit_ratings_with_report(const std::vector<JudgmentRecord>& judgments, const FitConfig& config,
                                  std::string criterion) {
  if (!(config.learning_rate > 0.0)) throw UsageError("learning_rate must be positive");
  if (!(config.grad_tolerance > 0.0)) throw UsageError("grad_tolerance must be positive");
  if (!(config.l2_weight >= 0.0)) throw UsageError("l2_weight must be nonnegative");
  if (config.max_iters < 1) throw UsageError("max_iters must be at least 1");

  std::vector<std::string> ids;
  std::unordered_map<std::string, std::size_t> seen;
  for (const auto& j : judgments) {
    if (!j.present()) continue;
    if (!(j.p_b_over_a >= 0.0 && j.p_b_over_a <= 1.0)) throw DataError("p_b_over_a outside [0, 1]");
    if (criterion.empty()) criterion = j.criterion;
    for (const auto* id : {&j.text_a_id, &j.text_b_id}) {
      if (seen.emplace(*id, ids.size()).second) ids.push_back(*id);
    }
  }
  if (ids.empty()) throw DataError("judgment graph is empty");

  const std::size_t n = ids.size();
  RatingTable shape(criterion, ids, std::vector<double>(n, 0.0));
  const auto edges = compile_edges(shape, judgments);
  if (config.l2_weight == 0.0 && count_components(n, edges) > 1) {
    throw DataError("identifiability: comparison graph disconnected");
  }

  // Gradient descent preconditioned by the Hessian diagonal, with Armijo
  // backtracking. The objective is convex; mean-centering is free because the
  // data term is translation invariant and the L2 term is minimized at mean 0.
  std::vector<double> s(n, 0.0), trial(n), grad, diag, dir(n);
  double loss = edge_loss(edges, s, config.l2_weight);
  FitReport report;
  report.n_items = n;
  report.n_judgments = edges.size();
  int iter = 0;
  for (;; ++iter) {
    edge_gradient(edges, s, config.l2_weight, grad, &diag);
    report.grad_norm = max_abs(grad);
    if (report.grad_norm <= config.grad_tolerance) break;
    if (iter >= config.max_iters) {
      throw DataError("fit did not converge: gradient max-norm " + std::to_string(report.grad_norm) +
                      " after " + std::to_string(iter) + " iterations");
    }
    const double floor = 1e-12 * std::max(max_abs(diag), 1e-300);
    double slope = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      dir[i] = -grad[i] / std::max(diag[i], floor);
      slope += grad[i] * dir[i];
    }
    double step = config.learning_rate;
    bool accepted = false;
    for (int halvings = 0; halvings < 80; ++halvings, step *= 0.5) {
      for (std::size_t i = 0; i < n; ++i) trial[i] = s[i] + step * dir[i];
      center(trial);
      const double trial_loss = edge_loss(edges, trial, config.l2_weight);
      if (trial_loss <= loss + 1e-4 * step * slope) {
        s.swap(trial);
        loss = trial_loss;
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      throw DataError("fit did not converge: line search failed with gradient max-norm " +
                      std::to_string(report.grad_norm));
    }
  }
  report.iterations = iter;
  report.final_loss = loss;
  return FitResult{RatingTable(std::move(criterion), std::move(ids), std::move(s)), report};
}

RatingTable fit_ratings(const std::vector<JudgmentRecord>& judgments, const FitConfig& config) {
  return fit_ratings_with_report(judgments, config).table;
}

double predict_preference(const RatingTable& scores, std::string_view a, std::string_view b) {
  return sigmoid(scores.score(b) - scores.score(a));
}

RatingTable normalize(const RatingTable& table) {
  const auto& s = table.scores();
  if (s.size() < 2) throw DataError("normalization needs at least 2 ratings");
  const double n = static_cast<double>(s.size());
  // Neumaier-compensated sum for the mean, then a two-pass variance.
  double sum = 0.0, comp = 0.0;
  for (double x : s) {
    const double t = sum + x;
    comp += std::abs(sum) >= std::abs(x) ? (sum - t) + x : (x - t) + sum;
    sum = t;
  }
  const double mean = (sum + comp) / n;
  double ss = 0.0, dev_sum = 0.0;
  for (double x : s) {
    const double d = x - mean;
    ss += d * d;
    dev_sum += d;
  }
  const double variance = (ss - dev_sum * dev_sum / n) / n;
  if (!(variance > 0.0)) throw DataError("degenerate ratings: zero variance");
  const double inv_sd = 1.0 / std::sqrt(variance);
  std::vector<double> out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = (s[i] - mean) * inv_sd;
  RatingTable result(table.criterion(), table.ids(), std::move(out));
  result.mark_normalized(mean, variance);
  return result;
}

double held_out_accuracy(const RatingTable& scores, const std::vector<JudgmentRecord>& judgments,
                         double margin) {
  double hits = 0.0;
  std::size_t count = 0;
  for (const auto& j : judgments) {
    if (!j.present() || confidence_margin(j.p_b_over_a) < margin) continue;
    const double gap = scores.score(j.text_b_id) - scores.score(j.text_a_id);
    const double pref = j.p_b_over_a - 0.5;
    ++count;
    if (gap == 0.0 || pref == 0.0) {
      hits += 0.5;
    } else if ((gap > 0.0) == (pref > 0.0)) {
      hits += 1.0;
    }
  }
  if (count == 0) throw DataError("no judgments with confidence margin >= " + std::to_string(margin));
  return hits / static_cast<double>(count);
}

void write_ratings(const std::string& path, const std::vector<RatingTable>& tables,
                   const RatingsProvenance& provenance) {
  using ojson = nlohmann::ordered_json;
  if (tables.empty()) throw UsageError("no rating tables to write");

  std::vector<std::string> ids;
  std::unordered_map<std::string, std::size_t> row;
  for (const auto& t : tables) {
    for (const auto& id : t.ids()) {
      if (row.emplace(id, ids.size()).second) ids.push_back(id);
    }
  }

  jsonl::AtomicWriter out(path);
  for (const auto& id : ids) {
    ojson line;
    line["id"] = id;
    for (const auto& t : tables) {
      if (const auto i = t.index_of(id)) line[t.criterion()] = t.scores()[*i];
    }
    out.stream() << line.dump(-1, ' ', false, ojson::error_handler_t::replace) << '\n';
  }

  std::vector<CriterionStats> stats;
  for (const auto& t : tables) {
    stats.push_back({t.criterion(), t.size(), t.normalized(), t.normalization_mean(), t.normalization_variance()});
  }
  out.commit();
  write_ratings_meta(path, stats, provenance);
}

void write_ratings_meta(const std::string& path, const std::vector<CriterionStats>& criteria_stats,
                        const RatingsProvenance& provenance) {
  using ojson = nlohmann::ordered_json;
  ojson meta;
  meta["version"] = QURATE_VERSION;
  meta["source"] = provenance.source;
  if (!provenance.judgments_digest.empty()) meta["judgments_digest"] = provenance.judgments_digest;
  if (provenance.has_fit) {
    meta["fit"] = {{"learning_rate", provenance.fit.learning_rate},
                   {"max_iters", provenance.fit.max_iters},
                   {"grad_tolerance", provenance.fit.grad_tolerance},
                   {"l2_weight", provenance.fit.l2_weight},
                   {"seed", provenance.fit.seed}};
  }
  ojson criteria = ojson::object();
  for (const auto& c : criteria_stats) {
    criteria[c.name] = {{"count", c.count}, {"normalized", c.normalized}, {"mean", c.mean}, {"variance", c.variance}};
  }
  meta["criteria"] = criteria;
  jsonl::AtomicWriter meta_out(path + ".meta.json");
  meta_out.stream() << meta.dump(2) << '\n';
  meta_out.commit();
}

namespace {

nlohmann::ordered_json read_meta(const std::string& path) {
  std::ifstream in(path + ".meta.json");
  if (!in) return nlohmann::ordered_json::object();
  auto meta = nlohmann::ordered_json::parse(in, nullptr, false);
  if (meta.is_discarded()) throw DataError(path + ".meta.json: malformed JSON");
  return meta;
}

}  // namespace

RatingTable read_ratings(const std::string& path, std::string_view criterion) {
  const std::string key(criterion);
  jsonl::Reader reader(path);
  std::vector<std::string> ids;
  std::vector<double> scores;
  while (auto rec = reader.next()) {
    if (jsonl::is_header(*rec)) continue;
    const auto it = rec->find(key);
    if (it == rec->end() || it->is_null()) continue;
    ids.push_back(jsonl::require<std::string>(*rec, "id", path, reader.line_number()));
    scores.push_back(jsonl::require<double>(*rec, key.c_str(), path, reader.line_number()));
  }
  if (ids.empty()) throw DataError(path + ": no ratings for criterion \"" + key + "\"");
  RatingTable table(key, std::move(ids), std::move(scores));

  const auto meta = read_meta(path);
  if (meta.contains("criteria") && meta["criteria"].contains(key)) {
    const auto& c = meta["criteria"][key];
    if (c.value("normalized", false)) table.mark_normalized(c.value("mean", 0.0), c.value("variance", 1.0));
  }
  return table;
}

std::vector<std::string> ratings_criteria(const std::string& path) {
  const auto meta = read_meta(path);
  std::vector<std::string> names;
  if (meta.contains("criteria")) {
    for (const auto& [name, _] : meta["criteria"].items()) names.push_back(name);
  }
  return names;
}

}  // namespace qurate

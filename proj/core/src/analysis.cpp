#include "qurate/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <set>

#include "jsonl.hpp"

namespace qurate {
namespace {

// Merge sort that returns the number of inversions in v.
std::uint64_t count_inversions(std::vector<std::size_t>& v, std::vector<std::size_t>& scratch, std::size_t lo,
                               std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::uint64_t inv = count_inversions(v, scratch, lo, mid) + count_inversions(v, scratch, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[i] <= v[j]) {
      scratch[k++] = v[i++];
    } else {
      inv += mid - i;
      scratch[k++] = v[j++];
    }
  }
  while (i < mid) scratch[k++] = v[i++];
  while (j < hi) scratch[k++] = v[j++];
  std::copy(scratch.begin() + static_cast<std::ptrdiff_t>(lo), scratch.begin() + static_cast<std::ptrdiff_t>(hi),
            v.begin() + static_cast<std::ptrdiff_t>(lo));
  return inv;
}

// Single-pass (Welford) co-moment accumulation, then correlation.
std::vector<std::vector<double>> correlation_matrix(const std::vector<std::vector<double>>& columns) {
  const std::size_t k = columns.size();
  const std::size_t n = columns.front().size();
  std::vector<double> mean(k, 0.0), delta(k);
  std::vector<std::vector<double>> co(k, std::vector<double>(k, 0.0));
  for (std::size_t row = 0; row < n; ++row) {
    const double inv = 1.0 / static_cast<double>(row + 1);
    for (std::size_t i = 0; i < k; ++i) {
      delta[i] = columns[i][row] - mean[i];
      mean[i] += delta[i] * inv;
    }
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = i; j < k; ++j) co[i][j] += delta[i] * (columns[j][row] - mean[j]);
    }
  }
  std::vector<std::vector<double>> r(k, std::vector<double>(k, 1.0));
  for (std::size_t i = 0; i < k; ++i) {
    if (!(co[i][i] > 0.0)) throw DataError("correlation undefined: a rating table has zero variance");
  }
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      const double c = std::clamp(co[i][j] / std::sqrt(co[i][i] * co[j][j]), -1.0, 1.0);
      r[i][j] = r[j][i] = c;
    }
  }
  return r;
}

std::vector<std::size_t> ascending_order(const RatingTable& t, std::span<const std::size_t> subset) {
  std::vector<std::size_t> idx(subset.begin(), subset.end());
  const auto& s = t.scores();
  const auto& ids = t.ids();
  std::sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) {
    if (s[x] != s[y]) return s[x] < s[y];
    return ids[x] < ids[y];
  });
  return idx;
}

}  // namespace

void AttributeTable::add(std::string id, std::vector<std::string> labels) {
  if (labels.empty()) throw DataError("document \"" + id + "\" has no attribute labels");
  for (const auto& l : labels) {
    if (l.empty()) throw DataError("document \"" + id + "\" has an empty attribute label");
  }
  // A label listed twice for one document still counts once.
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  if (!labels_.emplace(id, std::move(labels)).second) {
    throw DataError("duplicate attribute record for \"" + id + "\"");
  }
  order_.push_back(std::move(id));
}

const std::vector<std::string>* AttributeTable::find(const std::string& id) const {
  const auto it = labels_.find(id);
  return it == labels_.end() ? nullptr : &it->second;
}

AttributeTable read_attributes(const std::string& path) {
  jsonl::Reader reader(path);
  AttributeTable table;
  while (auto rec = reader.next()) {
    if (jsonl::is_header(*rec)) continue;
    const auto line = reader.line_number();
    table.add(jsonl::require<std::string>(*rec, "id", path, line),
              jsonl::require<std::vector<std::string>>(*rec, "labels", path, line));
  }
  return table;
}

RetentionReport retention_rates(const AttributeTable& attributes, const std::unordered_set<std::string>& selected) {
  for (const auto& id : selected) {
    if (!attributes.find(id)) throw DataError("selected document \"" + id + "\" has no attribute record");
  }
  std::map<std::string, AttributeRetention> by_label;
  for (const auto& id : attributes.ids()) {
    const bool kept = selected.count(id) > 0;
    for (const auto& label : *attributes.find(id)) {
      auto& r = by_label[label];
      ++r.total;
      if (kept) ++r.retained;
    }
  }
  RetentionReport report;
  report.selected = static_cast<std::int64_t>(selected.size());
  report.universe = static_cast<std::int64_t>(attributes.size());
  report.selection_fraction =
      report.universe == 0 ? 0.0 : static_cast<double>(report.selected) / static_cast<double>(report.universe);
  for (auto& [label, r] : by_label) {
    if (r.total == 0) {
      ++report.omitted_empty;
      continue;
    }
    r.label = label;
    r.rate = static_cast<double>(r.retained) / static_cast<double>(r.total);
    report.attributes.push_back(r);
  }
  return report;
}

double kendall_tau(std::span<const std::string> ranking_a, std::span<const std::string> ranking_b) {
  const std::size_t n = ranking_a.size();
  if (ranking_b.size() != n) throw DataError("rankings have different lengths");
  if (n < 2) throw DataError("Kendall tau needs at least 2 items");
  std::unordered_map<std::string_view, std::size_t> pos_b;
  pos_b.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!pos_b.emplace(ranking_b[i], i).second) {
      throw DataError("duplicate id \"" + ranking_b[i] + "\" in ranking");
    }
  }
  std::vector<std::size_t> seq(n);
  std::vector<char> used(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto it = pos_b.find(ranking_a[i]);
    if (it == pos_b.end()) throw DataError("rankings cover different ids (\"" + ranking_a[i] + "\")");
    if (used[it->second]++) throw DataError("duplicate id \"" + ranking_a[i] + "\" in ranking");
    seq[i] = it->second;
  }
  std::vector<std::size_t> scratch(n);
  const double discordant = static_cast<double>(count_inversions(seq, scratch, 0, n));
  const double pairs = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
  return (pairs - 2.0 * discordant) / pairs;
}

std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return values[x] < values[y]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && values[idx[j + 1]] == values[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[idx[t]] = r;
    i = j + 1;
  }
  return ranks;
}

CorrelationMatrices rank_correlations(const std::vector<RatingTable>& tables) {
  if (tables.empty()) throw UsageError("no rating tables to correlate");
  const auto& ids = tables.front().ids();
  if (ids.size() < 2) throw DataError("correlations need at least 2 items");

  CorrelationMatrices out;
  std::vector<std::vector<double>> raw, ranked;
  for (const auto& t : tables) {
    if (t.size() != ids.size()) throw DataError("rating tables cover different ids");
    std::vector<double> aligned(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const auto j = t.index_of(ids[i]);
      if (!j) throw DataError("rating tables cover different ids (\"" + ids[i] + "\")");
      aligned[i] = t.scores()[*j];
    }
    out.criteria.push_back(t.criterion());
    ranked.push_back(average_ranks(aligned));
    raw.push_back(std::move(aligned));
  }
  out.pearson = correlation_matrix(raw);
  out.spearman = correlation_matrix(ranked);
  return out;
}

PercentileResult percentile_documents(const RatingTable& ratings, std::span<const double> percentiles,
                                      const AttributeTable* group_by) {
  for (double q : percentiles) {
    if (!(q >= 0.0 && q <= 100.0)) throw UsageError("percentiles must lie in [0, 100]");
  }
  std::map<std::string, std::vector<std::size_t>> groups;
  if (group_by) {
    std::set<std::string> all_labels;
    for (const auto& id : group_by->ids()) {
      for (const auto& label : *group_by->find(id)) all_labels.insert(label);
    }
    for (const auto& label : all_labels) groups[label];
    for (std::size_t i = 0; i < ratings.size(); ++i) {
      if (const auto* labels = group_by->find(ratings.ids()[i])) {
        for (const auto& label : *labels) groups[label].push_back(i);
      }
    }
  } else {
    auto& all = groups[""];
    all.resize(ratings.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
  }

  PercentileResult result;
  for (const auto& [label, members] : groups) {
    if (members.empty()) {
      ++result.empty_groups;
      continue;
    }
    const auto order = ascending_order(ratings, members);
    const double n = static_cast<double>(order.size());
    for (double q : percentiles) {
      auto rank = static_cast<std::int64_t>(std::ceil(q * n / 100.0));
      rank = std::clamp<std::int64_t>(rank, 1, static_cast<std::int64_t>(order.size()));
      const std::size_t i = order[static_cast<std::size_t>(rank - 1)];
      result.picks.push_back(PercentilePick{label, q, ratings.ids()[i], ratings.scores()[i]});
    }
  }
  return result;
}

std::string truncate_utf8(std::string_view text, std::size_t max_bytes) {
  if (text.size() <= max_bytes) return std::string(text);
  std::size_t cut = max_bytes;
  // Step back over continuation bytes (10xxxxxx) to a sequence boundary.
  while (cut > 0 && (static_cast<unsigned char>(text[cut]) & 0xC0) == 0x80) --cut;
  return std::string(text.substr(0, cut));
}

void write_retention_csv(std::ostream& out, const RetentionReport& report) {
  out << "attribute,retained,total,rate\n";
  out << std::setprecision(17);
  for (const auto& a : report.attributes) {
    std::string label = a.label;
    if (label.find_first_of(",\"\n") != std::string::npos) {
      std::string quoted = "\"";
      for (char c : label) {
        if (c == '"') quoted += '"';
        quoted += c;
      }
      label = quoted + "\"";
    }
    out << label << ',' << a.retained << ',' << a.total << ',' << a.rate << '\n';
  }
}

void write_correlations_csv(std::ostream& out, const CorrelationMatrices& m) {
  out << "kind,criterion_a,criterion_b,coefficient\n";
  out << std::setprecision(17);
  const std::pair<const char*, const std::vector<std::vector<double>>*> kinds[] = {{"pearson", &m.pearson},
                                                                                   {"spearman", &m.spearman}};
  for (const auto& [kind, mat] : kinds) {
    for (std::size_t i = 0; i < m.criteria.size(); ++i) {
      for (std::size_t j = 0; j < m.criteria.size(); ++j) {
        out << kind << ',' << m.criteria[i] << ',' << m.criteria[j] << ',' << (*mat)[i][j] << '\n';
      }
    }
  }
}

void print_retention_table(std::ostream& out, const RetentionReport& report) {
  std::size_t width = 9;
  for (const auto& a : report.attributes) width = std::max(width, a.label.size());
  out << std::left << std::setw(static_cast<int>(width)) << "attribute" << std::right << std::setw(10) << "retained"
      << std::setw(10) << "total" << std::setw(10) << "rate" << '\n';
  for (const auto& a : report.attributes) {
    out << std::left << std::setw(static_cast<int>(width)) << a.label << std::right << std::setw(10) << a.retained
        << std::setw(10) << a.total << std::setw(10) << std::fixed << std::setprecision(4) << a.rate << '\n';
  }
  out << "selected " << report.selected << " of " << report.universe << " (" << std::fixed << std::setprecision(4)
      << report.selection_fraction << ")\n";
  out.unsetf(std::ios::floatfield);
}

void print_correlation_table(std::ostream& out, const CorrelationMatrices& m) {
  const std::pair<const char*, const std::vector<std::vector<double>>*> kinds[] = {{"Pearson", &m.pearson},
                                                                                   {"Spearman", &m.spearman}};
  std::size_t width = 8;
  for (const auto& c : m.criteria) width = std::max(width, c.size() + 2);
  for (const auto& [kind, mat] : kinds) {
    out << kind << '\n' << std::setw(static_cast<int>(width)) << "";
    for (const auto& c : m.criteria) out << std::setw(static_cast<int>(width)) << c;
    out << '\n';
    for (std::size_t i = 0; i < m.criteria.size(); ++i) {
      out << std::setw(static_cast<int>(width)) << m.criteria[i];
      for (std::size_t j = 0; j < m.criteria.size(); ++j) {
        out << std::setw(static_cast<int>(width)) << std::fixed << std::setprecision(3) << (*mat)[i][j];
      }
      out << '\n';
    }
  }
  out.unsetf(std::ios::floatfield);
}

}  // namespace qurate

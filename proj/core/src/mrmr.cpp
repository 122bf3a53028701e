#include "ecgfe/mrmr.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "ecgfe/error.hpp"

namespace ecgfe::mrmr {

using nlohmann::json;

namespace {

constexpr std::size_t kMaxBins = 16;
constexpr std::size_t kTargetDeciles = 10;
constexpr double kTieTol = 1e-12;

} // namespace

Table table_from(const features::FeatureMatrix& m, std::span<const std::size_t> rows) {
  Table t;
  t.rows = rows.size();
  t.cols = m.cols();
  t.ids = m.columns;
  t.values.reserve(t.rows * t.cols);
  t.missing.reserve(t.rows * t.cols);
  for (std::size_t r : rows)
    for (std::size_t c = 0; c < t.cols; ++c) {
      t.values.push_back(m.at(r, c));
      t.missing.push_back(m.is_missing(r, c) ? 1 : 0);
    }
  return t;
}

std::size_t default_bins(std::size_t n) {
  const auto root = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  return std::clamp<std::size_t>(root, 1, kMaxBins);
}

Discretized discretize(std::span<const double> values, std::span<const std::uint8_t> missing, std::size_t bins) {
  const std::size_t n = values.size();
  if (bins == 0 || bins > 255) throw InvalidArgument("discretize: bins must be in [1, 255]");
  Discretized d;
  d.codes.assign(n, static_cast<std::uint8_t>(bins));
  d.levels = bins + 1;
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < n; ++i)
    if (missing.empty() || !missing[i]) order.push_back(i);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return values[a] < values[b] || (values[a] == values[b] && a < b);
  });
  const std::size_t m = order.size();
  std::size_t first = 0;
  for (std::size_t k = 0; k < m; ++k) {
    // Equal values share the bin of their first rank.
    if (k > 0 && values[order[k]] != values[order[k - 1]]) first = k;
    d.codes[order[k]] = static_cast<std::uint8_t>(first * bins / m);
  }
  return d;
}

Discretized discretize_target(std::span<const double> target, TargetKind kind) {
  if (kind == TargetKind::Binary) {
    Discretized d;
    d.levels = 2;
    d.codes.reserve(target.size());
    for (double v : target) d.codes.push_back(v > 0.5 ? 1 : 0);
    return d;
  }
  return discretize(target, {}, kTargetDeciles);
}

double mutual_information(const Discretized& a, const Discretized& b) {
  const std::size_t n = a.codes.size();
  if (n != b.codes.size()) throw InvalidArgument("mutual_information: length mismatch");
  if (n == 0) return 0.0;
  std::vector<std::size_t> joint(a.levels * b.levels, 0), pa(a.levels, 0), pb(b.levels, 0);
  for (std::size_t i = 0; i < n; ++i) {
    ++joint[a.codes[i] * b.levels + b.codes[i]];
    ++pa[a.codes[i]];
    ++pb[b.codes[i]];
  }
  const double dn = static_cast<double>(n);
  double mi = 0.0;
  for (std::size_t i = 0; i < a.levels; ++i)
    for (std::size_t j = 0; j < b.levels; ++j) {
      const std::size_t c = joint[i * b.levels + j];
      if (c == 0) continue;
      const double pij = static_cast<double>(c) / dn;
      mi += pij * std::log(pij * dn * dn / (static_cast<double>(pa[i]) * static_cast<double>(pb[j])));
    }
  return std::max(0.0, mi);
}

FeatureRanking rank_mrmr(const Table& table, std::span<const double> target, TargetKind kind,
                         std::string target_label, const RankOptions& options) {
  const std::size_t n = table.rows, p = table.cols;
  if (p == 0) throw InvalidArgument("rank_mrmr: no features");
  if (target.size() != n) throw InvalidArgument("rank_mrmr: target length differs from row count");
  if (table.ids.size() != p) throw InvalidArgument("rank_mrmr: one id per column required");
  const Discretized y = discretize_target(target, kind);
  if (std::all_of(y.codes.begin(), y.codes.end(), [&](std::uint8_t c) { return c == y.codes.front(); }))
    throw InvalidArgument("rank_mrmr: target is constant");

  const std::size_t bins = default_bins(n);
  std::vector<Discretized> x(p);
  std::vector<bool> informative(p, false);
  std::vector<double> column(n);
  std::vector<std::uint8_t> mask(n);
  for (std::size_t c = 0; c < p; ++c) {
    for (std::size_t r = 0; r < n; ++r) {
      column[r] = table.at(r, c);
      mask[r] = table.is_missing(r, c) ? 1 : 0;
    }
    informative[c] = std::find(mask.begin(), mask.end(), 0) != mask.end();
    if (informative[c]) x[c] = discretize(column, mask, bins);
  }

  std::vector<double> relevance(p, 0.0);
  for (std::size_t c = 0; c < p; ++c)
    if (informative[c]) relevance[c] = mutual_information(x[c], y);

  FeatureRanking out;
  out.target_label = std::move(target_label);
  std::vector<std::size_t> remaining;
  for (std::size_t c = 0; c < p; ++c)
    if (informative[c]) remaining.push_back(c);
  const std::size_t steps = options.limit == 0 ? remaining.size() : std::min(options.limit, remaining.size());
  std::vector<double> redundancy_sum(p, 0.0);

  for (std::size_t step = 0; step < steps; ++step) {
    const double denom = step == 0 ? 1.0 : static_cast<double>(step);
    std::size_t best_pos = 0;
    for (std::size_t k = 1; k < remaining.size(); ++k) {
      const std::size_t c = remaining[k], b = remaining[best_pos];
      const double sc = relevance[c] - redundancy_sum[c] / denom;
      const double sb = relevance[b] - redundancy_sum[b] / denom;
      if (sc > sb + kTieTol || (std::abs(sc - sb) <= kTieTol && redundancy_sum[c] < redundancy_sum[b] - kTieTol))
        best_pos = k;
    }
    const std::size_t pick = remaining[best_pos];
    out.ordered.push_back(table.ids[pick]);
    out.scores.push_back(relevance[pick] - redundancy_sum[pick] / denom);
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(best_pos));
    if (step + 1 < steps)
      for (std::size_t c : remaining) redundancy_sum[c] += mutual_information(x[c], x[pick]);
  }

  // Past the greedy limit: relevance order, position breaking ties.
  std::stable_sort(remaining.begin(), remaining.end(),
                   [&](std::size_t a, std::size_t b) { return relevance[a] > relevance[b] + kTieTol; });
  for (std::size_t c : remaining) {
    out.ordered.push_back(table.ids[c]);
    out.scores.push_back(relevance[c]);
  }
  for (std::size_t c = 0; c < p; ++c)
    if (!informative[c]) {
      out.ordered.push_back(table.ids[c]);
      out.scores.push_back(kUninformative);
      out.uninformative.push_back(table.ids[c]);
    }
  return out;
}

UnionSelection union_select(std::span<const FeatureRanking> rankings, std::size_t k) {
  if (k == 0) throw InvalidArgument("union_select: k must be at least 1");
  if (rankings.empty()) throw InvalidArgument("union_select: no rankings");
  std::set<std::size_t> universe(rankings.front().ordered.begin(), rankings.front().ordered.end());
  UnionSelection sel;
  sel.k_per_label = k;
  std::set<std::size_t> all;
  for (const FeatureRanking& r : rankings) {
    if (std::set<std::size_t>(r.ordered.begin(), r.ordered.end()) != universe)
      throw InvalidArgument("union_select: rankings cover different feature sets");
    const std::size_t take = std::min(k, r.ordered.size());
    std::vector<std::size_t> top(r.ordered.begin(), r.ordered.begin() + static_cast<std::ptrdiff_t>(take));
    std::sort(top.begin(), top.end());
    all.insert(top.begin(), top.end());
    sel.per_label_top_k[r.target_label] = std::move(top);
  }
  sel.selected.assign(all.begin(), all.end());
  return sel;
}

PlateauChoice plateau_pick(const std::map<std::size_t, double>& scores, double tol) {
  if (scores.empty()) throw InvalidArgument("plateau_pick: no evaluated feature counts");
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& [k, s] : scores) best = std::max(best, s);
  for (const auto& [k, s] : scores)
    if (s >= best - tol) return {k, k != scores.rbegin()->first};
  return {scores.rbegin()->first, false};
}

namespace {

json score_to_json(double s) { return std::isfinite(s) ? json(s) : json("uninformative"); }

double score_from_json(const json& j) { return j.is_string() ? kUninformative : j.get<double>(); }

} // namespace

json ranking_to_json(const FeatureRanking& r) {
  json scores = json::array();
  for (double s : r.scores) scores.push_back(score_to_json(s));
  return {{"label", r.target_label}, {"ordered", r.ordered}, {"scores", scores}, {"uninformative", r.uninformative}};
}

FeatureRanking ranking_from_json(const json& j) {
  FeatureRanking r;
  try {
    r.target_label = j.at("label").get<std::string>();
    r.ordered = j.at("ordered").get<std::vector<std::size_t>>();
    for (const auto& s : j.at("scores")) r.scores.push_back(score_from_json(s));
    r.uninformative = j.at("uninformative").get<std::vector<std::size_t>>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("ranking: ") + e.what());
  }
  if (r.scores.size() != r.ordered.size()) throw FormatError("ranking: one score per feature required");
  return r;
}

json union_to_json(const UnionSelection& s) {
  return {{"k_per_label", s.k_per_label}, {"per_label_top_k", s.per_label_top_k}, {"selected", s.selected}};
}

UnionSelection union_from_json(const json& j) {
  UnionSelection s;
  try {
    s.k_per_label = j.at("k_per_label").get<std::size_t>();
    s.per_label_top_k = j.at("per_label_top_k").get<std::map<std::string, std::vector<std::size_t>>>();
    s.selected = j.at("selected").get<std::vector<std::size_t>>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("union selection: ") + e.what());
  }
  return s;
}

} // namespace ecgfe::mrmr

#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ecgfe/features.hpp"

namespace ecgfe::mrmr {

/// Row-major samples x features with an optional missing mask and a stable id
/// per column. Ids, not positions, appear in rankings.
struct Table {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
  /// Empty, or one flag per cell.
  std::vector<std::uint8_t> missing;
  std::vector<std::size_t> ids;

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  bool is_missing(std::size_t r, std::size_t c) const { return !missing.empty() && missing[r * cols + c] != 0; }
};

/// Selected rows of a feature matrix; ids are registry column indices.
Table table_from(const features::FeatureMatrix& m, std::span<const std::size_t> rows);

enum class TargetKind : std::uint8_t { Binary, Continuous };

/// Equal-frequency codes; equal values share a bin, missing cells take code `bins`.
struct Discretized {
  std::vector<std::uint8_t> codes;
  std::size_t levels = 0;
};

std::size_t default_bins(std::size_t n);
Discretized discretize(std::span<const double> values, std::span<const std::uint8_t> missing, std::size_t bins);
Discretized discretize_target(std::span<const double> target, TargetKind kind);

/// Plug-in mutual information (nats) of two code vectors.
double mutual_information(const Discretized& a, const Discretized& b);

inline constexpr double kUninformative = -std::numeric_limits<double>::infinity();

struct FeatureRanking {
  std::string target_label;
  /// Column ids, best first.
  std::vector<std::size_t> ordered;
  /// Step score of each pick: relevance minus mean redundancy with earlier picks.
  /// Masked-only columns close the order with kUninformative.
  std::vector<double> scores;
  std::vector<std::size_t> uninformative;
};

struct RankOptions {
  /// Greedy steps to run; remaining columns follow by relevance. 0 ranks all.
  std::size_t limit = 0;
};

/// MID greedy forward selection. Ties within 1e-12 go to the candidate with
/// lower mean redundancy, then to the lower column position.
FeatureRanking rank_mrmr(const Table& table, std::span<const double> target, TargetKind kind,
                         std::string target_label, const RankOptions& options = {});

struct UnionSelection {
  std::size_t k_per_label = 0;
  std::map<std::string, std::vector<std::size_t>> per_label_top_k;
  /// Ascending ids.
  std::vector<std::size_t> selected;
};

UnionSelection union_select(std::span<const FeatureRanking> rankings, std::size_t k);

struct PlateauChoice {
  std::size_t k = 0;
  /// False when the best-within-tolerance k is the largest evaluated k.
  bool plateau = true;
};

inline constexpr double kDefaultPlateauTol = 0.005;

PlateauChoice plateau_pick(const std::map<std::size_t, double>& validation_scores, double tol = kDefaultPlateauTol);

nlohmann::json ranking_to_json(const FeatureRanking& ranking);
FeatureRanking ranking_from_json(const nlohmann::json& j);
nlohmann::json union_to_json(const UnionSelection& selection);
UnionSelection union_from_json(const nlohmann::json& j);

} // namespace ecgfe::mrmr

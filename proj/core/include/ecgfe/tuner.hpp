#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ecgfe/forest.hpp"
#include "ecgfe/random.hpp"

namespace ecgfe::tune {

enum class ParamKind : std::uint8_t { Integer, LogInteger, Categorical };

/// Integer kinds cover [lo, hi]; categorical params take an index into `choices`.
struct ParamSpec {
  std::string name;
  ParamKind kind = ParamKind::Integer;
  double lo = 0.0;
  double hi = 0.0;
  std::vector<double> choices;
};

using Params = std::map<std::string, double>;

struct SearchSpace {
  std::vector<ParamSpec> params;

  Params sample(Rng& rng) const;
  bool contains(const Params& p) const;
  /// Surrogate coordinates: integers as-is, log integers in log space, categoricals by index.
  std::vector<double> encode(const Params& p) const;
  /// Number of distinct points, saturating at 2^62.
  std::uint64_t cardinality() const;
};

struct Trial {
  Params params;
  std::optional<double> score;
  std::string error;
};

struct SearchTrace {
  std::vector<Trial> trials;
  std::optional<std::size_t> best;
  std::size_t budget = 0;

  const Trial& best_trial() const { return trials.at(best.value()); }
};

struct TuneOptions {
  std::size_t budget = 30;
  std::size_t warmup = 10;
  /// Random candidates scored by expected improvement per proposal.
  std::size_t candidates = 600;
  std::size_t surrogate_trees = 40;
  std::uint64_t seed = 0;
};

using Objective = std::function<double(const Params&)>;

/// Maximises the objective: random warm-up, then proposals maximising expected
/// improvement under a random-forest surrogate. Throwing objectives are recorded
/// as failed trials. Stops early once the space is exhausted.
SearchTrace tune(const SearchSpace& space, const Objective& objective, const TuneOptions& options);

/// trees [50, 500], depth {4..32, unlimited}, min leaf [1, 100] log-scaled,
/// both criteria of the task, feature count from `feature_counts`.
SearchSpace forest_space(const std::vector<std::size_t>& feature_counts);
/// Depth value of this magnitude decodes to "unlimited".
inline constexpr double kUnlimitedDepth = 33.0;
forest::ForestConfig decode_forest(const Params& p, forest::TaskKind kind, const forest::ForestConfig& base,
                                   const std::vector<std::size_t>& feature_counts);

nlohmann::json trace_to_json(const SearchTrace& trace);

} // namespace ecgfe::tune

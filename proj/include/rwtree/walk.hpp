#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "rwtree/arena.hpp"
#include "rwtree/errors.hpp"
#include "rwtree/rng.hpp"

namespace rwtree {

struct WalkRecord {
  std::uint64_t steps = 0;
  std::uint64_t root_local_time = 0;
  std::vector<std::uint64_t> return_times;
  std::int32_t max_depth = 0;
  std::uint64_t root_visits_even = 0;
};

class BudgetExhausted : public Error {
 public:
  BudgetExhausted(const std::string& what, WalkRecord partial)
      : Error(what), partial_(std::move(partial)) {}
  const WalkRecord& partial() const { return partial_; }

 private:
  WalkRecord partial_;
};

inline constexpr std::uint64_t kDefaultStepBudget = 10'000'000;
inline constexpr std::uint64_t kMaxHorizon = 100'000;

/// One move of the chain. From the root's parent the walk always enters the
/// root; children of `position` are expanded on arrival.
inline NodeId step(TreeArena& arena, NodeId position, RngStream& rng) {
  if (position == kRootParent) return kRoot;
  const ChildRange ch = arena.expand(position);
  const double up = arena.up_probability(position);
  const double u = rng.uniform();
  if (u < up || ch.count == 0) return arena.parent(position);
  double acc = up;
  for (std::int32_t i = 0; i + 1 < ch.count; ++i) {
    acc += arena.mark(ch.first + i) * up;
    if (u < acc) return ch.first + i;
  }
  return ch.first + ch.count - 1;
}

/// Walk from the root until `k_returns` returns or `step_budget` steps.
/// Throws BudgetExhausted (carrying the partial record) when the budget
/// runs out first.
WalkRecord run_return_times(TreeArena& arena, std::size_t k_returns, std::uint64_t step_budget,
                            RngStream& rng);

struct WalkOptions {
  bool quenched = true;  // false: every replica gets its own environment
  unsigned workers = 1;
  std::size_t chunk_size = 4096;
  std::size_t arena_capacity = TreeArena::kDefaultCapacity;
  bool keep_first_returns = false;
};

struct SurvivalCurve {
  std::vector<std::uint64_t> horizons;
  std::vector<double> survival;
  std::vector<double> standard_errors;
  std::size_t replicas = 0;
  /// Per replica first return time, or horizons.back() + 1 when censored.
  std::vector<std::uint32_t> first_returns;
};

/// Estimates P(T+ > n) at each horizon. Quenched mode runs every replica on
/// the environment (spec, env_seed); annealed mode uses a fresh environment
/// per replica. Replica r walks with RngStream(walk_seed, r).
SurvivalCurve survival_curve(const EnvironmentSpec& spec, std::uint64_t env_seed,
                             const std::vector<std::uint64_t>& horizons, std::size_t replicas,
                             std::uint64_t walk_seed, const WalkOptions& options = {});

struct LocalTimeResult {
  std::uint64_t n = 0;
  std::size_t replicas = 0;
  std::vector<double> local_times;  // L_n of the root, one per replica
  std::vector<std::uint64_t> probe_times;
  std::vector<double> point_prob;
  std::vector<double> point_stderr;
  /// Average of 1{X_m = root} over even m within +-5% of the probe time.
  std::vector<double> window_prob;
  std::vector<double> window_stderr;
};

/// Quenched replicas of length n on one environment: law of L_n and the
/// probability of sitting at the root at each (even) probe time.
LocalTimeResult local_time_and_local_prob(const EnvironmentSpec& spec, std::uint64_t env_seed,
                                          std::uint64_t n,
                                          const std::vector<std::uint64_t>& probe_times,
                                          std::size_t replicas, std::uint64_t walk_seed,
                                          const WalkOptions& options = {});

/// Exact laws of the depth process for specs with a single atom. There the
/// walk's distance to the root is a birth-death chain with up-probability
/// 1/(1 + sum A) = 1/2 from every vertex, and the root's parent reflects.
struct DepthChainOracle {
  double up_probability = 0.5;

  static DepthChainOracle for_spec(const EnvironmentSpec& spec);
  /// P(T+ > n) for n = 0..n_max.
  std::vector<double> survival(std::size_t n_max) const;
  /// P(X_n = root) for n = 0..n_max.
  std::vector<double> return_probability(std::size_t n_max) const;
};

/// Mean of e^{-lambda (1 + T)} over walks started at the root's child
/// `child_index`, T being the hitting time of the root; walks longer than
/// `horizon` count as 0.
struct ExcursionEstimate {
  double mean = 0.0;
  double stderr_ = 0.0;
  std::size_t censored = 0;
};
ExcursionEstimate excursion_laplace(const EnvironmentSpec& spec, std::uint64_t env_seed,
                                    std::size_t child_index, double lambda, std::size_t replicas,
                                    std::uint64_t horizon, std::uint64_t walk_seed);

}  // namespace rwtree

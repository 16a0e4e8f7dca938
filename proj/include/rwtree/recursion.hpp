#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "rwtree/arena.hpp"
#include "rwtree/walk.hpp"

namespace rwtree {

inline double epsilon_from_lambda(double lambda) { return -std::expm1(-2.0 * lambda); }
inline double lambda_from_epsilon(double eps) { return -0.5 * std::log1p(-eps); }

/// Truncation of the backward pass. Vertices whose path weight falls below
/// `min_weight` are not expanded; their beta is replaced by `fill` (for
/// instance the annealed mean of (eps + B)/(1 + B)). Passes with fill = eps
/// and fill = 1 bracket the untruncated value.
struct PruneOptions {
  double min_weight = 0.0;
  double fill = std::numeric_limits<double>::quiet_NaN();  // NaN: mean beta of expanded vertices
  bool collapse_homogeneous = true;
};

struct RecursionField {
  int depth = 0;
  double lambda = 0.0;
  double epsilon = 0.0;
  /// Single-atom specs: beta depends on the generation only, stored per level.
  bool collapsed = false;
  std::vector<double> level_values;
  /// Indexed by NodeId; NaN for vertices outside the truncated tree.
  std::vector<double> values;
  double root_B = 0.0;
  double root_B_lower = 0.0;
  double root_B_upper = 0.0;
  double max_residual = 0.0;
  std::size_t nodes = 0;
  std::size_t pruned = 0;
};

/// beta_{n,lambda} on the tree cut at generation n (beta = 1 there).
RecursionField beta_backward(TreeArena& arena, int n, double lambda,
                             const PruneOptions& prune = {});

inline constexpr int kDefaultDepths[] = {100, 200, 400, 800};

struct BEpsilonResult {
  double root_B = 0.0;
  double gap = 0.0;
  std::vector<int> depths;
  std::vector<double> values;
  double lower = 0.0;
  double upper = 0.0;
};

/// Runs beta_backward along an increasing depth schedule. Throws
/// TruncationTooShallow when the last two depths differ by more than `tol`.
BEpsilonResult b_epsilon(TreeArena& arena, double epsilon, const std::vector<int>& depth_schedule,
                         double tol = 1e-6, const PruneOptions& prune = {});

struct AbelCheck {
  double lambda = 0.0;
  double epsilon = 0.0;
  double omega_root = 0.0;
  double root_B = 0.0;
  double lhs = 0.0;
  double lhs_stderr = 0.0;
  /// omega_root (eps + B) / (1 - e^{-lambda}): the exact transform.
  double rhs = 0.0;
  double rhs_halfwidth = 0.0;
  /// omega_root B / (1 - e^{-lambda}), which drops the n = 0, 1 terms.
  double rhs_short = 0.0;
  double tail_bound = 0.0;
  double relative_discrepancy = 0.0;
  double z = 0.0;
  bool pass = false;
};

/// Compares sum_n e^{-lambda n} P(T+ > n), estimated from the first return
/// times in `survival`, with the recursion on `arena`. The survival curve
/// must carry first returns and should come from the same environment.
AbelCheck abel_cross_check(TreeArena& arena, double lambda, const SurvivalCurve& survival,
                           int depth = 800, const PruneOptions& prune = {});

struct MartingaleTrace {
  std::vector<double> values;  // values[k] = M_{k+1}
  double limit_estimate = 0.0;
  double plateau_change = 0.0;
  bool plateau_ok = false;
};

/// M_1..M_N by exact accumulation of path weights (kept in log space).
MartingaleTrace martingale_trace(TreeArena& arena, int N);

/// sum of W(x) over the first vertices on each ray with W(x) < min_weight.
/// Its conditional mean given the tree above that line is M_infinity.
double stopping_line_limit(TreeArena& arena, double min_weight);

}  // namespace rwtree

#include "rwtree/recursion.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "rwtree/errors.hpp"
#include "rwtree/stats.hpp"

namespace rwtree {

namespace {

enum class Kind : std::uint8_t { Internal, Boundary, Pruned };

struct Truncation {
  std::vector<NodeId> order;  // breadth first
  std::vector<Kind> kind;     // parallel to order
};

Truncation truncate(TreeArena& arena, int n, double min_weight) {
  Truncation tr;
  const double log_cut = min_weight > 0.0 ? std::log(min_weight) : -INFINITY;
  tr.order.push_back(kRoot);
  for (std::size_t i = 0; i < tr.order.size(); ++i) {
    const NodeId x = tr.order[i];
    if (arena.depth(x) >= n) {
      tr.kind.push_back(Kind::Boundary);
    } else if (x != kRoot && arena.log_weight(x) < log_cut) {
      tr.kind.push_back(Kind::Pruned);
    } else {
      tr.kind.push_back(Kind::Internal);
      const ChildRange ch = arena.expand(x);
      for (std::int32_t c = 0; c < ch.count; ++c) tr.order.push_back(ch.first + c);
    }
  }
  return tr;
}

double weighted_children(const TreeArena& arena, const std::vector<double>& values, NodeId x) {
  const ChildRange ch = arena.children(x);
  CompensatedSum s;
  for (std::int32_t c = 0; c < ch.count; ++c) {
    const NodeId y = ch.first + c;
    s.add(arena.mark(y) * values[static_cast<std::size_t>(y)]);
  }
  return s.value();
}

// One backward sweep; returns B at the root.
double sweep(const TreeArena& arena, const Truncation& tr, double eps, double fill,
             std::vector<double>& values) {
  for (std::size_t i = tr.order.size(); i-- > 0;) {
    const NodeId x = tr.order[i];
    double v = 1.0;
    switch (tr.kind[i]) {
      case Kind::Boundary:
        v = 1.0;
        break;
      case Kind::Pruned:
        v = fill;
        break;
      case Kind::Internal: {
        const double s = weighted_children(arena, values, x);
        v = (eps + s) / (1.0 + s);
        break;
      }
    }
    values[static_cast<std::size_t>(x)] = v;
  }
  return weighted_children(arena, values, kRoot);
}

}  // namespace

RecursionField beta_backward(TreeArena& arena, int n, double lambda, const PruneOptions& prune) {
  if (n < 1) throw std::invalid_argument("recursion depth must be at least 1");
  if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
  RecursionField f;
  f.depth = n;
  f.lambda = lambda;
  f.epsilon = epsilon_from_lambda(lambda);
  const double eps = f.epsilon;

  const EnvironmentSpec& spec = arena.spec();
  if (prune.collapse_homogeneous && spec.is_homogeneous()) {
    CompensatedSum total;
    for (double a : spec.atoms().front().marks) total.add(a);
    const double sum_a = total.value();
    f.collapsed = true;
    f.level_values.assign(static_cast<std::size_t>(n) + 1, 1.0);
    for (int d = n - 1; d >= 0; --d) {
      const double s = sum_a * f.level_values[static_cast<std::size_t>(d) + 1];
      const double v = (eps + s) / (1.0 + s);
      f.level_values[static_cast<std::size_t>(d)] = v;
      f.max_residual = std::max(f.max_residual, std::abs(v * (1.0 + s) - (eps + s)));
    }
    f.root_B = sum_a * f.level_values[1];
    f.root_B_lower = f.root_B_upper = f.root_B;
    f.nodes = static_cast<std::size_t>(n) + 1;
    return f;
  }

  const Truncation tr = truncate(arena, n, prune.min_weight);
  f.nodes = tr.order.size();
  f.pruned = static_cast<std::size_t>(std::count(tr.kind.begin(), tr.kind.end(), Kind::Pruned));
  f.values.assign(arena.size(), std::numeric_limits<double>::quiet_NaN());

  if (f.pruned == 0) {
    f.root_B = sweep(arena, tr, eps, 1.0, f.values);
    f.root_B_lower = f.root_B_upper = f.root_B;
  } else {
    std::vector<double> lower(arena.size());
    f.root_B_lower = sweep(arena, tr, eps, eps, lower);
    f.root_B_upper = sweep(arena, tr, eps, 1.0, f.values);
    double fill = prune.fill;
    if (std::isnan(fill)) {
      CompensatedSum s;
      std::size_t count = 0;
      for (std::size_t i = 0; i < tr.order.size(); ++i) {
        if (tr.kind[i] != Kind::Internal) continue;
        const auto x = static_cast<std::size_t>(tr.order[i]);
        s.add(0.5 * (lower[x] + f.values[x]));
        ++count;
      }
      fill = s.value() / static_cast<double>(count);
    }
    fill = std::clamp(fill, eps, 1.0);
    f.root_B = sweep(arena, tr, eps, fill, f.values);
  }

  for (std::size_t i = 0; i < tr.order.size(); ++i) {
    if (tr.kind[i] != Kind::Internal) continue;
    const NodeId x = tr.order[i];
    const double s = weighted_children(arena, f.values, x);
    const double v = f.values[static_cast<std::size_t>(x)];
    f.max_residual = std::max(f.max_residual, std::abs(v * (1.0 + s) - (eps + s)));
  }
  return f;
}

BEpsilonResult b_epsilon(TreeArena& arena, double epsilon, const std::vector<int>& depth_schedule,
                         double tol, const PruneOptions& prune) {
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw std::invalid_argument("epsilon must lie in (0, 1)");
  if (depth_schedule.empty()) throw std::invalid_argument("empty depth schedule");
  if (!std::is_sorted(depth_schedule.begin(), depth_schedule.end()) ||
      std::adjacent_find(depth_schedule.begin(), depth_schedule.end()) != depth_schedule.end()) {
    throw std::invalid_argument("depth schedule must be increasing");
  }
  const double lambda = lambda_from_epsilon(epsilon);
  BEpsilonResult out;
  for (int d : depth_schedule) {
    const RecursionField f = beta_backward(arena, d, lambda, prune);
    if (!out.values.empty() && f.root_B > out.values.back() * (1.0 + 1e-12)) {
      throw std::logic_error("B increased with the truncation depth");
    }
    out.depths.push_back(d);
    out.values.push_back(f.root_B);
    out.lower = f.root_B_lower;
    out.upper = f.root_B_upper;
  }
  out.root_B = out.values.back();
  out.gap = out.values.size() > 1 ? std::abs(out.values.back() - out.values[out.values.size() - 2])
                                  : INFINITY;
  if (out.gap > tol) {
    throw TruncationTooShallow("B at depth " + std::to_string(depth_schedule.back()) +
                                   " still moves by " + std::to_string(out.gap),
                               out.gap);
  }
  return out;
}

AbelCheck abel_cross_check(TreeArena& arena, double lambda, const SurvivalCurve& survival,
                           int depth, const PruneOptions& prune) {
  if (survival.first_returns.empty()) {
    throw std::invalid_argument("survival curve was run without first return times");
  }
  AbelCheck c;
  c.lambda = lambda;
  c.epsilon = epsilon_from_lambda(lambda);
  c.omega_root = arena.omega_root_parent();
  const double denom = -std::expm1(-lambda);

  const RecursionField f = beta_backward(arena, depth, lambda, prune);
  c.root_B = f.root_B;
  c.rhs = c.omega_root * (c.epsilon + f.root_B) / denom;
  c.rhs_halfwidth = c.omega_root * 0.5 * (f.root_B_upper - f.root_B_lower) / denom;
  c.rhs_short = c.omega_root * f.root_B / denom;

  // sum_{n < T} e^{-lambda n}, with T censored just past the last horizon
  const std::uint64_t cap = survival.horizons.back() + 1;
  std::vector<double> per(survival.first_returns.size());
  for (std::size_t r = 0; r < per.size(); ++r) {
    const auto t = std::min<std::uint64_t>(survival.first_returns[r], cap);
    per[r] = -std::expm1(-lambda * static_cast<double>(t)) / denom;
  }
  const MeanEstimate m = mean_estimate(per);
  c.lhs = m.mean;
  c.lhs_stderr = m.stderr_;
  c.tail_bound = std::exp(-lambda * static_cast<double>(cap)) / denom;
  if (c.tail_bound > 1e-3 * c.lhs) {
    throw TailMassTooLarge("Abel tail beyond the last horizon may exceed 0.1% of the sum");
  }
  const double combined = std::hypot(c.lhs_stderr, c.rhs_halfwidth);
  c.relative_discrepancy = std::abs(c.lhs - c.rhs) / c.rhs;
  c.z = combined > 0.0 ? (c.lhs - c.rhs) / combined : (c.lhs == c.rhs ? 0.0 : INFINITY);
  c.pass = std::abs(c.lhs - c.rhs) <= 3.0 * combined;
  return c;
}

MartingaleTrace martingale_trace(TreeArena& arena, int N) {
  if (N < 1) throw std::invalid_argument("martingale depth must be at least 1");
  MartingaleTrace t;
  const EnvironmentSpec& spec = arena.spec();
  if (spec.is_homogeneous()) {
    double sum_a = 0.0;
    for (double a : spec.atoms().front().marks) sum_a += a;
    for (int k = 1; k <= N; ++k) t.values.push_back(std::pow(sum_a, k));
  } else {
    std::vector<NodeId> frontier{kRoot}, next;
    for (int k = 1; k <= N; ++k) {
      next.clear();
      CompensatedSum m;
      for (NodeId x : frontier) {
        const ChildRange ch = arena.expand(x);
        for (std::int32_t c = 0; c < ch.count; ++c) {
          const NodeId y = ch.first + c;
          next.push_back(y);
          m.add(std::exp(arena.log_weight(y)));
        }
      }
      t.values.push_back(m.value());
      std::swap(frontier, next);
    }
  }
  t.limit_estimate = t.values.back();
  if (N > 10) {
    const double prev = t.values[static_cast<std::size_t>(N) - 11];
    t.plateau_change = t.limit_estimate > 0.0 ? std::abs(t.limit_estimate - prev) / t.limit_estimate
                                              : std::abs(prev);
  } else {
    t.plateau_change = INFINITY;
  }
  t.plateau_ok = t.plateau_change < 1e-3;
  return t;
}

double stopping_line_limit(TreeArena& arena, double min_weight) {
  if (!(min_weight > 0.0 && min_weight < 1.0)) {
    throw std::invalid_argument("stopping line weight must lie in (0, 1)");
  }
  const double log_cut = std::log(min_weight);
  CompensatedSum total;
  std::vector<NodeId> stack{kRoot};
  while (!stack.empty()) {
    const NodeId x = stack.back();
    stack.pop_back();
    if (x != kRoot && arena.log_weight(x) < log_cut) {
      total.add(std::exp(arena.log_weight(x)));
      continue;
    }
    const ChildRange ch = arena.expand(x);
    for (std::int32_t c = 0; c < ch.count; ++c) stack.push_back(ch.first + c);
  }
  return total.value();
}

}  // namespace rwtree

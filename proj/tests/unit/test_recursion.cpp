#include <doctest.h>

#include <cmath>

#include "rwtree/recursion.hpp"
#include "rwtree/stats.hpp"

using namespace rwtree;

namespace {

EnvironmentSpec kappa15() { return load_spec_file(RWTREE_DATA_DIR "/specs/kappa15.json").spec; }

EnvironmentSpec extinct_possible() {
  return EnvironmentSpec::create({{0.25, {}}, {0.75, {4.0 / 9, 4.0 / 9, 4.0 / 9}}});
}

}  // namespace

TEST_CASE("epsilon and lambda are inverse") {
  for (double eps : {1e-8, 1e-4, 0.3, 0.9}) {
    CHECK(epsilon_from_lambda(lambda_from_epsilon(eps)) == doctest::Approx(eps).epsilon(1e-13));
  }
}

TEST_CASE("depth one recursion") {
  TreeArena arena(kappa15(), 2);
  const double lambda = 0.1;
  PruneOptions p;
  p.collapse_homogeneous = false;
  const RecursionField f = beta_backward(arena, 1, lambda, p);
  double sum = 0.0;
  const ChildRange ch = arena.children(kRoot);
  for (std::int32_t c = 0; c < ch.count; ++c) {
    sum += arena.mark(ch.first + c);
    CHECK(f.values[static_cast<std::size_t>(ch.first + c)] == 1.0);
  }
  CHECK(f.root_B == doctest::Approx(sum).epsilon(1e-15));
  CHECK_THROWS_AS(beta_backward(arena, 0, lambda), std::invalid_argument);
  CHECK_THROWS_AS(beta_backward(arena, 3, 0.0), std::invalid_argument);
}

TEST_CASE("leaf vertices carry beta equal to epsilon") {
  TreeArena arena(extinct_possible(), 4);
  const RecursionField f = beta_backward(arena, 12, 0.3);
  std::size_t leaves = 0;
  for (NodeId x = 0; static_cast<std::size_t>(x) < arena.size(); ++x) {
    if (arena.depth(x) >= 12 || !arena.expanded(x) || arena.children(x).count != 0) continue;
    CHECK(f.values[static_cast<std::size_t>(x)] == doctest::Approx(f.epsilon).epsilon(1e-15));
    ++leaves;
  }
  CHECK(leaves > 0);
}

TEST_CASE("binary tree gives the square root") {
  TreeArena arena(binary_spec(), 1);
  for (double eps : {1e-2, 1e-4}) {
    const BEpsilonResult r = b_epsilon(arena, eps, {2000, 4000, 8000});
    CHECK(std::abs(r.root_B - std::sqrt(eps)) <= 1e-6);
  }
  // the same through the general sweep on a small depth
  PruneOptions p;
  p.collapse_homogeneous = false;
  const RecursionField general = beta_backward(arena, 14, 0.4, p);
  const RecursionField collapsed = beta_backward(arena, 14, 0.4);
  CHECK(general.root_B == doctest::Approx(collapsed.root_B).epsilon(1e-13));
  CHECK(collapsed.collapsed);
  // lambda large: beta close to one everywhere, B close to sum A
  CHECK(beta_backward(arena, 40, 40.0).root_B == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("monotone in depth and in lambda") {
  TreeArena arena(kappa15(), 7);
  PruneOptions p;
  p.min_weight = 1e-3;
  p.fill = 1.0;
  const RecursionField a = beta_backward(arena, 20, 0.05, p);
  const RecursionField b = beta_backward(arena, 30, 0.05, p);
  const RecursionField c = beta_backward(arena, 30, 0.2, p);
  CHECK(b.root_B <= a.root_B);
  CHECK(c.root_B >= b.root_B);
  for (NodeId x = 0; static_cast<std::size_t>(x) < a.values.size(); ++x) {
    const auto i = static_cast<std::size_t>(x);
    if (std::isnan(a.values[i]) || std::isnan(b.values[i])) continue;
    CHECK(b.values[i] <= a.values[i] + 1e-15);
    CHECK(c.values[i] >= b.values[i] - 1e-15);
  }
}

TEST_CASE("field satisfies the recursion and the bounds") {
  TreeArena arena(kappa15(), 13);
  PruneOptions p;
  p.min_weight = 1e-4;
  const RecursionField f = beta_backward(arena, 40, 0.01, p);
  CHECK(f.max_residual <= 1e-14);
  CHECK(f.root_B_lower <= f.root_B);
  CHECK(f.root_B <= f.root_B_upper);
  for (double v : f.values) {
    if (std::isnan(v)) continue;
    CHECK(v >= f.epsilon * (1.0 - 1e-15));
    CHECK(v <= 1.0);
  }
}

TEST_CASE("shallow schedule is reported") {
  TreeArena arena(binary_spec(), 1);
  try {
    b_epsilon(arena, 1e-4, {5, 10});
    FAIL("expected TruncationTooShallow");
  } catch (const TruncationTooShallow& e) {
    CHECK(e.gap() > 1e-6);
  }
  CHECK_THROWS_AS(b_epsilon(arena, 1e-4, {10, 5}), std::invalid_argument);
  CHECK_THROWS_AS(b_epsilon(arena, 1.5, {10}), std::invalid_argument);
}

TEST_CASE("Abel transform of the survival function") {
  const double lambda = 0.05;
  WalkOptions opts;
  opts.keep_first_returns = true;
  const SurvivalCurve binary =
      survival_curve(binary_spec(), 1, {4096}, 50000, 3, opts);
  TreeArena arena(binary_spec(), 1);
  const AbelCheck c = abel_cross_check(arena, lambda, binary, 4000);
  CHECK(c.pass);
  CHECK(c.rhs_short < c.rhs);
  CHECK(std::abs(c.z) < 4.0);

  // walks from a different environment must not match
  const SurvivalCurve other = survival_curve(kappa15(), 11, {4096}, 50000, 3, opts);
  const AbelCheck bad = abel_cross_check(arena, lambda, other, 4000);
  CHECK_FALSE(bad.pass);

  // large lambda: only the first two terms survive, both equal to 1
  const AbelCheck big = abel_cross_check(arena, 30.0, binary, 50);
  CHECK(big.lhs == doctest::Approx(1.0 + std::exp(-30.0)).epsilon(1e-12));
  CHECK(big.rhs == doctest::Approx(big.lhs).epsilon(1e-10));

  SurvivalCurve bare = binary;
  bare.first_returns.clear();
  CHECK_THROWS_AS(abel_cross_check(arena, lambda, bare), std::invalid_argument);
  const SurvivalCurve short_run = survival_curve(binary_spec(), 1, {64}, 100, 3, opts);
  CHECK_THROWS_AS(abel_cross_check(arena, 0.01, short_run), TailMassTooLarge);
}

TEST_CASE("additive martingale") {
  TreeArena bin(binary_spec(), 1);
  const MartingaleTrace t = martingale_trace(bin, 30);
  for (double v : t.values) CHECK(v == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(t.plateau_ok);

  // annealed mean of M_n is one for every n
  TreeArena arena(kappa15(), 1);
  std::vector<double> m8;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    arena.reseed(s);
    m8.push_back(martingale_trace(arena, 8).values.back());
  }
  const MeanEstimate m = mean_estimate(m8);
  CHECK(std::abs(m.mean - 1.0) <= 4.0 * m.stderr_);

  // a tree that may die out: M is zero after extinction
  TreeArena ext(extinct_possible(), 1);
  bool saw_zero = false;
  for (std::uint64_t s = 0; s < 200 && !saw_zero; ++s) {
    ext.reseed(s);
    const MartingaleTrace e = martingale_trace(ext, 10);
    if (e.values.back() == 0.0) saw_zero = true;
  }
  CHECK(saw_zero);
  CHECK_THROWS_AS(martingale_trace(bin, 0), std::invalid_argument);
}

TEST_CASE("stopping line mean") {
  TreeArena arena(kappa15(), 1);
  std::vector<double> v;
  for (std::uint64_t s = 0; s < 400; ++s) {
    arena.reseed(1000 + s);
    v.push_back(stopping_line_limit(arena, 1e-3));
  }
  const MeanEstimate m = mean_estimate(v);
  CHECK(std::abs(m.mean - 1.0) <= 4.0 * m.stderr_);
  CHECK(stopping_line_limit(arena, 0.5) > 0.0);
  CHECK_THROWS_AS(stopping_line_limit(arena, 1.0), std::invalid_argument);
}

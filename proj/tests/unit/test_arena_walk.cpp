#include <doctest.h>

#include <cmath>
#include <map>
#include <string>

#include "rwtree/arena.hpp"
#include "rwtree/environment.hpp"
#include "rwtree/recursion.hpp"
#include "rwtree/stats.hpp"
#include "rwtree/walk.hpp"

using namespace rwtree;

namespace {

EnvironmentSpec kappa15() { return load_spec_file(RWTREE_DATA_DIR "/specs/kappa15.json").spec; }

// half the vertices are leaves
EnvironmentSpec with_leaves() {
  return EnvironmentSpec::create({{0.5, {}}, {0.5, {2.0 / 3, 2.0 / 3, 2.0 / 3}}});
}

std::vector<std::uint64_t> doubling(std::uint64_t lo, std::uint64_t hi) {
  std::vector<std::uint64_t> h;
  for (std::uint64_t n = lo; n <= hi; n *= 2) h.push_back(n);
  return h;
}

}  // namespace

TEST_CASE("expand is idempotent and consistent") {
  TreeArena arena(kappa15(), 3);
  const ChildRange a = arena.expand(kRoot);
  const std::size_t size = arena.size();
  const ChildRange b = arena.expand(kRoot);
  CHECK(a.first == b.first);
  CHECK(a.count == b.count);
  CHECK(arena.size() == size);
  double sum = 0.0;
  for (std::int32_t c = 0; c < a.count; ++c) {
    const NodeId y = a.first + c;
    CHECK(arena.parent(y) == kRoot);
    CHECK(arena.depth(y) == 1);
    CHECK(arena.log_weight(y) == doctest::Approx(std::log(arena.mark(y))));
    sum += arena.mark(y);
  }
  CHECK(arena.up_probability(kRoot) == doctest::Approx(1.0 / (1.0 + sum)));
  CHECK(arena.omega_root_parent() == arena.up_probability(kRoot));
}

TEST_CASE("leaf vertices step back up") {
  TreeArena arena(with_leaves(), 1);
  std::size_t leaves = 0;
  for (NodeId x = 0; x < 2000 && static_cast<std::size_t>(x) < arena.size(); ++x) {
    const ChildRange ch = arena.expand(x);
    if (ch.count == 0) {
      ++leaves;
      CHECK(arena.up_probability(x) == 1.0);
      RngStream rng(1, static_cast<std::uint64_t>(x));
      if (x != kRoot) CHECK(step(arena, x, rng) == arena.parent(x));
    }
  }
  CHECK(leaves > 0);
}

TEST_CASE("transition probabilities sum to one") {
  TreeArena arena(kappa15(), 8);
  for (NodeId x = 0; static_cast<std::size_t>(x) < 10000; ++x) arena.expand(x);
  for (NodeId x = 0; x < 10000; ++x) {
    const ChildRange ch = arena.children(x);
    double total = arena.omega(x, arena.parent(x));
    for (std::int32_t c = 0; c < ch.count; ++c) total += arena.omega(x, ch.first + c);
    CHECK(std::abs(total - 1.0) <= 1e-12);
    for (std::int32_t c = 0; c < ch.count; ++c) {
      const NodeId y = ch.first + c;
      CHECK(arena.omega(x, y) / arena.omega(x, arena.parent(x)) == doctest::Approx(arena.mark(y)));
    }
  }
  CHECK(arena.omega(kRootParent, kRoot) == 1.0);
}

TEST_CASE("environment does not depend on expansion order") {
  TreeArena bfs(kappa15(), 21);
  for (NodeId x = 0; static_cast<std::size_t>(x) < 3000; ++x) bfs.expand(x);
  std::map<std::uint64_t, double> marks;
  for (NodeId x = 0; static_cast<std::size_t>(x) < bfs.size(); ++x) marks[bfs.path_key(x)] = bfs.mark(x);

  // depth-first along the last child, then a reset and a different path
  TreeArena dfs(kappa15(), 21);
  std::size_t matched = 0;
  for (int round = 0; round < 2; ++round) {
    NodeId x = kRoot;
    for (int d = 0; d < 10; ++d) {
      const ChildRange ch = dfs.expand(x);
      for (std::int32_t c = 0; c < ch.count; ++c) {
        const NodeId y = ch.first + c;
        const auto it = marks.find(dfs.path_key(y));
        if (it != marks.end()) {
          CHECK(it->second == dfs.mark(y));
          ++matched;
        }
      }
      x = round == 0 ? ch.first + ch.count - 1 : ch.first;
    }
    dfs.reset();
  }
  CHECK(matched > 10);

  TreeArena other(kappa15(), 22);
  other.expand(kRoot);
  for (int i = 0; i < 20; ++i) other.expand(static_cast<NodeId>(other.size() - 1));
  bool differs = false;
  for (NodeId x = 1; static_cast<std::size_t>(x) < other.size(); ++x) {
    const auto it = marks.find(other.path_key(x));
    if (it != marks.end() && it->second != other.mark(x)) differs = true;
  }
  CHECK(differs);
}

TEST_CASE("arena capacity is enforced") {
  TreeArena arena(binary_spec(), 1, 5);
  arena.expand(kRoot);
  arena.expand(1);
  CHECK_THROWS_AS(arena.expand(2), ArenaCapacity);
  CHECK_THROWS_AS(TreeArena(binary_spec(), 1, 0), ArenaCapacity);
}

TEST_CASE("step frequencies match omega") {
  TreeArena arena(kappa15(), 4);
  const NodeId x = arena.expand(kRoot).first;
  const ChildRange ch = arena.expand(x);
  const std::size_t trials = 200000;
  std::map<NodeId, double> counts;
  RngStream rng(99, 1);
  for (std::size_t i = 0; i < trials; ++i) counts[step(arena, x, rng)] += 1.0;
  std::vector<NodeId> targets{arena.parent(x)};
  for (std::int32_t c = 0; c < ch.count; ++c) targets.push_back(ch.first + c);
  for (NodeId y : targets) {
    const double p = arena.omega(x, y);
    const double f = counts[y] / static_cast<double>(trials);
    CHECK(std::abs(f - p) <= 5.0 * binomial_stderr(p, trials));
  }
  RngStream r2(1, 1);
  CHECK(step(arena, kRootParent, r2) == kRoot);
}

TEST_CASE("return times are even and budget is respected") {
  TreeArena arena(kappa15(), 5);
  RngStream rng(7, 0);
  CHECK_THROWS_AS(run_return_times(arena, 0, 100, rng), std::invalid_argument);
  const WalkRecord rec = run_return_times(arena, 200, kDefaultStepBudget, rng);
  REQUIRE(rec.return_times.size() == 200);
  for (std::size_t i = 0; i < rec.return_times.size(); ++i) {
    CHECK(rec.return_times[i] % 2 == 0);
    if (i > 0) CHECK(rec.return_times[i] > rec.return_times[i - 1]);
  }
  CHECK(rec.root_local_time == 200);
  CHECK(rec.steps == rec.return_times.back());

  RngStream short_rng(7, 1);
  try {
    run_return_times(arena, 1000000, 1000, short_rng);
    FAIL("expected BudgetExhausted");
  } catch (const BudgetExhausted& e) {
    CHECK(e.partial().steps == 1000);
    CHECK(e.partial().return_times.size() < 1000000);
  }
}

TEST_CASE("depth chain oracle small cases") {
  const DepthChainOracle o = DepthChainOracle::for_spec(binary_spec());
  CHECK(o.up_probability == 0.5);
  const auto s = o.survival(4);
  CHECK(s[0] == 1.0);
  CHECK(s[1] == 1.0);
  CHECK(s[2] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(s[3] == s[2]);
  const auto p = o.return_probability(2);
  CHECK(p[0] == 1.0);
  CHECK(p[1] == 0.0);
  CHECK(p[2] == doctest::Approx(0.75).epsilon(1e-15));
  CHECK_THROWS_AS(DepthChainOracle::for_spec(kappa15()), InvalidSpec);
}

TEST_CASE("survival on the binary tree matches the oracle") {
  const auto horizons = doubling(2, 2048);
  const std::size_t replicas = 100000;
  const SurvivalCurve curve = survival_curve(binary_spec(), 1, horizons, replicas, 17);
  const auto exact = DepthChainOracle::for_spec(binary_spec()).survival(2048);
  for (std::size_t i = 0; i < horizons.size(); ++i) {
    const double p = exact[horizons[i]];
    const double se = binomial_stderr(p, replicas);
    CHECK(std::abs(curve.survival[i] - p) <= 4.0 * se);
    CHECK(curve.standard_errors[i] == doctest::Approx(binomial_stderr(curve.survival[i], replicas)));
  }
  const SurvivalCurve zero = survival_curve(binary_spec(), 1, {0, 1}, 1000, 3);
  CHECK(zero.survival[0] == 1.0);
  CHECK(zero.survival[1] == 1.0);
  CHECK_THROWS_AS(survival_curve(binary_spec(), 1, {4, 2}, 10, 1), std::invalid_argument);
  CHECK_THROWS_AS(survival_curve(binary_spec(), 1, {kMaxHorizon + 2}, 10, 1),
                  std::invalid_argument);
}

TEST_CASE("standard error scales like one over root replicas") {
  const SurvivalCurve a = survival_curve(kappa15(), 2, {64}, 4000, 5);
  const SurvivalCurve b = survival_curve(kappa15(), 2, {64}, 16000, 5);
  const double ratio = a.standard_errors[0] / b.standard_errors[0];
  CHECK(ratio == doctest::Approx(2.0).epsilon(0.1));
}

TEST_CASE("annealed equals quenched on a deterministic tree") {
  WalkOptions annealed;
  annealed.quenched = false;
  const auto h = doubling(2, 256);
  const SurvivalCurve q = survival_curve(binary_spec(), 4, h, 5000, 9);
  const SurvivalCurve a = survival_curve(binary_spec(), 4, h, 5000, 9, annealed);
  CHECK(q.survival == a.survival);
}

TEST_CASE("results do not depend on the worker count") {
  const auto h = doubling(2, 512);
  WalkOptions one, three;
  one.chunk_size = three.chunk_size = 500;
  one.keep_first_returns = three.keep_first_returns = true;
  three.workers = 3;
  const SurvivalCurve a = survival_curve(kappa15(), 11, h, 4000, 2, one);
  const SurvivalCurve b = survival_curve(kappa15(), 11, h, 4000, 2, three);
  CHECK(a.survival == b.survival);
  CHECK(a.first_returns == b.first_returns);

  const LocalTimeResult la = local_time_and_local_prob(kappa15(), 11, 400, {100, 400}, 2000, 3, one);
  const LocalTimeResult lb =
      local_time_and_local_prob(kappa15(), 11, 400, {100, 400}, 2000, 3, three);
  CHECK(la.local_times == lb.local_times);
  CHECK(la.window_prob == lb.window_prob);
}

TEST_CASE("local probability at time zero and against the oracle") {
  const std::vector<std::uint64_t> probes{0, 2, 50, 200, 1000};
  const std::size_t replicas = 50000;
  const LocalTimeResult r = local_time_and_local_prob(binary_spec(), 1, 1000, probes, replicas, 5);
  CHECK(r.point_prob[0] == 1.0);
  const auto exact = DepthChainOracle::for_spec(binary_spec()).return_probability(1000);
  for (std::size_t i = 1; i < probes.size(); ++i) {
    const double p = exact[probes[i]];
    CHECK(std::abs(r.point_prob[i] - p) <= 4.0 * binomial_stderr(p, replicas));
  }
  // L_n counts visits at times 1..n
  double total_hits = 0.0;
  for (std::size_t t = 1; t <= 1000; ++t) total_hits += exact[t];
  const MeanEstimate lt = mean_estimate(r.local_times);
  CHECK(std::abs(lt.mean - total_hits) <= 4.0 * lt.stderr_);
  CHECK_THROWS_AS(local_time_and_local_prob(binary_spec(), 1, 100, {3}, 10, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(local_time_and_local_prob(binary_spec(), 1, 100, {102}, 10, 1),
                  std::invalid_argument);
}

TEST_CASE("local probability decreases along even times") {
  const std::vector<std::uint64_t> probes{50, 100, 200, 400};
  const LocalTimeResult r = local_time_and_local_prob(kappa15(), 11, 400, probes, 20000, 8);
  for (std::size_t i = 0; i + 1 < probes.size(); ++i) {
    const double slack = 2.0 * std::hypot(r.window_stderr[i], r.window_stderr[i + 1]);
    CHECK(r.window_prob[i + 1] <= r.window_prob[i] + slack);
  }
}

TEST_CASE("successive excursions have the same law") {
  TreeArena arena(kappa15(), 11);
  const std::size_t n = 10000;
  std::vector<double> first(n), second(n);
  for (std::size_t r = 0; r < n; ++r) {
    RngStream rng(31, r);
    const WalkRecord rec = run_return_times(arena, 2, kDefaultStepBudget, rng);
    first[r] = static_cast<double>(rec.return_times[0]);
    second[r] = static_cast<double>(rec.return_times[1] - rec.return_times[0]);
    if (arena.size() > arena.capacity() / 2) arena.reset();
  }
  // 1% critical value of the two-sample statistic
  CHECK(ks_distance(first, second) * std::sqrt(n / 2.0) < 1.63);
}

TEST_CASE("crossings of an edge differ by at most one") {
  TreeArena arena(kappa15(), 6);
  RngStream rng(12, 0);
  std::map<std::pair<NodeId, NodeId>, long> crossings;
  NodeId pos = kRoot;
  for (int t = 0; t < 200000; ++t) {
    const NodeId next = step(arena, pos, rng);
    ++crossings[{pos, next}];
    pos = next;
  }
  for (const auto& [edge, count] : crossings) {
    const auto back = crossings.find({edge.second, edge.first});
    const long other = back == crossings.end() ? 0 : back->second;
    CHECK(std::abs(count - other) <= 1);
  }
}

TEST_CASE("excursion Laplace transform matches the recursion") {
  const EnvironmentSpec spec = kappa15();
  const double lambda = 0.2;
  const std::uint64_t env_seed = 11;
  TreeArena arena(spec, env_seed, std::size_t{1} << 23);
  PruneOptions lo, hi;
  lo.min_weight = hi.min_weight = 1e-5;
  lo.fill = 0.0;  // clamped to eps
  hi.fill = 1.0;
  const RecursionField below = beta_backward(arena, 60, lambda, lo);
  const RecursionField above = beta_backward(arena, 60, lambda, hi);
  const ChildRange ch = arena.children(kRoot);
  for (std::int32_t c = 0; c < ch.count; ++c) {
    const auto y = static_cast<std::size_t>(ch.first + c);
    const ExcursionEstimate e =
        excursion_laplace(spec, env_seed, static_cast<std::size_t>(c), lambda, 40000, 4000, 77);
    // censored walks contribute e^{-0.2 * 4000}, i.e. nothing
    CHECK(e.censored < 400);
    const double hi_value = 1.0 - below.values[y];
    const double lo_value = 1.0 - above.values[y];
    CHECK(hi_value - lo_value < 1e-3);
    CHECK(e.mean >= lo_value - 4.0 * e.stderr_);
    CHECK(e.mean <= hi_value + 4.0 * e.stderr_);
  }
}

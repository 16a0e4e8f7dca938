#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "rwtree/cascade.hpp"
#include "rwtree/errors.hpp"

using namespace rwtree;

namespace {

SpecFile spec_named(const char* name) {
  return load_spec_file(std::string(RWTREE_DATA_DIR "/specs/") + name + ".json");
}

CascadeOptions small(std::size_t pool, std::uint64_t seed = 1) {
  CascadeOptions o;
  o.pool_size = pool;
  o.seed = seed;
  return o;
}

}  // namespace

TEST_CASE("binary pool collapses to the square root") {
  const double eps = 1e-2;
  PopulationPool p = PopulationPool::initial(CascadeTarget::BEps, eps, 1000);
  for (int k = 0; k < 200; ++k) population_step(p, binary_spec(), 3);
  const auto [lo, hi] = std::minmax_element(p.samples.begin(), p.samples.end());
  CHECK(*hi - *lo < 1e-9);
  CHECK(*lo == doctest::Approx(std::sqrt(eps)).epsilon(1e-9));
  CHECK(p.iterations_done == 200);

  PopulationPool m = PopulationPool::initial(CascadeTarget::MInf, 0.0, 1000);
  population_step(m, binary_spec(), 3);
  for (double x : m.samples) CHECK(x == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("epsilon one is reached in one step") {
  // g(b) = (1 + b)/(1 + b) = 1, so B = sum of marks
  const SpecFile sf = spec_named("kappa15");
  PopulationPool p = PopulationPool::initial(CascadeTarget::BEps, 1.0, 5000);
  population_step(p, sf.spec, 2);
  std::vector<double> sums;
  for (const auto& a : sf.spec.atoms()) {
    double s = 0.0;
    for (double x : a.marks) s += x;
    sums.push_back(s);
  }
  for (double x : p.samples) {
    bool found = false;
    for (double s : sums) found = found || std::abs(x - s) <= 1e-15;
    CHECK(found);
  }
  CHECK_THROWS_AS(PopulationPool::initial(CascadeTarget::BEps, 0.1, 0), std::invalid_argument);
}

TEST_CASE("fixpoint satisfies the identity and the bound") {
  const SpecFile sf = spec_named("kappa15");
  const PopulationPool* warm = nullptr;
  FixpointResult prev;
  double previous_mean = INFINITY;
  for (double eps : {1e-1, 1e-2, 1e-3}) {
    FixpointResult r = run_to_fixpoint(sf.spec, CascadeTarget::BEps, eps, small(50000), warm);
    CHECK(r.converged);
    const IdentityCheck id = identity_check(r.pool);
    CHECK(id.pass);
    CHECK(r.mean.mean <= 2.0 * std::sqrt(eps));
    CHECK(r.mean.mean < previous_mean);
    for (double x : r.pool.samples) {
      CHECK(x >= 0.0);
      CHECK(x <= r.pool.max_mark_sum);
    }
    previous_mean = r.mean.mean;
    prev = std::move(r);
    warm = &prev.pool;
  }
  CHECK_THROWS_AS(identity_check(PopulationPool::initial(CascadeTarget::MInf, 0.0, 10)),
                  std::invalid_argument);
  CHECK_THROWS_AS(run_to_fixpoint(sf.spec, CascadeTarget::BEps, 0.0, small(10)),
                  std::invalid_argument);
}

TEST_CASE("non-convergence is reported") {
  const SpecFile sf = spec_named("kappa15");
  CascadeOptions o = small(1000);
  o.max_iter = 3;
  CHECK_THROWS_AS(run_to_fixpoint(sf.spec, CascadeTarget::BEps, 1e-4, o), NoConvergence);
}

TEST_CASE("worker count does not change the pool") {
  const SpecFile sf = spec_named("kappa15");
  PopulationPool a = PopulationPool::initial(CascadeTarget::BEps, 1e-2, 30000);
  PopulationPool b = a;
  StepOptions three;
  three.workers = 3;
  three.chunk_size = 1000;
  for (int k = 0; k < 5; ++k) {
    population_step(a, sf.spec, 8);
    population_step(b, sf.spec, 8, three);
  }
  CHECK(a.samples == b.samples);
}

TEST_CASE("unnormalized martingale pools keep mean one") {
  const SpecFile sf = spec_named("kappa3");
  StepOptions raw;
  raw.renormalize = false;
  std::vector<double> means;
  for (std::uint64_t k = 0; k < 20; ++k) {
    PopulationPool p = PopulationPool::initial(CascadeTarget::MInf, 0.0, 20000);
    for (int s = 0; s < 30; ++s) population_step(p, sf.spec, combine_keys(5, k), raw);
    means.push_back(p.mean().mean);
  }
  const MeanEstimate m = mean_estimate(means);
  CHECK(std::abs(m.mean - 1.0) <= 3.0 * m.stderr_);
}

TEST_CASE("second moment of the martingale limit") {
  const SpecFile sf = spec_named("kappa3");
  CascadeOptions o = small(200000, 4);
  o.average_iterations = 0;
  const FixpointResult m = run_to_fixpoint(sf.spec, CascadeTarget::MInf, 0.0, o);
  std::vector<double> sq(m.pool.samples.size());
  std::transform(m.pool.samples.begin(), m.pool.samples.end(), sq.begin(),
                 [](double x) { return x * x; });
  const MeanEstimate e = mean_estimate(sq);
  const double exact = martingale_second_moment(sf.spec);
  CHECK(std::abs(e.mean - exact) <= 4.0 * e.stderr_ + 0.02 * exact);
}

TEST_CASE("tail fit refuses a degenerate pool") {
  const std::vector<double> ones(10000, 1.0);
  CHECK_THROWS_AS(estimate_tail_constant(ones, INFINITY), DegenerateTail);
  CHECK_THROWS_AS(estimate_tail_constant(std::vector<double>(100, 1.0), 1.5), DegenerateTail);
}

TEST_CASE("tail fit recovers a Pareto constant") {
  // P(X > x) = 0.3 x^{-1.5} for x >= 1, and 70% of the mass below
  RngStream rng(4, 4);
  std::vector<double> x(400000);
  for (double& v : x) {
    const double u = rng.uniform();
    v = u < 0.3 ? std::pow(u / 0.3, -1.0 / 1.5) : 0.5 * rng.uniform();
  }
  const TailFit f = estimate_tail_constant(x, 1.5, 50, 2);
  CHECK(f.constant_hat == doctest::Approx(0.3).epsilon(0.05));
  CHECK(f.exponent_hat == doctest::Approx(1.5).epsilon(0.05));
  CHECK(f.constant_ci_lo <= 0.3);
  CHECK(f.constant_ci_hi >= 0.3);
}

TEST_CASE("beta function and c4") {
  CHECK(beta_function(0.5, 0.5) == doctest::Approx(std::numbers::pi).epsilon(1e-12));
  CHECK(beta_function(2.0, 3.0) == doctest::Approx(1.0 / 12).epsilon(1e-12));
  const double k = 1.5;
  const double expected = std::pow(0.2 * k * beta_function(2 - k, k - 1), -1 / k);
  CHECK(c4_constant(0.2, k) == doctest::Approx(expected).epsilon(1e-14));
  CHECK_THROWS_AS(c4_constant(0.2, 2.5), RegimeMismatch);
  CHECK_THROWS_AS(c4_constant(0.0, 1.5), MissingTailConstant);
}

TEST_CASE("convex comparison on explicit samples") {
  RngStream rng(6, 6);
  std::vector<double> xi(100000);
  for (double& v : xi) v = -std::log(rng.uniform());
  for (double a : {0.1, 1.0, 10.0}) {
    for (double eps : {1e-3, 0.1, 0.5}) {
      const ComparisonResult c = convex_comparison_check(xi, a, eps);
      CHECK(c.pass);
    }
  }
  CHECK(phi_a(1.0, 1.0) == 0.5);
  CHECK_THROWS_AS(convex_comparison_check(std::vector<double>{-1.0, 1.0}, 1.0, 0.1),
                  std::invalid_argument);
  CHECK_THROWS_AS(convex_comparison_check(xi, 0.0, 0.1), std::invalid_argument);
}

TEST_CASE("asymptotics of E M^2/(a+M) for a constant limit") {
  const std::vector<double> ones(1000, 1.0);
  const AsympMTable t = asymp_M_check(ones, {1e-1, 1e-2, 1e-3}, INFINITY, binary_spec());
  CHECK(t.regime == Regime::KappaGt2);
  CHECK(t.second_moment == doctest::Approx(1.0));
  for (const auto& row : t.rows) CHECK(row.value == doctest::Approx(1.0 / (row.a + 1.0)));
  CHECK_THROWS_AS(asymp_M_check(ones, {0.1, 0.01}, 1.5, binary_spec()), DegenerateTail);
}

TEST_CASE("pathwise contraction") {
  const SpecFile sf = spec_named("kappa15");
  for (double eps : {1e-1, 1e-3}) {
    const ContractionTrace t = contraction_diagnostic(sf.spec, eps, 20000, 30, 3);
    REQUIRE_FALSE(t.pathwise.empty());
    CHECK(t.worst_pathwise <= 1.0 - eps + 1e-12);
  }
}

TEST_CASE("rescaled B pool approaches the rescaled martingale limit") {
  // at kappa = 3 the law distance is still 0.06-0.08 at eps = 1e-5 (the mean
  // of eps^{-1/2} B is 6% above c5 and creeping down), so this runs on a
  // lighter tail
  const EnvironmentSpec spec = calibrate_two_point(2, 2.0, 6.0).spec;
  CascadeOptions o = small(100000, 9);
  o.burn_in = 12;
  const FixpointResult m = run_to_fixpoint(spec, CascadeTarget::MInf, 0.0, o);
  const double c5 = c5_constant(spec);
  std::vector<double> ms = m.pool.samples;
  for (double& x : ms) x *= c5;
  FixpointResult b;
  const PopulationPool* warm = nullptr;
  for (double eps : {1e-3, 1e-4, 1e-5}) {
    FixpointResult next = run_to_fixpoint(spec, CascadeTarget::BEps, eps, o, warm);
    b = std::move(next);
    warm = &b.pool;
  }
  std::vector<double> bs = b.pool.samples;
  for (double& x : bs) x /= std::sqrt(1e-5);
  CHECK(ks_distance(bs, ms) <= 0.02);
}

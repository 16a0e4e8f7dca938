#include <doctest.h>

#include <cmath>
#include <numbers>

#include "rwtree/environment.hpp"
#include "rwtree/errors.hpp"

using namespace rwtree;

namespace {

EnvironmentSpec ternary() { return EnvironmentSpec::create({{1.0, {1.0 / 3, 1.0 / 3, 1.0 / 3}}}); }

// E sum A = 1 but E sum A log A > 0
EnvironmentSpec positive_drift() {
  const double a = (1.0 - 0.9 * 0.1) / 0.2;
  return EnvironmentSpec::create({{0.9, {0.05, 0.05}}, {0.1, {a, a}}});
}

// marks 1/4 and 2: every log-mark is a multiple of log 2
EnvironmentSpec lattice_spec() {
  const double p = 1.5 / 1.75;
  return EnvironmentSpec::create(
      {{p * p, {0.25, 0.25}}, {p * (1 - p), {0.25, 2.0}}, {(1 - p) * p, {2.0, 0.25}},
       {(1 - p) * (1 - p), {2.0, 2.0}}});
}

}  // namespace

TEST_CASE("psi closed forms") {
  const EnvironmentSpec bin = binary_spec();
  CHECK(psi(bin, 2.0) == doctest::Approx(-std::log(2.0)).epsilon(1e-14));
  CHECK(std::abs(psi(bin, 1.0)) <= 1e-10);
  CHECK(psi(ternary(), 0.0) == doctest::Approx(std::log(3.0)).epsilon(1e-14));
  const auto cal = calibrate_two_point(2, 2.0, 1.5);
  CHECK(std::abs(psi(cal.spec, 1.0)) <= 1e-10);
}

TEST_CASE("psi prime") {
  CHECK(psi_prime(binary_spec(), 1.0) == doctest::Approx(-std::log(2.0)).epsilon(1e-14));
  for (double t : {0.3, 1.0, 2.5}) {
    CHECK(psi_prime(ternary(), t) == doctest::Approx(-std::log(3.0)).epsilon(1e-14));
  }
  CHECK(psi_prime(calibrate_two_point(2, 2.0, 1.5).spec, 1.0) < 0.0);
}

TEST_CASE("kappa") {
  CHECK(std::isinf(kappa(binary_spec())));
  const auto cal = calibrate_two_point(2, 2.0, 1.5);
  const double k = kappa(cal.spec);
  CHECK(std::abs(k - 1.5) <= 1e-9);
  CHECK(std::abs(psi(cal.spec, k)) <= 1e-12);
  for (double t = 1.05; t < k; t += 0.05) CHECK(psi(cal.spec, t) < 0.0);
  CHECK_THROWS_AS(kappa(positive_drift()), InvalidRegime);
}

TEST_CASE("psi is convex on a grid") {
  for (double target : {1.5, 2.0, 3.0}) {
    const auto spec = calibrate_two_point(2, 2.0, target).spec;
    const double h = 0.05;
    for (double t = 0.0; t < 5.0; t += h) {
      CHECK(psi(spec, t + h) - 2.0 * psi(spec, t) + psi(spec, t - h) >= -1e-9);
    }
  }
}

TEST_CASE("assumption report") {
  const AssumptionReport b = validate_assumptions(binary_spec());
  CHECK(b.hyp1_ok);
  CHECK(b.hyp2_ok);
  CHECK(b.hyp3_status == LatticeStatus::NotApplicable);
  CHECK(std::isinf(b.kappa));

  const AssumptionReport k15 = validate_assumptions(calibrate_two_point(2, 2.0, 1.5).spec);
  CHECK(k15.hyp1_ok);
  CHECK(k15.hyp3_status == LatticeStatus::NonLattice);

  const AssumptionReport lat = validate_assumptions(lattice_spec());
  CHECK(lat.kappa > 1.0);
  CHECK(lat.kappa < 2.0);
  CHECK(lat.hyp3_status == LatticeStatus::Lattice);

  const AssumptionReport drift = validate_assumptions(positive_drift());
  CHECK_FALSE(drift.hyp1_ok);
}

TEST_CASE("two-point calibration") {
  const auto t = calibrate_two_point(2, 2.0, 1.5);
  CHECK(t.a == doctest::Approx(0.266).epsilon(0.005));
  CHECK(t.p == doctest::Approx(0.866).epsilon(0.005));
  CHECK(std::abs(t.residual_mean) <= 1e-12);
  CHECK(std::abs(t.residual_kappa) <= 1e-12);
  const auto t2 = calibrate_two_point(2, 2.0, 2.0);
  CHECK(std::abs(psi(t2.spec, 2.0)) <= 1e-12);
  CHECK_THROWS_AS(calibrate_two_point(2, 1.0, 1.5), Infeasible);
  CHECK_THROWS_AS(calibrate_two_point(1, 2.0, 1.5), Infeasible);
}

TEST_CASE("spec construction invariants") {
  CHECK_THROWS_AS(EnvironmentSpec::create({{0.5, {0.5, 0.5}}}), InvalidSpec);
  CHECK_THROWS_AS(EnvironmentSpec::create({{1.0, {0.6, 0.6}}}), InvalidSpec);
  CHECK_THROWS_AS(EnvironmentSpec::create({{1.0, {1.0}}}), InvalidSpec);  // E nu = 1
  CHECK_THROWS_AS(EnvironmentSpec::create({{1.0, {1.5, -0.5}}}), InvalidSpec);
  CHECK_THROWS_AS(EnvironmentSpec::create({}), InvalidSpec);
  // a leaf atom is allowed
  CHECK_NOTHROW(EnvironmentSpec::create({{0.5, {}}, {0.5, {2.0 / 3, 2.0 / 3, 2.0 / 3}}}));
}

TEST_CASE("exact moments") {
  CHECK(c5_constant(binary_spec()) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(martingale_second_moment(binary_spec()) == doctest::Approx(1.0).epsilon(1e-14));
  const auto t = calibrate_two_point(2, 2.0, 3.0);
  // E sum_{i != j} A_i A_j = 2 (E A)^2 with i.i.d. marks of mean 1/2
  const double ea2 = t.p * t.a * t.a + (1 - t.p) * 4.0;
  const double expected = 2.0 * 0.25 / (1.0 - 2.0 * ea2);
  CHECK(martingale_second_moment(t.spec) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(std::isinf(martingale_second_moment(calibrate_two_point(2, 2.0, 1.5).spec)));
  CHECK(std::isnan(c5_constant(calibrate_two_point(2, 2.0, 1.5).spec)));
}

TEST_CASE("spec json round trip") {
  const auto spec = calibrate_two_point(2, 2.0, 1.5).spec;
  const SpecFile back = spec_from_json(spec_to_json(spec, 77));
  CHECK(back.seed == 77);
  REQUIRE(back.spec.atoms().size() == spec.atoms().size());
  for (std::size_t i = 0; i < spec.atoms().size(); ++i) {
    CHECK(back.spec.atoms()[i].probability == spec.atoms()[i].probability);
    CHECK(back.spec.atoms()[i].marks == spec.atoms()[i].marks);
  }
  nlohmann::json bad = {{"atoms", {{{"p", 1.0}, {"nu", 3}, {"marks", {0.5, 0.5}}}}}};
  CHECK_THROWS_AS(spec_from_json(bad), InvalidSpec);
}

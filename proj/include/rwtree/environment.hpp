#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "rwtree/rng.hpp"

namespace rwtree {

/// One atom of the finite-support law of (nu, A_1..A_nu).
struct Atom {
  double probability = 0.0;
  std::vector<double> marks;  // size is nu

  std::size_t nu() const { return marks.size(); }
};

/// How omega(root, parent-of-root) is chosen. Only the interior-node
/// normalization 1 / (1 + sum of the root's child marks) is supported.
enum class RootParentRule { Derived };

/// Finite-support environment law. Construction validates normalization,
/// positivity, criticality (E sum A = 1) and supercriticality (E nu > 1).
class EnvironmentSpec {
 public:
  static EnvironmentSpec create(std::vector<Atom> atoms,
                                RootParentRule rule = RootParentRule::Derived);

  const std::vector<Atom>& atoms() const { return atoms_; }
  RootParentRule root_parent_rule() const { return rule_; }

  /// True when the law is a single atom, so every subtree is identical.
  bool is_homogeneous() const { return atoms_.size() == 1; }
  std::size_t max_nu() const { return max_nu_; }
  double mean_offspring() const;

  /// E[sum_i A_i^t], summed exactly over atoms.
  double moment(double t) const;
  /// E[sum_i A_i^t log A_i].
  double log_moment(double t) const;
  /// E[sum_{i != j} A_i A_j].
  double cross_moment() const;
  /// E[(sum_i A_i)^t].
  double sum_power_moment(double t) const;

  /// Atom index drawn with the given uniform variate in (0, 1).
  std::size_t atom_for(double u) const;
  std::size_t sample_atom(RngStream& rng) const {
    return is_homogeneous() ? 0 : atom_for(rng.uniform());
  }

 private:
  EnvironmentSpec() = default;

  std::vector<Atom> atoms_;
  std::vector<double> cumulative_;
  RootParentRule rule_ = RootParentRule::Derived;
  std::size_t max_nu_ = 0;
};

/// Parsed spec file: the environment plus the seed that fixes the quenched
/// environment realization.
struct SpecFile {
  EnvironmentSpec spec;
  std::uint64_t seed = 0;
};

SpecFile spec_from_json(const nlohmann::json& doc);
nlohmann::json spec_to_json(const EnvironmentSpec& spec, std::uint64_t seed);
SpecFile load_spec_file(const std::string& path);

inline constexpr double kInfiniteKappa = std::numeric_limits<double>::infinity();
inline constexpr double kDefaultProbeBound = 64.0;

/// psi(t) = log E[sum_i A_i^t].
double psi(const EnvironmentSpec& spec, double t);
/// d psi / dt = E[sum A^t log A] / E[sum A^t].
double psi_prime(const EnvironmentSpec& spec, double t);
/// Minimum of psi over [lo, hi] (psi is convex).
double psi_minimum(const EnvironmentSpec& spec, double lo, double hi);

/// kappa = inf{t > 1 : psi(t) = 0}; infinity when psi stays negative up to
/// the probe bound. Throws InvalidRegime unless inf_{[0,1]} psi = 0 and
/// psi'(1) < 0.
double kappa(const EnvironmentSpec& spec, double probe_bound = kDefaultProbeBound);

/// Which case of the scaling laws applies.
enum class Regime { KappaLt2, KappaEq2, KappaGt2 };
std::string to_string(Regime regime);
/// kappa within 1e-9 of 2 counts as the boundary case.
Regime regime_for(double kappa);

enum class LatticeStatus { NonLattice, Lattice, NotApplicable };
std::string to_string(LatticeStatus status);

struct AssumptionReport {
  bool hyp1_ok = false;
  bool hyp2_ok = false;
  LatticeStatus hyp3_status = LatticeStatus::NotApplicable;
  double kappa = std::numeric_limits<double>::quiet_NaN();
  double psi_prime_1 = 0.0;
  double inf_psi_01 = 0.0;
  std::string details;
};

AssumptionReport validate_assumptions(const EnvironmentSpec& spec,
                                      double probe_bound = kDefaultProbeBound);

/// Rational-dependence heuristic on the distinct nonzero log-marks: the set is
/// declared lattice when every ratio to the first log-mark has a continued
/// fraction convergent with denominator <= max_denominator that matches to
/// floating-point accuracy.
bool log_marks_look_lattice(const EnvironmentSpec& spec,
                            std::uint64_t max_denominator = 1'000'000);

/// nu = b children with i.i.d. marks {a w.p. p, c w.p. 1-p}, where (a, p)
/// solves p a + (1-p) c = 1/b and p a^k + (1-p) c^k = 1/b.
struct TwoPointCalibration {
  EnvironmentSpec spec;
  double a = 0.0;
  double p = 0.0;
  double residual_mean = 0.0;
  double residual_kappa = 0.0;
};

TwoPointCalibration calibrate_two_point(int b, double c, double kappa_target);

/// Exact E[M_inf^2] = E sum_{i!=j} A_i A_j / (1 - E sum A_i^2); infinite when
/// E sum A_i^2 >= 1.
double martingale_second_moment(const EnvironmentSpec& spec);

/// c5 = ((1 - E sum A^2) / E sum_{i!=j} A_i A_j)^{1/2}; NaN when E sum A^2 >= 1.
double c5_constant(const EnvironmentSpec& spec);

/// The deterministic binary spec nu = 2, A = (1/2, 1/2).
EnvironmentSpec binary_spec();

}  // namespace rwtree

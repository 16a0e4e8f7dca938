#include "rwtree/environment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "rwtree/errors.hpp"
#include "rwtree/stats.hpp"

namespace rwtree {

EnvironmentSpec EnvironmentSpec::create(std::vector<Atom> atoms, RootParentRule rule) {
  if (atoms.empty()) throw InvalidSpec("environment needs at least one atom");
  CompensatedSum total;
  CompensatedSum mean_sum;
  CompensatedSum mean_nu;
  for (const auto& atom : atoms) {
    if (!(atom.probability > 0.0 && atom.probability <= 1.0)) {
      throw InvalidSpec("atom probability must lie in (0, 1]");
    }
    double s = 0.0;
    for (double m : atom.marks) {
      if (!(m > 0.0) || !std::isfinite(m)) throw InvalidSpec("marks must be positive and finite");
      s += m;
    }
    total.add(atom.probability);
    mean_sum.add(atom.probability * s);
    mean_nu.add(atom.probability * static_cast<double>(atom.nu()));
  }
  if (std::abs(total.value() - 1.0) > 1e-12) {
    throw InvalidSpec("atom probabilities sum to " + std::to_string(total.value()) + ", not 1");
  }
  if (std::abs(mean_sum.value() - 1.0) > 1e-10) {
    std::ostringstream os;
    os.precision(17);
    os << "criticality violated: E[sum A] = " << mean_sum.value();
    throw InvalidSpec(os.str());
  }
  if (!(mean_nu.value() > 1.0)) throw InvalidSpec("tree is not supercritical: E[nu] <= 1");

  EnvironmentSpec spec;
  spec.atoms_ = std::move(atoms);
  spec.rule_ = rule;
  double acc = 0.0;
  for (const auto& atom : spec.atoms_) {
    acc += atom.probability;
    spec.cumulative_.push_back(acc);
    spec.max_nu_ = std::max(spec.max_nu_, atom.nu());
  }
  spec.cumulative_.back() = 1.0;
  return spec;
}

double EnvironmentSpec::mean_offspring() const {
  CompensatedSum s;
  for (const auto& atom : atoms_) s.add(atom.probability * static_cast<double>(atom.nu()));
  return s.value();
}

double EnvironmentSpec::moment(double t) const {
  CompensatedSum s;
  for (const auto& atom : atoms_)
    for (double m : atom.marks) s.add(atom.probability * std::pow(m, t));
  return s.value();
}

double EnvironmentSpec::log_moment(double t) const {
  CompensatedSum s;
  for (const auto& atom : atoms_)
    for (double m : atom.marks) s.add(atom.probability * std::pow(m, t) * std::log(m));
  return s.value();
}

double EnvironmentSpec::cross_moment() const {
  CompensatedSum s;
  for (const auto& atom : atoms_) {
    double sum = 0.0, sq = 0.0;
    for (double m : atom.marks) {
      sum += m;
      sq += m * m;
    }
    s.add(atom.probability * (sum * sum - sq));
  }
  return s.value();
}

double EnvironmentSpec::sum_power_moment(double t) const {
  CompensatedSum s;
  for (const auto& atom : atoms_) {
    double sum = 0.0;
    for (double m : atom.marks) sum += m;
    s.add(atom.probability * std::pow(sum, t));
  }
  return s.value();
}

std::size_t EnvironmentSpec::atom_for(double u) const {
  const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
  return std::min<std::size_t>(static_cast<std::size_t>(it - cumulative_.begin()),
                               atoms_.size() - 1);
}

SpecFile spec_from_json(const nlohmann::json& doc) {
  if (!doc.contains("atoms") || !doc["atoms"].is_array()) {
    throw InvalidSpec("spec document needs an 'atoms' array");
  }
  std::vector<Atom> atoms;
  for (const auto& a : doc["atoms"]) {
    Atom atom;
    atom.probability = a.at("p").get<double>();
    atom.marks = a.at("marks").get<std::vector<double>>();
    if (a.contains("nu") && a["nu"].get<std::size_t>() != atom.marks.size()) {
      throw InvalidSpec("atom 'nu' does not match the number of marks");
    }
    atoms.push_back(std::move(atom));
  }
  SpecFile out{EnvironmentSpec::create(std::move(atoms)), 0};
  if (doc.contains("seed")) out.seed = doc["seed"].get<std::uint64_t>();
  return out;
}

nlohmann::json spec_to_json(const EnvironmentSpec& spec, std::uint64_t seed) {
  nlohmann::json atoms = nlohmann::json::array();
  for (const auto& atom : spec.atoms()) {
    atoms.push_back({{"p", atom.probability}, {"nu", atom.nu()}, {"marks", atom.marks}});
  }
  return {{"atoms", atoms}, {"seed", seed}};
}

SpecFile load_spec_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidSpec("cannot open spec file " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidSpec("malformed spec file " + path + ": " + e.what());
  }
  return spec_from_json(doc);
}

double psi(const EnvironmentSpec& spec, double t) { return std::log(spec.moment(t)); }

double psi_prime(const EnvironmentSpec& spec, double t) {
  return spec.log_moment(t) / spec.moment(t);
}

namespace {

double argmin_psi(const EnvironmentSpec& spec, double lo, double hi) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double x1 = b - inv_phi * (b - a), x2 = a + inv_phi * (b - a);
  double f1 = psi(spec, x1), f2 = psi(spec, x2);
  for (int i = 0; i < 200 && b - a > 1e-13; ++i) {
    if (f1 < f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - inv_phi * (b - a);
      f1 = psi(spec, x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + inv_phi * (b - a);
      f2 = psi(spec, x2);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace

double psi_minimum(const EnvironmentSpec& spec, double lo, double hi) {
  return std::min({psi(spec, argmin_psi(spec, lo, hi)), psi(spec, lo), psi(spec, hi)});
}

namespace {

void require_hyp1(const EnvironmentSpec& spec) {
  const double d1 = psi_prime(spec, 1.0);
  if (!(d1 < 0.0)) {
    throw InvalidRegime("psi'(1) = " + std::to_string(d1) + " is not negative");
  }
  const double inf01 = psi_minimum(spec, 0.0, 1.0);
  if (std::abs(inf01) > 1e-10) {
    throw InvalidRegime("inf of psi over [0,1] is " + std::to_string(inf01) + ", not 0");
  }
}

}  // namespace

double kappa(const EnvironmentSpec& spec, double probe_bound) {
  require_hyp1(spec);
  if (!(probe_bound > 1.0)) throw InvalidRegime("probe bound must exceed 1");
  if (psi(spec, probe_bound) <= 0.0) return kInfiniteKappa;
  // psi is convex, zero at 1 and decreasing there: the second root lies to the
  // right of the minimizer on (1, probe_bound].
  double lo = argmin_psi(spec, 1.0, probe_bound);
  double hi = probe_bound;
  if (!(psi(spec, lo) < 0.0)) {
    // Minimizer numerically indistinguishable from 1; step right until negative.
    lo = 1.0 + 1e-6;
    while (psi(spec, lo) >= 0.0 && lo < hi) lo = 1.0 + (lo - 1.0) * 0.5;
  }
  for (int i = 0; i < 400; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    (psi(spec, mid) < 0.0 ? lo : hi) = mid;
  }
  return std::abs(psi(spec, lo)) <= std::abs(psi(spec, hi)) ? lo : hi;
}

std::string to_string(Regime regime) {
  switch (regime) {
    case Regime::KappaLt2:
      return "KappaLt2";
    case Regime::KappaEq2:
      return "KappaEq2";
    case Regime::KappaGt2:
      return "KappaGt2";
  }
  return "?";
}

Regime regime_for(double kappa) {
  if (std::abs(kappa - 2.0) <= 1e-9) return Regime::KappaEq2;
  return kappa < 2.0 ? Regime::KappaLt2 : Regime::KappaGt2;
}

std::string to_string(LatticeStatus status) {
  switch (status) {
    case LatticeStatus::NonLattice:
      return "NonLattice";
    case LatticeStatus::Lattice:
      return "Lattice";
    case LatticeStatus::NotApplicable:
      return "NotApplicable";
  }
  return "?";
}

namespace {

bool looks_rational(double r, std::uint64_t max_denominator) {
  // Continued-fraction convergents h/k of r.
  double x = r;
  double h_prev = 1.0, h = std::floor(x);
  double k_prev = 0.0, k = 1.0;
  const double tol = 1e-14 * std::max(1.0, std::abs(r));
  for (int iter = 0; iter < 64; ++iter) {
    if (std::abs(r - h / k) <= tol) return true;
    const double frac = x - std::floor(x);
    if (frac < 1e-300) return true;
    x = 1.0 / frac;
    const double a = std::floor(x);
    const double h_next = a * h + h_prev;
    const double k_next = a * k + k_prev;
    if (k_next > static_cast<double>(max_denominator)) return false;
    h_prev = h;
    h = h_next;
    k_prev = k;
    k = k_next;
  }
  return false;
}

}  // namespace

bool log_marks_look_lattice(const EnvironmentSpec& spec, std::uint64_t max_denominator) {
  std::vector<double> logs;
  for (const auto& atom : spec.atoms())
    for (double m : atom.marks) {
      const double l = std::log(m);
      if (std::abs(l) < 1e-15) continue;
      bool seen = false;
      for (double v : logs)
        if (std::abs(v - l) <= 1e-15 * std::max(1.0, std::abs(l))) seen = true;
      if (!seen) logs.push_back(l);
    }
  if (logs.size() < 2) return true;
  for (std::size_t i = 1; i < logs.size(); ++i)
    if (!looks_rational(logs[i] / logs[0], max_denominator)) return false;
  return true;
}

AssumptionReport validate_assumptions(const EnvironmentSpec& spec, double probe_bound) {
  AssumptionReport report;
  std::ostringstream details;
  details.precision(12);
  report.psi_prime_1 = psi_prime(spec, 1.0);
  report.inf_psi_01 = psi_minimum(spec, 0.0, 1.0);
  report.hyp1_ok = std::abs(report.inf_psi_01) <= 1e-10 && report.psi_prime_1 < 0.0;
  details << "psi(0)=" << psi(spec, 0.0) << " psi'(1)=" << report.psi_prime_1
          << " inf_[0,1] psi=" << report.inf_psi_01 << ";";
  if (!report.hyp1_ok) {
    details << " hyp1 fails, kappa undefined;";
    report.details = details.str();
    return report;
  }
  report.kappa = kappa(spec, probe_bound);
  details << " kappa=" << report.kappa << ";";
  if (report.kappa <= 2.0) {
    const double m1 = spec.sum_power_moment(report.kappa);
    CompensatedSum s;
    for (const auto& atom : spec.atoms())
      for (double m : atom.marks)
        s.add(atom.probability * std::pow(m, report.kappa) * std::max(0.0, std::log(m)));
    report.hyp2_ok = std::isfinite(m1) && std::isfinite(s.value());
    details << " E(sum A)^kappa=" << m1 << " E(sum A^kappa log+ A)=" << s.value() << ";";
    const bool lattice = log_marks_look_lattice(spec);
    report.hyp3_status = lattice ? LatticeStatus::Lattice : LatticeStatus::NonLattice;
    details << (lattice ? " log-marks lattice (rational dependence found);"
                        : " log-marks likely non-lattice (no rational dependence up to 1e6);");
  } else {
    const double m2 = spec.sum_power_moment(2.0);
    report.hyp2_ok = std::isfinite(m2);
    report.hyp3_status = LatticeStatus::NotApplicable;
    details << " E(sum A)^2=" << m2 << ";";
  }
  report.details = details.str();
  return report;
}

TwoPointCalibration calibrate_two_point(int b, double c, double kappa_target) {
  if (b < 2) throw Infeasible("calibration needs b >= 2");
  if (!(c > 1.0)) throw Infeasible("calibration needs c > 1 for a second root of psi");
  if (!(kappa_target > 1.0) || !std::isfinite(kappa_target)) {
    throw Infeasible("calibration needs a finite kappa > 1");
  }
  const double inv_b = 1.0 / b;
  // p is eliminated through the first equation; the second is bisected in a.
  auto p_of = [&](double a) { return (c - inv_b) / (c - a); };
  auto f = [&](double a) {
    const double p = p_of(a);
    return p * std::pow(a, kappa_target) + (1.0 - p) * std::pow(c, kappa_target) - inv_b;
  };
  double lo = 0.0, hi = inv_b;
  const double f_lo = (1.0 / b) * (std::pow(c, kappa_target - 1.0) - 1.0);  // limit a -> 0
  const double f_hi = std::pow(inv_b, kappa_target) - inv_b;
  if (!(f_lo > 0.0 && f_hi < 0.0)) throw Infeasible("no sign change for the mark a in (0, 1/b)");
  for (int i = 0; i < 2000; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    (f(mid) > 0.0 ? lo : hi) = mid;
  }
  const double a = std::abs(f(lo)) < std::abs(f(hi)) ? lo : hi;
  if (!(a > 0.0 && a < inv_b)) throw Infeasible("bisection left the open interval (0, 1/b)");
  const double p = p_of(a);
  if (!(p > 0.0 && p < 1.0)) throw Infeasible("calibrated probability outside (0, 1)");

  std::vector<Atom> atoms;
  for (int k = 0; k <= b; ++k) {  // k marks equal to a
    const double prob = std::exp(std::lgamma(b + 1.0) - std::lgamma(k + 1.0) -
                                 std::lgamma(b - k + 1.0) + k * std::log(p) +
                                 (b - k) * std::log1p(-p));
    Atom atom;
    atom.probability = prob;
    atom.marks.assign(static_cast<std::size_t>(k), a);
    atom.marks.insert(atom.marks.end(), static_cast<std::size_t>(b - k), c);
    atoms.push_back(std::move(atom));
  }
  double total = 0.0;
  for (const auto& atom : atoms) total += atom.probability;
  for (auto& atom : atoms) atom.probability /= total;

  TwoPointCalibration out{EnvironmentSpec::create(std::move(atoms)), a, p, 0.0, 0.0};
  out.residual_mean = p * a + (1.0 - p) * c - inv_b;
  out.residual_kappa = f(a);
  if (!(psi_prime(out.spec, 1.0) < 0.0)) throw Infeasible("calibrated spec has psi'(1) >= 0");
  const double probe = std::max(kDefaultProbeBound, 2.0 * kappa_target);
  if (std::abs(kappa(out.spec, probe) - kappa_target) > 1e-9) {
    throw Infeasible("calibrated spec does not reproduce the requested kappa");
  }
  return out;
}

double martingale_second_moment(const EnvironmentSpec& spec) {
  const double sq = spec.moment(2.0);
  if (sq >= 1.0) return std::numeric_limits<double>::infinity();
  return spec.cross_moment() / (1.0 - sq);
}

double c5_constant(const EnvironmentSpec& spec) {
  const double sq = spec.moment(2.0);
  if (sq >= 1.0) return std::numeric_limits<double>::quiet_NaN();
  return std::sqrt((1.0 - sq) / spec.cross_moment());
}

EnvironmentSpec binary_spec() { return EnvironmentSpec::create({Atom{1.0, {0.5, 0.5}}}); }

}  // namespace rwtree

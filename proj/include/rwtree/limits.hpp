#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rwtree/environment.hpp"
#include "rwtree/rng.hpp"
#include "rwtree/stats.hpp"

namespace rwtree {

/// Positive alpha-stable law with E exp(-lambda S) = exp(-lambda^alpha).
struct StableSpec {
  double alpha = 0.5;
};

/// Kanter's representation: U uniform on (0, pi), E standard exponential.
double stable_draw(double alpha, RngStream& rng);
std::vector<double> sample_stable(double alpha, std::size_t count, RngStream& rng);

struct LaplaceCheck {
  double lambda = 0.0;
  double estimate = 0.0;
  double stderr_ = 0.0;
  double expected = 0.0;
  double z = 0.0;
  bool pass = false;
};

/// Empirical E exp(-lambda * scale * S) against exp(-scale^alpha lambda^alpha).
LaplaceCheck stable_laplace_check(std::span<const double> samples, double alpha, double lambda,
                                  double scale = 1.0);

/// E S_alpha^{-alpha} by Monte Carlo, bootstrap error. Closed form 1/Gamma(1+alpha)
/// is left to the tests.
BootstrapResult stable_negative_moment(double alpha, std::size_t count, std::uint64_t seed,
                                       std::size_t resamples = 100);

/// f_kappa from the law of the iterated logarithm for the local time.
struct RateFunction {
  Regime regime = Regime::KappaGt2;
  double kappa = 0.0;
  double operator()(double n) const;
  std::string formula() const;
};

struct LimitPrediction {
  Regime regime = Regime::KappaGt2;
  double kappa = 0.0;
  /// 1/kappa below 2, 1/2 otherwise
  double alpha = 0.5;
  // NaN where a constant is not defined in the regime
  double c1 = 0.0;
  double c2 = 0.0;
  double c3 = 0.0;
  double c4 = 0.0;
  double c5 = 0.0;
  double c_m = 0.0;
  double omega_root = 0.0;
  double m_inf = 0.0;
  double quenched_prefactor = 0.0;  // 1 / (omega_root m_inf)
  /// E S_alpha^{-alpha} (kappa < 2 only)
  double stable_moment = 0.0;
  double stable_moment_stderr = 0.0;
  RateFunction rate;

  /// Asymptotic P(T+ > n).
  double survival(double n) const;
  /// n^{1/kappa}, (n log n)^{1/2} or n^{1/2}
  double local_time_scale(double n) const;
  /// L_n / local_time_scale(n) converges to this constant times S^{-alpha}
  /// (kappa < 2) or |N|.
  double local_time_constant() const;
  /// Asymptotic P(X_n = root) for even n.
  double local_probability(double n) const;
};

/// Throws MissingTailConstant when kappa <= 2 and c_m_hat is absent.
LimitPrediction predict_limits(const EnvironmentSpec& spec, std::optional<double> c_m_hat,
                               double m_inf_hat, double omega_root,
                               std::uint64_t seed = 1, std::size_t stable_samples = 1'000'000);

/// 2^{1/kappa} (c_M kappa B(2-kappa, kappa-1))^{-1/kappa} / Gamma(1 - 1/kappa)
double c1_constant(double c_m, double kappa);

struct CdfPoint {
  double z = 0.0;
  double empirical = 0.0;
  double predicted = 0.0;
};

struct KsReport {
  std::uint64_t n = 0;
  double scale = 0.0;     // local_time_scale(n)
  double constant = 0.0;  // local_time_constant()
  double statistic = 0.0;
  std::size_t sample_size = 0;
  std::string method;
  std::vector<CdfPoint> curve;
};

/// KS distance between L_n / local_time_scale(n) and the predicted law.
/// |N| limits are compared with their CDF; stable limits with a sample of
/// C S^{-alpha}, which is the rule P(L >= z) -> P(S <= (z/C)^{-1/alpha}).
KsReport corollary12_check(std::span<const double> local_times, const LimitPrediction& prediction,
                           std::uint64_t n, std::uint64_t seed = 1,
                           std::size_t predicted_samples = 1'000'000, std::size_t curve_points = 200);

struct LocalProbReport {
  FitResult fit;
  double expected_slope = 0.0;
  double prefactor_ratio = 0.0;
  double prefactor_ratio_stderr = 0.0;
  bool monotone_ok = true;
  std::size_t monotone_violations = 0;
  std::vector<double> predicted;
};

/// Slope of log p against log n inside `window`, inverse-variance mean of
/// p / predicted over the same points, and the non-increasing check
/// p_{i+1} <= p_i + 2 hypot(se_i, se_{i+1}) across the whole grid.
LocalProbReport corollary14_check(std::span<const std::uint64_t> times,
                                  std::span<const double> probs, std::span<const double> stderrs,
                                  const LimitPrediction& prediction, Window window = {});

struct LilTrace {
  std::vector<std::uint64_t> times;
  std::vector<double> running_max;  // max over t' <= t of L_t' / f(t')
};

/// One quenched path; records max L_t/f(t) at the checkpoints (t >= 16).
LilTrace lil_trace(const EnvironmentSpec& spec, std::uint64_t env_seed, const RateFunction& rate,
                   const std::vector<std::uint64_t>& checkpoints, std::uint64_t walk_seed);

}  // namespace rwtree

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rwtree/environment.hpp"
#include "rwtree/stats.hpp"

namespace rwtree {

enum class CascadeTarget { BEps, MInf };
std::string to_string(CascadeTarget target);

/// Sample pool standing for the annealed law of B_eps or M_infinity.
struct PopulationPool {
  CascadeTarget target = CascadeTarget::BEps;
  double epsilon = 0.0;  // unused for MInf
  std::vector<double> samples;
  std::size_t iterations_done = 0;
  /// Largest sum of marks drawn so far; bounds every B sample.
  double max_mark_sum = 0.0;

  static PopulationPool initial(CascadeTarget target, double epsilon, std::size_t size);
  MeanEstimate mean() const { return mean_estimate(samples); }
};

struct StepOptions {
  unsigned workers = 1;
  std::size_t chunk_size = 8192;
  /// MInf only: rescale to unit mean after each step. The linear map has a
  /// neutral scale mode, along which an unnormalized pool random-walks.
  bool renormalize = true;
};

/// One sweep of the map: slot i of the new pool is sum_j A_j g(old[K_j])
/// with (nu, A) fresh from the spec and K_j uniform pool indices, all drawn
/// from RngStream(combine_keys(seed, iteration), i).
void population_step(PopulationPool& pool, const EnvironmentSpec& spec, std::uint64_t seed,
                     const StepOptions& options = {});

struct CascadeOptions {
  std::size_t pool_size = 200'000;
  std::size_t max_iter = 100'000;
  double tol = 1e-3;
  std::size_t stable_steps = 5;
  /// Minimum burn-in, in relaxation times of the pool mean.
  double burn_in = 8.0;
  /// Steps averaged after burn-in (0: report the final pool only).
  std::size_t average_iterations = 0;
  std::uint64_t seed = 1;
  StepOptions step;
};

struct FixpointResult {
  PopulationPool pool;
  std::vector<double> mean_trace;
  bool converged = false;
  std::size_t iterations = 0;
  double relaxation_times = 0.0;
  /// Time average over the averaging phase with batch-means error, or the
  /// final pool's mean and standard error.
  MeanEstimate mean;
  /// Same for B^2/(1+B) - eps/(1+B), whose law mean is 0 at the fixpoint.
  MeanEstimate identity_residual;
};

/// Iterates population_step until the mean has moved by less than
/// max(tol * mean, 3 standard errors of the step-to-step noise) for
/// `stable_steps` steps and the burn-in is complete.
/// Throws NoConvergence after max_iter steps.
FixpointResult run_to_fixpoint(const EnvironmentSpec& spec, CascadeTarget target, double epsilon,
                               const CascadeOptions& options,
                               const PopulationPool* warm_start = nullptr);

/// Identity E[B^2/(1+B)] = eps E[1/(1+B)] on one pool.
struct IdentityCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  double difference = 0.0;
  double stderr_ = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};
IdentityCheck identity_check(const PopulationPool& pool);

struct AsymptoticsRow {
  double epsilon = 0.0;
  double mean = 0.0;
  double stderr_ = 0.0;
  double predicted = 0.0;  // NaN when the prefactor is unknown
  std::size_t iterations = 0;
  bool bound_ok = false;   // mean <= 2 sqrt(eps)
};

struct AsymptoticsTable {
  double kappa = 0.0;
  Regime regime = Regime::KappaGt2;
  std::vector<AsymptoticsRow> rows;
  FitResult fit;  // log mean against log eps
  /// exp of the mean of log(mean) - log(eps)/kappa_eff over rows with
  /// eps <= prefactor_max_eps (exponent 1/2 when kappa >= 2).
  double prefactor = 0.0;
  double prefactor_stderr = 0.0;
  /// mean * (log(1/eps)/eps)^{1/2}, filled for every row (used at kappa = 2).
  std::vector<double> log_corrected;
};

/// Population means of B_eps along eps_grid (processed from large to small
/// eps with warm starts), their log-log slope and the prefactor.
AsymptoticsTable mean_b_asymptotics(const EnvironmentSpec& spec, std::vector<double> eps_grid,
                                    const CascadeOptions& options,
                                    std::optional<double> c_m_hat = std::nullopt,
                                    double prefactor_max_eps = 1e-4);

enum class TailMethod { LogLogRegression, Hill };

struct TailFit {
  double exponent_hat = 0.0;
  double exponent_stderr = 0.0;
  double constant_hat = 0.0;
  double constant_stderr = 0.0;
  double constant_ci_lo = 0.0;
  double constant_ci_hi = 0.0;
  Window fit_window;
  TailMethod method = TailMethod::LogLogRegression;
  double hill_exponent = 0.0;
  double hill_stderr = 0.0;
  std::size_t survivors = 0;
};

/// P(M > x) ~ c_M x^{-kappa} fitted on the [q95, q99.9] quantile window of
/// the surviving (nonzero) samples. The tail probability uses the whole pool
/// as denominator. Slope free for the exponent, fixed at kappa for c_M.
TailFit estimate_tail_constant(std::span<const double> pool, double kappa,
                               std::size_t bootstrap_resamples = 200,
                               std::uint64_t seed = 1);

/// c4 = (c_M kappa B(2 - kappa, kappa - 1))^{-1/kappa}, for kappa in (1, 2).
double c4_constant(double c_m, double kappa);
double beta_function(double a, double b);

struct ComparisonResult {
  double lhs = 0.0;
  double rhs = 0.0;
  double stderr_ = 0.0;
  bool pass = false;
};

/// phi_a(x) = x^2 / (a + x).
inline double phi_a(double a, double x) { return x * x / (a + x); }

/// E phi_a(<(eps + xi)/(1 + xi)>) <= E phi_a(<xi>), <y> = y / E y, paired
/// on the same xi sample.
ComparisonResult convex_comparison_check(std::span<const double> xi, double a, double epsilon);

/// E phi_a(<B>) from a B pool against E phi_a(M) from an M pool.
ComparisonResult b_versus_m_comparison(std::span<const double> b_pool,
                                       std::span<const double> m_pool, double a);

struct AsympMRow {
  double a = 0.0;
  double value = 0.0;  // E[M^2/(a+M)]
  double stderr_ = 0.0;
  double scaled = 0.0;  // a * value
};

struct AsympMTable {
  std::vector<AsympMRow> rows;
  Regime regime = Regime::KappaGt2;
  FitResult fit;              // log value against log a (kappa <= 2)
  double expected_slope = 0.0;
  double second_moment = 0.0;  // exact E M^2 when kappa > 2
};

AsympMTable asymp_M_check(std::span<const double> m_pool, const std::vector<double>& a_grid,
                          double kappa, const EnvironmentSpec& spec);

struct ContractionTrace {
  std::vector<double> pathwise;  // new E|B - B'| over the resampled old distance
  std::vector<double> naive;     // new E|B - B'| over the old one
  double worst_pathwise = 0.0;
};

/// Two B_eps pools started apart and driven by the same draws.
ContractionTrace contraction_diagnostic(const EnvironmentSpec& spec, double epsilon,
                                        std::size_t pool_size, std::size_t steps,
                                        std::uint64_t seed);

}  // namespace rwtree

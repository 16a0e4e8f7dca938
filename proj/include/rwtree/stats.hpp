#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "rwtree/rng.hpp"

namespace rwtree {

/// Neumaier compensated accumulator.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      compensation_ += (sum_ - t) + x;
    } else {
      compensation_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + compensation_; }

 private:
  double sum_ = 0.0;
  double compensation_ = 0.0;
};

struct MeanEstimate {
  double mean = 0.0;
  double stderr_ = 0.0;
  double sd = 0.0;
  std::size_t count = 0;
};

MeanEstimate mean_estimate(std::span<const double> values);

/// Standard error of a binomial proportion estimate.
inline double binomial_stderr(double p, std::size_t trials) {
  if (trials == 0) return 0.0;
  return std::sqrt(std::max(p * (1.0 - p), 0.0) / static_cast<double>(trials));
}

struct Window {
  double lo = -INFINITY;
  double hi = INFINITY;
};

struct FitResult {
  double slope = 0.0;
  double intercept = 0.0;
  double stderr_slope = 0.0;
  double stderr_intercept = 0.0;
  double r2 = 0.0;
  Window window;
  std::size_t points = 0;
};

/// Least squares of log y on log x over the points with x inside the window.
/// Throws DegenerateWindow with fewer than `min_points` usable points or a
/// non-positive coordinate inside the window.
FitResult loglog_fit(std::span<const double> x, std::span<const double> y, Window window = {},
                     std::size_t min_points = 5);

/// Plain least squares of y on x.
FitResult linear_fit(std::span<const double> x, std::span<const double> y);

/// Two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b|.
double ks_distance(std::span<const double> a, std::span<const double> b);

/// One-sample statistic sup |F_n - F| against a continuous CDF.
double ks_distance_to_cdf(std::span<const double> sample,
                          const std::function<double(double)>& cdf);

struct HillResult {
  double exponent = 0.0;
  double stderr_ = 0.0;
  std::size_t exceedances = 0;
  double threshold = 0.0;
};

/// Hill estimator of the tail index over the top `top_fraction` order
/// statistics (zero and negative values are ignored).
HillResult hill_estimator(std::span<const double> sample, double top_fraction);

struct BootstrapResult {
  double estimate = 0.0;
  double stderr_ = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
};

/// Nonparametric bootstrap of `statistic`; percentile interval at the given
/// coverage.
BootstrapResult bootstrap(std::span<const double> sample,
                          const std::function<double(std::span<const double>)>& statistic,
                          std::size_t resamples, std::uint64_t seed, double coverage = 0.95);

/// Empirical quantile with linear interpolation on a sorted sample.
double sorted_quantile(std::span<const double> sorted, double q);

}  // namespace rwtree

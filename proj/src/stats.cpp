#include "rwtree/stats.hpp"

#include <algorithm>
#include <numeric>

#include "rwtree/errors.hpp"

namespace rwtree {

MeanEstimate mean_estimate(std::span<const double> values) {
  MeanEstimate out;
  out.count = values.size();
  if (values.empty()) return out;
  CompensatedSum sum;
  for (double v : values) sum.add(v);
  out.mean = sum.value() / static_cast<double>(values.size());
  if (values.size() > 1) {
    CompensatedSum sq;
    for (double v : values) sq.add((v - out.mean) * (v - out.mean));
    out.sd = std::sqrt(sq.value() / static_cast<double>(values.size() - 1));
    out.stderr_ = out.sd / std::sqrt(static_cast<double>(values.size()));
  }
  return out;
}

FitResult linear_fit(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  if (n < 2 || y.size() != n) throw DegenerateWindow("linear fit needs at least two points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0) throw DegenerateWindow("linear fit: all abscissae coincide");
  FitResult fit;
  fit.points = n;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double rss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = y[i] - fit.intercept - fit.slope * x[i];
    rss += r * r;
  }
  fit.r2 = syy > 0.0 ? 1.0 - rss / syy : 1.0;
  if (n > 2) {
    const double s2 = rss / static_cast<double>(n - 2);
    fit.stderr_slope = std::sqrt(s2 / sxx);
    fit.stderr_intercept = std::sqrt(s2 * (1.0 / static_cast<double>(n) + mx * mx / sxx));
  }
  return fit;
}

FitResult loglog_fit(std::span<const double> x, std::span<const double> y, Window window,
                     std::size_t min_points) {
  if (x.size() != y.size()) throw DegenerateWindow("loglog fit: x and y differ in length");
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] < window.lo || x[i] > window.hi) continue;
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) {
      throw DegenerateWindow("loglog fit: non-positive point inside the window");
    }
    lx.push_back(std::log(x[i]));
    ly.push_back(std::log(y[i]));
  }
  if (lx.size() < min_points) {
    throw DegenerateWindow("loglog fit: only " + std::to_string(lx.size()) +
                           " points in window, need " + std::to_string(min_points));
  }
  FitResult fit = linear_fit(lx, ly);
  fit.window = window;
  return fit;
}

double ks_distance(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) return 1.0;
  std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  const double na = static_cast<double>(sa.size());
  const double nb = static_cast<double>(sb.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < sa.size() && j < sb.size()) {
    const double v = std::min(sa[i], sb[j]);
    while (i < sa.size() && sa[i] == v) ++i;
    while (j < sb.size() && sb[j] == v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

double ks_distance_to_cdf(std::span<const double> sample,
                          const std::function<double(double)>& cdf) {
  if (sample.empty()) return 1.0;
  std::vector<double> s(sample.begin(), sample.end());
  std::sort(s.begin(), s.end());
  const double n = static_cast<double>(s.size());
  double d = 0.0;
  std::size_t i = 0;
  while (i < s.size()) {
    std::size_t j = i;
    while (j < s.size() && s[j] == s[i]) ++j;
    const double f = cdf(s[i]);
    d = std::max(d, std::abs(f - static_cast<double>(i) / n));
    d = std::max(d, std::abs(static_cast<double>(j) / n - f));
    i = j;
  }
  return d;
}

HillResult hill_estimator(std::span<const double> sample, double top_fraction) {
  if (!(top_fraction > 0.0 && top_fraction <= 0.2)) {
    throw TooFewExceedances("hill: top_fraction must lie in (0, 0.2]");
  }
  std::vector<double> s;
  s.reserve(sample.size());
  for (double v : sample)
    if (v > 0.0) s.push_back(v);
  const auto k = static_cast<std::size_t>(std::floor(top_fraction * static_cast<double>(s.size())));
  if (k < 2) throw TooFewExceedances("hill: fewer than two exceedances");
  std::nth_element(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(s.size() - k - 1), s.end());
  const double threshold = s[s.size() - k - 1];
  double acc = 0.0;
  for (std::size_t i = s.size() - k; i < s.size(); ++i) acc += std::log(s[i] / threshold);
  if (!(acc > 0.0)) throw TooFewExceedances("hill: no spread above the threshold");
  HillResult out;
  out.exceedances = k;
  out.threshold = threshold;
  out.exponent = static_cast<double>(k) / acc;
  out.stderr_ = out.exponent / std::sqrt(static_cast<double>(k));
  return out;
}

double sorted_quantile(std::span<const double> sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

BootstrapResult bootstrap(std::span<const double> sample,
                          const std::function<double(std::span<const double>)>& statistic,
                          std::size_t resamples, std::uint64_t seed, double coverage) {
  BootstrapResult out;
  out.estimate = statistic(sample);
  if (sample.empty() || resamples < 2) return out;
  std::vector<double> stats;
  stats.reserve(resamples);
  std::vector<double> buf(sample.size());
  for (std::size_t b = 0; b < resamples; ++b) {
    RngStream rng(seed, b);
    for (auto& v : buf) v = sample[rng.below(sample.size())];
    stats.push_back(statistic(buf));
  }
  const MeanEstimate m = mean_estimate(stats);
  out.stderr_ = m.sd;
  std::sort(stats.begin(), stats.end());
  const double tail = 0.5 * (1.0 - coverage);
  out.ci_lo = sorted_quantile(stats, tail);
  out.ci_hi = sorted_quantile(stats, 1.0 - tail);
  return out;
}

}  // namespace rwtree

#include "rwtree/limits.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "rwtree/arena.hpp"
#include "rwtree/cascade.hpp"
#include "rwtree/errors.hpp"
#include "rwtree/walk.hpp"

namespace rwtree {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::uint64_t kStableTag = 0x53544142;  // "STAB"
constexpr std::uint64_t kLilTag = 0x4C494C;       // "LIL"

void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
}

}  // namespace

double stable_draw(double alpha, RngStream& rng) {
  const double u = std::numbers::pi * rng.uniform();
  const double e = rng.exponential();
  // log of sin(au) / sin(u)^{1/a} * (sin((1-a)u) / e)^{(1-a)/a}
  const double log_s = std::log(std::sin(alpha * u)) - std::log(std::sin(u)) / alpha +
                       (1.0 - alpha) / alpha * (std::log(std::sin((1.0 - alpha) * u)) - std::log(e));
  return std::exp(log_s);
}

std::vector<double> sample_stable(double alpha, std::size_t count, RngStream& rng) {
  check_alpha(alpha);
  std::vector<double> out(count);
  for (double& s : out) {
    do {
      s = stable_draw(alpha, rng);
    } while (!(s > 0.0) || !std::isfinite(s));  // under/overflow at the extreme u only
  }
  return out;
}

LaplaceCheck stable_laplace_check(std::span<const double> samples, double alpha, double lambda,
                                  double scale) {
  check_alpha(alpha);
  std::vector<double> v(samples.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::exp(-lambda * scale * samples[i]);
  const MeanEstimate m = mean_estimate(v);
  LaplaceCheck c;
  c.lambda = lambda;
  c.estimate = m.mean;
  c.stderr_ = m.stderr_;
  c.expected = std::exp(-std::pow(scale, alpha) * std::pow(lambda, alpha));
  c.z = m.stderr_ > 0.0 ? (m.mean - c.expected) / m.stderr_ : 0.0;
  c.pass = std::abs(m.mean - c.expected) <= 3.0 * m.stderr_;
  return c;
}

BootstrapResult stable_negative_moment(double alpha, std::size_t count, std::uint64_t seed,
                                       std::size_t resamples) {
  RngStream rng(seed, kStableTag);
  std::vector<double> s = sample_stable(alpha, count, rng);
  for (double& x : s) x = std::pow(x, -alpha);
  auto mean = [](std::span<const double> xs) {
    CompensatedSum t;
    for (double x : xs) t.add(x);
    return t.value() / static_cast<double>(xs.size());
  };
  return bootstrap(s, mean, resamples, combine_keys(seed, kStableTag));
}

double RateFunction::operator()(double n) const {
  const double ll = std::log(std::log(n));
  switch (regime) {
    case Regime::KappaLt2:
      return std::pow(n, 1.0 / kappa) * std::pow(ll, 1.0 - 1.0 / kappa);
    case Regime::KappaEq2:
      return std::sqrt(n * std::log(n) * ll);
    case Regime::KappaGt2:
      return std::sqrt(n * ll);
  }
  return kNaN;
}

std::string RateFunction::formula() const {
  switch (regime) {
    case Regime::KappaLt2:
      return "n^(1/k) (log log n)^(1-1/k)";
    case Regime::KappaEq2:
      return "n^(1/2) (log n)^(1/2) (log log n)^(1/2)";
    case Regime::KappaGt2:
      return "n^(1/2) (log log n)^(1/2)";
  }
  return "";
}

double c1_constant(double c_m, double kappa) {
  if (!(kappa > 1.0 && kappa < 2.0)) throw RegimeMismatch("c1 is defined for kappa in (1, 2)");
  if (!(c_m > 0.0)) throw MissingTailConstant("c1 needs a positive tail constant");
  return std::pow(2.0, 1.0 / kappa) *
         std::pow(c_m * kappa * beta_function(2.0 - kappa, kappa - 1.0), -1.0 / kappa) /
         std::tgamma(1.0 - 1.0 / kappa);
}

LimitPrediction predict_limits(const EnvironmentSpec& spec, std::optional<double> c_m_hat,
                               double m_inf_hat, double omega_root, std::uint64_t seed,
                               std::size_t stable_samples) {
  if (!(m_inf_hat > 0.0) || !(omega_root > 0.0 && omega_root < 1.0)) {
    throw std::invalid_argument("M_inf and omega(root, parent) must be positive");
  }
  LimitPrediction p;
  p.kappa = kappa(spec);
  p.regime = regime_for(p.kappa);
  p.rate = RateFunction{p.regime, p.kappa};
  p.omega_root = omega_root;
  p.m_inf = m_inf_hat;
  p.quenched_prefactor = 1.0 / (omega_root * m_inf_hat);
  p.c1 = p.c2 = p.c3 = p.c4 = p.c5 = kNaN;
  p.c_m = kNaN;
  p.stable_moment = p.stable_moment_stderr = kNaN;
  if (p.regime != Regime::KappaGt2) {
    if (!c_m_hat || !(*c_m_hat > 0.0)) {
      throw MissingTailConstant("kappa <= 2 needs the tail constant c_M of M_inf");
    }
    p.c_m = *c_m_hat;
  }
  switch (p.regime) {
    case Regime::KappaLt2: {
      if (!(p.kappa > 1.0)) throw InvalidRegime("kappa must exceed 1");
      p.alpha = 1.0 / p.kappa;
      p.c1 = c1_constant(p.c_m, p.kappa);
      p.c4 = c4_constant(p.c_m, p.kappa);
      const BootstrapResult m = stable_negative_moment(p.alpha, stable_samples, seed);
      p.stable_moment = m.estimate;
      p.stable_moment_stderr = m.stderr_;
      break;
    }
    case Regime::KappaEq2:
      p.alpha = 0.5;
      p.c2 = 1.0 / std::sqrt(std::numbers::pi * p.c_m);
      break;
    case Regime::KappaGt2:
      p.alpha = 0.5;
      p.c5 = c5_constant(spec);
      p.c3 = std::sqrt(2.0 / std::numbers::pi) * p.c5;
      break;
  }
  return p;
}

double LimitPrediction::survival(double n) const {
  const double w = omega_root * m_inf;
  switch (regime) {
    case Regime::KappaLt2:
      return w * c1 * std::pow(n, -1.0 / kappa);
    case Regime::KappaEq2:
      return w * c2 / std::sqrt(n * std::log(n));
    case Regime::KappaGt2:
      return w * c3 / std::sqrt(n);
  }
  return kNaN;
}

double LimitPrediction::local_time_scale(double n) const {
  switch (regime) {
    case Regime::KappaLt2:
      return std::pow(n, 1.0 / kappa);
    case Regime::KappaEq2:
      return std::sqrt(n * std::log(n));
    case Regime::KappaGt2:
      return std::sqrt(n);
  }
  return kNaN;
}

double LimitPrediction::local_time_constant() const {
  const double sqrt_pi = std::sqrt(std::numbers::pi);
  switch (regime) {
    case Regime::KappaLt2:
      return quenched_prefactor / (c1 * std::tgamma(1.0 - 1.0 / kappa));
    case Regime::KappaEq2:
      return quenched_prefactor * std::numbers::sqrt2 / (c2 * sqrt_pi);
    case Regime::KappaGt2:
      return quenched_prefactor * std::numbers::sqrt2 / (c3 * sqrt_pi);
  }
  return kNaN;
}

double LimitPrediction::local_probability(double n) const {
  switch (regime) {
    case Regime::KappaLt2:
      return quenched_prefactor * 2.0 * stable_moment /
             (c1 * kappa * std::tgamma(1.0 - 1.0 / kappa)) * std::pow(n, 1.0 / kappa - 1.0);
    case Regime::KappaEq2:
      return quenched_prefactor * 2.0 / (std::numbers::pi * c2) * std::sqrt(std::log(n) / n);
    case Regime::KappaGt2:
      return quenched_prefactor * 2.0 / (std::numbers::pi * c3) / std::sqrt(n);
  }
  return kNaN;
}

KsReport corollary12_check(std::span<const double> local_times, const LimitPrediction& prediction,
                           std::uint64_t n, std::uint64_t seed, std::size_t predicted_samples,
                           std::size_t curve_points) {
  if (local_times.empty()) throw std::invalid_argument("no local times");
  KsReport r;
  r.n = n;
  r.scale = prediction.local_time_scale(static_cast<double>(n));
  r.constant = prediction.local_time_constant();
  r.sample_size = local_times.size();
  std::vector<double> x(local_times.begin(), local_times.end());
  for (double& v : x) v /= r.scale;
  std::sort(x.begin(), x.end());

  std::vector<double> predicted;
  const double k = r.constant;
  std::function<double(double)> cdf;
  if (prediction.regime == Regime::KappaLt2) {
    r.method = "two-sample KS against C S^(-alpha)";
    RngStream rng(seed, kStableTag + 1);
    predicted = sample_stable(prediction.alpha, predicted_samples, rng);
    for (double& s : predicted) s = k * std::pow(s, -prediction.alpha);
    std::sort(predicted.begin(), predicted.end());
    r.statistic = ks_distance(x, predicted);
    cdf = [&predicted](double z) {
      const auto it = std::upper_bound(predicted.begin(), predicted.end(), z);
      return static_cast<double>(it - predicted.begin()) / static_cast<double>(predicted.size());
    };
  } else {
    r.method = "one-sample KS against C |N|";
    cdf = [k](double z) { return z <= 0.0 ? 0.0 : std::erf(z / (k * std::numbers::sqrt2)); };
    r.statistic = ks_distance_to_cdf(x, cdf);
  }

  const double hi = sorted_quantile(x, 0.995);
  for (std::size_t i = 0; i < curve_points && hi > 0.0; ++i) {
    const double z = hi * static_cast<double>(i) / static_cast<double>(curve_points - 1);
    const auto it = std::upper_bound(x.begin(), x.end(), z);
    r.curve.push_back({z, static_cast<double>(it - x.begin()) / static_cast<double>(x.size()),
                       cdf(z)});
  }
  return r;
}

LocalProbReport corollary14_check(std::span<const std::uint64_t> times,
                                  std::span<const double> probs, std::span<const double> stderrs,
                                  const LimitPrediction& prediction, Window window) {
  if (times.size() != probs.size() || probs.size() != stderrs.size()) {
    throw std::invalid_argument("times, probabilities and errors differ in length");
  }
  LocalProbReport r;
  switch (prediction.regime) {
    case Regime::KappaLt2:
      r.expected_slope = 1.0 / prediction.kappa - 1.0;
      break;
    default:
      r.expected_slope = -0.5;
  }
  std::vector<double> x(times.size());
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (times[i] % 2 != 0) throw std::invalid_argument("local probabilities need even times");
    x[i] = static_cast<double>(times[i]);
    r.predicted.push_back(prediction.local_probability(x[i]));
  }
  r.fit = loglog_fit(x, probs, window, 3);

  CompensatedSum wsum, wr;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] < window.lo || x[i] > window.hi) continue;
    const double ratio = probs[i] / r.predicted[i];
    const double se = stderrs[i] / r.predicted[i];
    if (!(se > 0.0)) continue;
    wsum.add(1.0 / (se * se));
    wr.add(ratio / (se * se));
  }
  if (wsum.value() > 0.0) {
    r.prefactor_ratio = wr.value() / wsum.value();
    r.prefactor_ratio_stderr = 1.0 / std::sqrt(wsum.value());
  } else {
    r.prefactor_ratio = r.prefactor_ratio_stderr = kNaN;
  }

  for (std::size_t i = 0; i + 1 < x.size(); ++i) {
    if (probs[i + 1] > probs[i] + 2.0 * std::hypot(stderrs[i], stderrs[i + 1])) {
      ++r.monotone_violations;
    }
  }
  r.monotone_ok = r.monotone_violations == 0;
  return r;
}

LilTrace lil_trace(const EnvironmentSpec& spec, std::uint64_t env_seed, const RateFunction& rate,
                   const std::vector<std::uint64_t>& checkpoints, std::uint64_t walk_seed) {
  if (!std::is_sorted(checkpoints.begin(), checkpoints.end())) {
    throw std::invalid_argument("checkpoints must be sorted");
  }
  LilTrace out;
  if (checkpoints.empty()) return out;
  TreeArena arena(spec, env_seed);
  RngStream rng(walk_seed, kLilTag);
  NodeId pos = kRoot;
  std::uint64_t local = 0;
  double best = 0.0;
  std::size_t next = 0;
  for (std::uint64_t t = 1; next < checkpoints.size(); ++t) {
    pos = step(arena, pos, rng);
    if (pos == kRoot) ++local;
    if (t >= 16) best = std::max(best, static_cast<double>(local) / rate(static_cast<double>(t)));
    while (next < checkpoints.size() && checkpoints[next] == t) {
      out.times.push_back(t);
      out.running_max.push_back(best);
      ++next;
    }
    if (next < checkpoints.size() && checkpoints[next] < t) ++next;  // checkpoint 0
  }
  return out;
}

}  // namespace rwtree

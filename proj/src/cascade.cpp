#include "rwtree/cascade.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "rwtree/errors.hpp"
#include "rwtree/parallel.hpp"

namespace rwtree {

std::string to_string(CascadeTarget target) {
  return target == CascadeTarget::BEps ? "b-eps" : "m-inf";
}

PopulationPool PopulationPool::initial(CascadeTarget target, double epsilon, std::size_t size) {
  if (size == 0) throw std::invalid_argument("pool size must be positive");
  PopulationPool p;
  p.target = target;
  p.epsilon = epsilon;
  p.samples.assign(size, target == CascadeTarget::BEps ? epsilon : 1.0);
  return p;
}

namespace {

constexpr std::uint64_t kPoolTag = 0x504F4F4C;  // "POOL"

struct SlotDraw {
  const Atom* atom;
  std::size_t idx[64];
};

inline std::uint64_t step_key(std::uint64_t seed, std::size_t iteration) {
  return combine_keys(combine_keys(seed, kPoolTag), iteration);
}

// All randomness of slot i at the step with key `key`.
inline void draw_slot(const EnvironmentSpec& spec, std::size_t pool_size, std::uint64_t key,
                      std::size_t slot, SlotDraw& d) {
  RngStream rng(key, slot);
  d.atom = &spec.atoms()[spec.sample_atom(rng)];
  for (std::size_t j = 0; j < d.atom->nu(); ++j) d.idx[j] = rng.below(pool_size);
}

inline double g_map(CascadeTarget target, double eps, double y) {
  return target == CascadeTarget::BEps ? (eps + y) / (1.0 + y) : y;
}

void check_spec_for_pool(const EnvironmentSpec& spec) {
  if (spec.max_nu() > 64) throw InvalidSpec("population dynamics supports nu <= 64");
}

// Mean relaxation rate per step near the fixpoint. For B the scale mode
// contracts by about 1 - 2 eps / E B; for M by E sum A^p, p between 1 and
// min(kappa, 2).
double relaxation_rate(const EnvironmentSpec& spec, CascadeTarget target, double eps,
                       double mean) {
  if (target == CascadeTarget::BEps) return std::min(1.0, 2.0 * eps / std::max(mean, eps));
  const double k = kappa(spec);
  const double p = 0.5 * (1.0 + std::min(k, 2.0));
  return std::min(1.0, -psi(spec, p));
}

// Mean of the monitored statistic and the standard error of a one-step
// change in it (two independent pools).
struct Monitor {
  double mean = 0.0;
  double step_noise = 0.0;
};

Monitor monitor(const PopulationPool& pool) {
  CompensatedSum s, s2;
  for (double x : pool.samples) {
    const double v = pool.target == CascadeTarget::BEps ? x : std::log1p(x);
    s.add(v);
    s2.add(v * v);
  }
  const double n = static_cast<double>(pool.samples.size());
  const double m = s.value() / n;
  const double var = std::max(0.0, s2.value() / n - m * m);
  return {m, std::sqrt(2.0 * var / n)};
}

MeanEstimate batch_means(const std::vector<double>& series, std::size_t batches) {
  MeanEstimate out;
  out.count = series.size();
  if (series.empty()) return out;
  batches = std::min(batches, series.size());
  const std::size_t per = series.size() / batches;
  std::vector<double> means;
  for (std::size_t b = 0; b < batches; ++b) {
    CompensatedSum s;
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) s.add(series[i]);
    means.push_back(s.value() / static_cast<double>(per));
  }
  const MeanEstimate m = mean_estimate(means);
  out.mean = m.mean;
  out.stderr_ = m.stderr_;
  out.sd = m.sd;
  return out;
}

std::vector<double> identity_terms(const PopulationPool& pool) {
  std::vector<double> d(pool.samples.size());
  const double eps = pool.epsilon;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double b = pool.samples[i];
    d[i] = (b * b - eps) / (1.0 + b);
  }
  return d;
}

}  // namespace

void population_step(PopulationPool& pool, const EnvironmentSpec& spec, std::uint64_t seed,
                     const StepOptions& options) {
  check_spec_for_pool(spec);
  const std::size_t n = pool.samples.size();
  const std::vector<double>& old = pool.samples;
  std::vector<double> fresh(n);
  const std::size_t chunk = std::max<std::size_t>(options.chunk_size, 1);
  std::vector<double> chunk_max((n + chunk - 1) / chunk, 0.0);
  const double eps = pool.epsilon;
  const CascadeTarget target = pool.target;
  const std::size_t iteration = pool.iterations_done;
  for_each_chunk(n, chunk, options.workers,
                 [&](std::size_t c, std::size_t begin, std::size_t end, unsigned) {
                   SlotDraw d;
                   double mx = 0.0;
                   const std::uint64_t key = step_key(seed, iteration);
                   for (std::size_t i = begin; i < end; ++i) {
                     draw_slot(spec, n, key, i, d);
                     double s = 0.0, sum_a = 0.0;
                     for (std::size_t j = 0; j < d.atom->nu(); ++j) {
                       const double a = d.atom->marks[j];
                       s += a * g_map(target, eps, old[d.idx[j]]);
                       sum_a += a;
                     }
                     fresh[i] = s;
                     mx = std::max(mx, sum_a);
                   }
                   chunk_max[c] = mx;
                 });
  for (double m : chunk_max) pool.max_mark_sum = std::max(pool.max_mark_sum, m);
  if (target == CascadeTarget::MInf && options.renormalize) {
    CompensatedSum s;
    for (double x : fresh) s.add(x);
    const double mean = s.value() / static_cast<double>(n);
    if (mean > 0.0) {
      for (double& x : fresh) x /= mean;
    }
  }
  pool.samples = std::move(fresh);
  ++pool.iterations_done;
}

FixpointResult run_to_fixpoint(const EnvironmentSpec& spec, CascadeTarget target, double epsilon,
                               const CascadeOptions& options, const PopulationPool* warm_start) {
  if (target == CascadeTarget::BEps && !(epsilon > 0.0 && epsilon <= 1.0)) {
    throw std::invalid_argument("epsilon must lie in (0, 1]");
  }
  FixpointResult out;
  if (warm_start != nullptr && warm_start->target == target &&
      warm_start->samples.size() == options.pool_size) {
    out.pool = *warm_start;
    out.pool.epsilon = epsilon;
  } else {
    out.pool = PopulationPool::initial(target, epsilon, options.pool_size);
  }
  double previous = monitor(out.pool).mean;
  std::size_t stable = 0;
  double relax = 0.0;
  std::size_t it = 0;
  for (;;) {
    if (it == options.max_iter) {
      throw NoConvergence("population dynamics did not settle within " +
                              std::to_string(options.max_iter) + " iterations",
                          previous, out.mean_trace.size() > 1
                                        ? out.mean_trace[out.mean_trace.size() - 2]
                                        : previous);
    }
    population_step(out.pool, spec, options.seed, options.step);
    ++it;
    const Monitor mon = monitor(out.pool);
    const double m = mon.mean;
    out.mean_trace.push_back(out.pool.mean().mean);
    relax += relaxation_rate(spec, target, epsilon, out.mean_trace.back());
    // a pool with no spread is a scalar iteration: run it to rounding
    const double allowed = mon.step_noise > 0.0
                               ? std::max(options.tol * std::abs(m), 3.0 * mon.step_noise)
                               : 64.0 * std::numeric_limits<double>::epsilon() * std::abs(m);
    stable = std::abs(m - previous) <= allowed ? stable + 1 : 0;
    previous = m;
    if (stable >= options.stable_steps && relax >= options.burn_in) break;
  }
  out.converged = true;

  if (options.average_iterations == 0) {
    out.mean = out.pool.mean();
    if (target == CascadeTarget::BEps) out.identity_residual = mean_estimate(identity_terms(out.pool));
  } else {
    // The residual of a pool is its mean minus the expected mean of the next
    // pool, so over the window it sums to (first mean - last mean) plus the
    // resampling noise of each step. Its error is built from those two parts;
    // batch means would need batches longer than a relaxation time.
    std::vector<double> means, residuals;
    CompensatedSum noise_var, window_rate;
    double first_mean = out.pool.mean().mean;
    for (std::size_t k = 0; k < options.average_iterations; ++k) {
      if (target == CascadeTarget::BEps) {
        residuals.push_back(mean_estimate(identity_terms(out.pool)).mean);
      }
      population_step(out.pool, spec, options.seed, options.step);
      ++it;
      const MeanEstimate pm = out.pool.mean();
      means.push_back(pm.mean);
      noise_var.add(pm.stderr_ * pm.stderr_);
      out.mean_trace.push_back(means.back());
      const double rate = relaxation_rate(spec, target, epsilon, means.back());
      relax += rate;
      window_rate.add(rate);
    }
    const double T = static_cast<double>(means.size());
    means.insert(means.begin(), first_mean);
    const MeanEstimate spread = mean_estimate(means);
    means.erase(means.begin());
    // AR(1) inflation of the plain error with the relaxation rate as 1 - rho
    const double rate = std::clamp(window_rate.value() / T, 1e-12, 1.0);
    out.mean = batch_means(means, 20);
    out.mean.stderr_ =
        std::max(out.mean.stderr_, spread.sd * std::sqrt((2.0 - rate) / (rate * T)));
    if (target == CascadeTarget::BEps) {
      out.identity_residual = mean_estimate(residuals);
      out.identity_residual.stderr_ =
          std::sqrt(noise_var.value() + 2.0 * spread.sd * spread.sd) / T;
    }
  }
  out.iterations = it;
  out.relaxation_times = relax;
  return out;
}

IdentityCheck identity_check(const PopulationPool& pool) {
  if (pool.target != CascadeTarget::BEps) throw std::invalid_argument("identity needs a B pool");
  const double eps = pool.epsilon;
  std::vector<double> d = identity_terms(pool);
  CompensatedSum l, r;
  for (double b : pool.samples) {
    l.add(b * b / (1.0 + b));
    r.add(eps / (1.0 + b));
  }
  const double n = static_cast<double>(pool.samples.size());
  IdentityCheck c;
  c.lhs = l.value() / n;
  c.rhs = r.value() / n;
  const MeanEstimate m = mean_estimate(d);
  c.difference = m.mean;
  c.stderr_ = m.stderr_;
  // A pool that has collapsed to a point has zero spread; leave room for
  // rounding in that case.
  const double rounding = 64.0 * std::numeric_limits<double>::epsilon() * (c.lhs + c.rhs);
  c.tolerance = 3.0 * c.stderr_ + rounding;
  c.pass = std::abs(c.difference) <= c.tolerance;
  return c;
}

AsymptoticsTable mean_b_asymptotics(const EnvironmentSpec& spec, std::vector<double> eps_grid,
                                    const CascadeOptions& options, std::optional<double> c_m_hat,
                                    double prefactor_max_eps) {
  if (eps_grid.size() < 2) throw std::invalid_argument("need at least two epsilon values");
  std::sort(eps_grid.begin(), eps_grid.end(), std::greater<>());
  AsymptoticsTable t;
  t.kappa = kappa(spec);
  t.regime = regime_for(t.kappa);
  const double c5 = c5_constant(spec);
  PopulationPool warm;
  bool have_warm = false;
  for (double eps : eps_grid) {
    FixpointResult r = run_to_fixpoint(spec, CascadeTarget::BEps, eps, options,
                                       have_warm ? &warm : nullptr);
    AsymptoticsRow row;
    row.epsilon = eps;
    row.mean = r.mean.mean;
    row.stderr_ = r.mean.stderr_;
    row.iterations = r.iterations;
    row.bound_ok = row.mean <= 2.0 * std::sqrt(eps);
    switch (t.regime) {
      case Regime::KappaGt2:
        row.predicted = c5 * std::sqrt(eps);
        break;
      case Regime::KappaLt2:
        row.predicted = c_m_hat ? c4_constant(*c_m_hat, t.kappa) * std::pow(eps, 1.0 / t.kappa)
                                : std::numeric_limits<double>::quiet_NaN();
        break;
      case Regime::KappaEq2:
        row.predicted = c_m_hat ? std::sqrt(eps / std::log(1.0 / eps) / (2.0 * *c_m_hat))
                                : std::numeric_limits<double>::quiet_NaN();
        break;
    }
    t.rows.push_back(row);
    t.log_corrected.push_back(row.mean * std::sqrt(std::log(1.0 / eps) / eps));
    warm = std::move(r.pool);
    have_warm = true;
  }
  std::vector<double> xs, ys;
  for (const auto& row : t.rows) {
    xs.push_back(row.epsilon);
    ys.push_back(row.mean);
  }
  t.fit = loglog_fit(xs, ys, {}, 2);
  const double exponent = t.regime == Regime::KappaLt2 ? 1.0 / t.kappa : 0.5;
  std::vector<double> logs;
  for (const auto& row : t.rows) {
    if (row.epsilon <= prefactor_max_eps * (1.0 + 1e-12)) {
      logs.push_back(std::log(row.mean) - exponent * std::log(row.epsilon));
    }
  }
  if (logs.empty()) {
    logs.push_back(std::log(t.rows.back().mean) - exponent * std::log(t.rows.back().epsilon));
  }
  const MeanEstimate lm = mean_estimate(logs);
  t.prefactor = std::exp(lm.mean);
  t.prefactor_stderr = t.prefactor * lm.stderr_;
  return t;
}

double beta_function(double a, double b) {
  return std::exp(std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b));
}

double c4_constant(double c_m, double kappa) {
  if (!(kappa > 1.0 && kappa < 2.0)) throw RegimeMismatch("c4 is defined for kappa in (1, 2)");
  if (!(c_m > 0.0)) throw MissingTailConstant("c4 needs a positive tail constant");
  return std::pow(c_m * kappa * beta_function(2.0 - kappa, kappa - 1.0), -1.0 / kappa);
}

TailFit estimate_tail_constant(std::span<const double> pool, double kappa,
                               std::size_t bootstrap_resamples, std::uint64_t seed) {
  if (!std::isfinite(kappa)) {
    throw DegenerateTail("kappa is infinite: the tail is lighter than any power");
  }
  std::vector<double> survivors;
  survivors.reserve(pool.size());
  for (double x : pool) {
    if (x > 0.0) survivors.push_back(x);
  }
  if (survivors.size() < 2000) throw DegenerateTail("too few surviving samples for a tail fit");
  const double total = static_cast<double>(pool.size());

  // Tail points (x_(k), #{> x_(k)} / total) in the window; thinned to ~2000.
  auto tail_points = [&](std::span<const double> sorted, std::vector<double>& xs,
                         std::vector<double>& ps) {
    xs.clear();
    ps.clear();
    const double lo = sorted_quantile(sorted, 0.95);
    const double hi = sorted_quantile(sorted, 0.999);
    if (!(hi > lo)) throw DegenerateTail("no spread in the upper tail");
    const auto first = static_cast<std::size_t>(
        std::lower_bound(sorted.begin(), sorted.end(), lo) - sorted.begin());
    const auto last = static_cast<std::size_t>(
        std::upper_bound(sorted.begin(), sorted.end(), hi) - sorted.begin());
    const std::size_t stride = std::max<std::size_t>(1, (last - first) / 2000);
    for (std::size_t k = first; k < last; k += stride) {
      const auto above = static_cast<double>(sorted.size() - k - 1);
      if (above <= 0.0) break;
      xs.push_back(sorted[k]);
      ps.push_back(above / total);
    }
    return Window{lo, hi};
  };

  std::sort(survivors.begin(), survivors.end());
  TailFit fit;
  fit.survivors = survivors.size();
  std::vector<double> xs, ps;
  fit.fit_window = tail_points(survivors, xs, ps);
  const FitResult free = loglog_fit(xs, ps, fit.fit_window);
  fit.exponent_hat = -free.slope;
  fit.exponent_stderr = free.stderr_slope;

  auto fixed_constant = [&](std::span<const double> sorted) {
    std::vector<double> bx, bp;
    tail_points(sorted, bx, bp);
    CompensatedSum s;
    for (std::size_t i = 0; i < bx.size(); ++i) s.add(std::log(bp[i]) + kappa * std::log(bx[i]));
    return std::exp(s.value() / static_cast<double>(bx.size()));
  };
  fit.constant_hat = fixed_constant(survivors);
  if (bootstrap_resamples > 0) {
    // resample the surviving sample, keep the pool denominator
    const BootstrapResult b = bootstrap(
        survivors,
        [&](std::span<const double> s) {
          std::vector<double> v(s.begin(), s.end());
          std::sort(v.begin(), v.end());
          return fixed_constant(v);
        },
        bootstrap_resamples, seed);
    fit.constant_stderr = b.stderr_;
    fit.constant_ci_lo = b.ci_lo;
    fit.constant_ci_hi = b.ci_hi;
  }
  const HillResult h = hill_estimator(survivors, 0.01);
  fit.hill_exponent = h.exponent;
  fit.hill_stderr = h.stderr_;
  return fit;
}

ComparisonResult convex_comparison_check(std::span<const double> xi, double a, double epsilon) {
  if (xi.empty()) throw std::invalid_argument("empty sample");
  if (!(a > 0.0)) throw std::invalid_argument("a must be positive");
  const std::size_t n = xi.size();
  CompensatedSum sx, sy;
  for (double x : xi) {
    if (x < 0.0) throw std::invalid_argument("xi must be nonnegative");
    sx.add(x);
    sy.add((epsilon + x) / (1.0 + x));
  }
  const double mx = sx.value() / static_cast<double>(n);
  const double my = sy.value() / static_cast<double>(n);
  if (!(mx > 0.0)) throw std::invalid_argument("xi has zero mean");
  std::vector<double> diff(n);
  CompensatedSum l, r;
  for (std::size_t i = 0; i < n; ++i) {
    const double lv = phi_a(a, (epsilon + xi[i]) / (1.0 + xi[i]) / my);
    const double rv = phi_a(a, xi[i] / mx);
    l.add(lv);
    r.add(rv);
    diff[i] = lv - rv;
  }
  ComparisonResult c;
  c.lhs = l.value() / static_cast<double>(n);
  c.rhs = r.value() / static_cast<double>(n);
  c.stderr_ = mean_estimate(diff).stderr_;
  const double rounding = 64.0 * std::numeric_limits<double>::epsilon() * (c.lhs + c.rhs);
  c.pass = c.lhs <= c.rhs + 3.0 * c.stderr_ + rounding;
  return c;
}

ComparisonResult b_versus_m_comparison(std::span<const double> b_pool,
                                       std::span<const double> m_pool, double a) {
  if (b_pool.empty() || m_pool.empty()) throw std::invalid_argument("empty pool");
  CompensatedSum sb;
  for (double b : b_pool) sb.add(b);
  const double mb = sb.value() / static_cast<double>(b_pool.size());
  std::vector<double> l(b_pool.size()), r(m_pool.size());
  for (std::size_t i = 0; i < l.size(); ++i) l[i] = phi_a(a, b_pool[i] / mb);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = phi_a(a, m_pool[i]);
  const MeanEstimate el = mean_estimate(l), er = mean_estimate(r);
  ComparisonResult c;
  c.lhs = el.mean;
  c.rhs = er.mean;
  c.stderr_ = std::hypot(el.stderr_, er.stderr_);
  c.pass = c.lhs <= c.rhs + 3.0 * c.stderr_;
  return c;
}

AsympMTable asymp_M_check(std::span<const double> m_pool, const std::vector<double>& a_grid,
                          double kappa, const EnvironmentSpec& spec) {
  if (m_pool.empty()) throw std::invalid_argument("empty pool");
  AsympMTable t;
  t.regime = regime_for(kappa);
  std::vector<double> v(m_pool.size());
  for (double a : a_grid) {
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = m_pool[i] * m_pool[i] / (a + m_pool[i]);
    const MeanEstimate m = mean_estimate(v);
    t.rows.push_back({a, m.mean, m.stderr_, a * m.mean});
  }
  if (t.regime == Regime::KappaGt2) {
    t.second_moment = martingale_second_moment(spec);
    t.expected_slope = -1.0;
  } else {
    const double lo = *std::min_element(m_pool.begin(), m_pool.end());
    const double hi = *std::max_element(m_pool.begin(), m_pool.end());
    if (!(hi > lo)) throw DegenerateTail("M pool has no spread");
    t.expected_slope = 1.0 - kappa;
  }
  std::vector<double> xs, ys;
  for (const auto& row : t.rows) {
    xs.push_back(row.a);
    ys.push_back(row.value);
  }
  t.fit = loglog_fit(xs, ys, {}, 2);
  return t;
}

ContractionTrace contraction_diagnostic(const EnvironmentSpec& spec, double epsilon,
                                        std::size_t pool_size, std::size_t steps,
                                        std::uint64_t seed) {
  check_spec_for_pool(spec);
  ContractionTrace out;
  std::vector<double> x(pool_size, epsilon), y(pool_size), nx(pool_size), ny(pool_size);
  // second pool starts at the mark sums, i.e. the top of the support
  {
    SlotDraw d;
    for (std::size_t i = 0; i < pool_size; ++i) {
      draw_slot(spec, pool_size, step_key(combine_keys(seed, 1), 0), i, d);
      double s = 0.0;
      for (double a : d.atom->marks) s += a;
      y[i] = s;
    }
  }
  for (std::size_t t = 0; t < steps; ++t) {
    CompensatedSum old_dist, resampled, new_dist;
    for (std::size_t i = 0; i < pool_size; ++i) old_dist.add(std::abs(x[i] - y[i]));
    SlotDraw d;
    const std::uint64_t key = step_key(seed, t);
    for (std::size_t i = 0; i < pool_size; ++i) {
      draw_slot(spec, pool_size, key, i, d);
      double sx = 0.0, sy = 0.0, sd = 0.0;
      for (std::size_t j = 0; j < d.atom->nu(); ++j) {
        const double a = d.atom->marks[j];
        const std::size_t k = d.idx[j];
        sx += a * g_map(CascadeTarget::BEps, epsilon, x[k]);
        sy += a * g_map(CascadeTarget::BEps, epsilon, y[k]);
        sd += a * std::abs(x[k] - y[k]);
      }
      nx[i] = sx;
      ny[i] = sy;
      resampled.add(sd);
      new_dist.add(std::abs(sx - sy));
    }
    std::swap(x, nx);
    std::swap(y, ny);
    if (!(resampled.value() > 0.0) || !(old_dist.value() > 0.0)) break;
    out.pathwise.push_back(new_dist.value() / resampled.value());
    out.naive.push_back(new_dist.value() / old_dist.value());
    out.worst_pathwise = std::max(out.worst_pathwise, out.pathwise.back());
  }
  return out;
}

}  // namespace rwtree

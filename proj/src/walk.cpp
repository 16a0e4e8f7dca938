#include "rwtree/walk.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "rwtree/parallel.hpp"
#include "rwtree/stats.hpp"

namespace rwtree {

namespace {

constexpr std::uint64_t kWalkTag = 0x57414C4B;  // "WALK"

RngStream walk_stream(std::uint64_t walk_seed, std::size_t replica) {
  return RngStream(walk_seed, combine_keys(kWalkTag, replica));
}

// Worker-local arenas. Nodes are pure functions of their path, so dropping
// the cache between replicas never changes the environment.
void trim(TreeArena& arena) {
  if (arena.size() > arena.capacity() / 2) arena.reset();
}

void check_parity(std::uint64_t t) {
  if (t % 2 != 0) throw std::logic_error("walk visited the root at an odd time");
}

}  // namespace

WalkRecord run_return_times(TreeArena& arena, std::size_t k_returns, std::uint64_t step_budget,
                            RngStream& rng) {
  if (k_returns == 0) throw std::invalid_argument("k_returns must be at least 1");
  WalkRecord rec;
  NodeId pos = kRoot;
  std::int32_t depth = 0;
  while (rec.return_times.size() < k_returns) {
    if (rec.steps == step_budget) {
      throw BudgetExhausted("step budget exhausted after " + std::to_string(rec.steps) +
                                " steps with " + std::to_string(rec.return_times.size()) +
                                " returns",
                            std::move(rec));
    }
    pos = step(arena, pos, rng);
    ++rec.steps;
    depth = pos == kRootParent ? -1 : arena.depth(pos);
    rec.max_depth = std::max(rec.max_depth, depth);
    if (pos == kRoot) {
      check_parity(rec.steps);
      ++rec.root_local_time;
      ++rec.root_visits_even;
      rec.return_times.push_back(rec.steps);
    }
  }
  return rec;
}

SurvivalCurve survival_curve(const EnvironmentSpec& spec, std::uint64_t env_seed,
                             const std::vector<std::uint64_t>& horizons, std::size_t replicas,
                             std::uint64_t walk_seed, const WalkOptions& options) {
  if (!std::is_sorted(horizons.begin(), horizons.end())) {
    throw std::invalid_argument("horizons must be sorted");
  }
  if (horizons.empty()) throw std::invalid_argument("no horizons");
  if (horizons.back() > kMaxHorizon) throw std::invalid_argument("horizon above 1e5");
  const std::uint64_t cap = horizons.back();

  SurvivalCurve out;
  out.horizons = horizons;
  out.replicas = replicas;
  if (options.keep_first_returns) out.first_returns.assign(replicas, 0);

  const std::size_t chunk = std::max<std::size_t>(options.chunk_size, 1);
  const std::size_t chunks = (replicas + chunk - 1) / chunk;
  // survivors[c][i] = replicas of chunk c still away from the root at horizons[i]
  std::vector<std::vector<std::uint64_t>> survivors(chunks,
                                                    std::vector<std::uint64_t>(horizons.size()));
  const unsigned workers = std::max(1u, options.workers);
  std::vector<TreeArena> arenas;
  arenas.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) arenas.emplace_back(spec, env_seed, options.arena_capacity);

  for_each_chunk(replicas, chunk, workers, [&](std::size_t c, std::size_t begin, std::size_t end,
                                               unsigned worker) {
    TreeArena& arena = arenas[worker];
    std::vector<std::uint64_t> first(end - begin);
    for (std::size_t r = begin; r < end; ++r) {
      if (options.quenched) {
        trim(arena);
      } else {
        arena.reseed(combine_keys(env_seed, r));
      }
      RngStream rng = walk_stream(walk_seed, r);
      NodeId pos = kRoot;
      std::uint64_t t = 0;
      do {
        pos = step(arena, pos, rng);
        ++t;
      } while (pos != kRoot && t <= cap);
      if (pos == kRoot) check_parity(t);
      first[r - begin] = t;  // t == cap + 1 without a return means censored
      if (options.keep_first_returns) out.first_returns[r] = static_cast<std::uint32_t>(t);
    }
    auto& counts = survivors[c];
    for (std::uint64_t t : first) {
      // T+ > h for every horizon h < t
      const auto it = std::lower_bound(horizons.begin(), horizons.end(), t);
      for (auto h = horizons.begin(); h != it; ++h) ++counts[static_cast<std::size_t>(h - horizons.begin())];
    }
  });

  out.survival.assign(horizons.size(), 0.0);
  out.standard_errors.assign(horizons.size(), 0.0);
  for (std::size_t i = 0; i < horizons.size(); ++i) {
    std::uint64_t total = 0;
    for (const auto& counts : survivors) total += counts[i];
    const double p = replicas ? static_cast<double>(total) / static_cast<double>(replicas) : 0.0;
    out.survival[i] = p;
    out.standard_errors[i] = binomial_stderr(p, replicas);
  }
  return out;
}

LocalTimeResult local_time_and_local_prob(const EnvironmentSpec& spec, std::uint64_t env_seed,
                                          std::uint64_t n,
                                          const std::vector<std::uint64_t>& probe_times,
                                          std::size_t replicas, std::uint64_t walk_seed,
                                          const WalkOptions& options) {
  for (std::uint64_t g : probe_times) {
    if (g % 2 != 0) throw std::invalid_argument("probe times must be even");
    if (g > n) throw std::invalid_argument("probe time beyond the walk length");
  }
  struct Probe {
    std::uint64_t at, lo, hi;
    double width;
  };
  std::vector<Probe> probes;
  for (std::uint64_t g : probe_times) {
    auto lo = static_cast<std::uint64_t>(std::ceil(0.95 * static_cast<double>(g)));
    auto hi = static_cast<std::uint64_t>(std::floor(1.05 * static_cast<double>(g)));
    hi = std::min(hi, n);
    lo += lo % 2;
    hi -= hi % 2;
    if (lo > hi) lo = hi = g;
    probes.push_back({g, lo, hi, static_cast<double>((hi - lo) / 2 + 1)});
  }
  const std::size_t np = probes.size();

  LocalTimeResult out;
  out.n = n;
  out.replicas = replicas;
  out.probe_times = probe_times;
  out.local_times.assign(replicas, 0.0);

  const std::size_t chunk = std::max<std::size_t>(options.chunk_size, 1);
  const std::size_t chunks = (replicas + chunk - 1) / chunk;
  // per chunk: sums of the point indicator, of the window average and its square
  struct Acc {
    std::vector<double> point, win, win2;
  };
  std::vector<Acc> acc(chunks, Acc{std::vector<double>(np), std::vector<double>(np),
                                   std::vector<double>(np)});
  const unsigned workers = std::max(1u, options.workers);
  std::vector<TreeArena> arenas;
  arenas.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) arenas.emplace_back(spec, env_seed, options.arena_capacity);

  for_each_chunk(replicas, chunk, workers, [&](std::size_t c, std::size_t begin, std::size_t end,
                                               unsigned worker) {
    TreeArena& arena = arenas[worker];
    std::vector<double> hits(np);
    for (std::size_t r = begin; r < end; ++r) {
      trim(arena);
      RngStream rng = walk_stream(walk_seed, r);
      std::fill(hits.begin(), hits.end(), 0.0);
      for (std::size_t i = 0; i < np; ++i) {  // X_0 = root
        if (probes[i].at == 0) acc[c].point[i] += 1.0;
        if (probes[i].lo == 0) hits[i] += 1.0;
      }
      NodeId pos = kRoot;
      std::uint64_t local = 0;
      for (std::uint64_t t = 1; t <= n; ++t) {
        pos = step(arena, pos, rng);
        if (pos != kRoot) continue;
        check_parity(t);
        ++local;
        for (std::size_t i = 0; i < np; ++i) {
          if (t == probes[i].at) acc[c].point[i] += 1.0;
          if (t >= probes[i].lo && t <= probes[i].hi) hits[i] += 1.0;
        }
      }
      out.local_times[r] = static_cast<double>(local);
      for (std::size_t i = 0; i < np; ++i) {
        const double v = hits[i] / probes[i].width;
        acc[c].win[i] += v;
        acc[c].win2[i] += v * v;
      }
    }
  });

  const double R = static_cast<double>(replicas);
  out.point_prob.assign(np, 0.0);
  out.point_stderr.assign(np, 0.0);
  out.window_prob.assign(np, 0.0);
  out.window_stderr.assign(np, 0.0);
  for (std::size_t i = 0; i < np; ++i) {
    CompensatedSum p, w, w2;
    for (const auto& a : acc) {
      p.add(a.point[i]);
      w.add(a.win[i]);
      w2.add(a.win2[i]);
    }
    const double pp = p.value() / R;
    out.point_prob[i] = pp;
    out.point_stderr[i] = binomial_stderr(pp, replicas);
    const double m = w.value() / R;
    const double var = replicas > 1 ? std::max(0.0, (w2.value() - R * m * m) / (R - 1.0)) : 0.0;
    out.window_prob[i] = m;
    out.window_stderr[i] = std::sqrt(var / R);
  }
  return out;
}

DepthChainOracle DepthChainOracle::for_spec(const EnvironmentSpec& spec) {
  if (!spec.is_homogeneous()) {
    throw InvalidSpec("the depth-chain oracle needs a single-atom spec");
  }
  double sum = 0.0;
  for (double a : spec.atoms().front().marks) sum += a;
  return DepthChainOracle{1.0 / (1.0 + sum)};
}

namespace {

// Mass over depths -1..n_max+1 stored at index depth + 1. With `kill` the
// walk is absorbed on any return to depth 0.
std::vector<double> depth_chain(double q, std::size_t n_max, bool kill) {
  const std::size_t size = n_max + 3;
  std::vector<double> cur(size, 0.0), next(size, 0.0);
  std::vector<double> out(n_max + 1, 0.0);
  cur[1] = 1.0;
  out[0] = 1.0;
  for (std::size_t t = 1; t <= n_max; ++t) {
    std::fill(next.begin(), next.end(), 0.0);
    next[1] += cur[0];  // the root's parent reflects
    const std::size_t reach = std::min(size - 1, t + 1);
    for (std::size_t i = 1; i < reach; ++i) {
      const double m = cur[i];
      if (m == 0.0) continue;
      next[i - 1] += q * m;
      next[i + 1] += (1.0 - q) * m;
    }
    if (kill) {
      next[1] = 0.0;
      CompensatedSum alive;
      for (double m : next) alive.add(m);
      out[t] = alive.value();
    } else {
      out[t] = next[1];
    }
    std::swap(cur, next);
  }
  return out;
}

}  // namespace

std::vector<double> DepthChainOracle::survival(std::size_t n_max) const {
  return depth_chain(up_probability, n_max, true);
}

std::vector<double> DepthChainOracle::return_probability(std::size_t n_max) const {
  return depth_chain(up_probability, n_max, false);
}

ExcursionEstimate excursion_laplace(const EnvironmentSpec& spec, std::uint64_t env_seed,
                                    std::size_t child_index, double lambda, std::size_t replicas,
                                    std::uint64_t horizon, std::uint64_t walk_seed) {
  TreeArena arena(spec, env_seed);
  const ChildRange ch = arena.expand(kRoot);
  if (child_index >= static_cast<std::size_t>(ch.count)) {
    throw std::invalid_argument("root has no child with that index");
  }
  const NodeId start = ch.first + static_cast<NodeId>(child_index);
  std::vector<double> values(replicas, 0.0);
  ExcursionEstimate out;
  for (std::size_t r = 0; r < replicas; ++r) {
    if (arena.size() > arena.capacity() / 2) {
      arena.reset();
      arena.expand(kRoot);  // keeps child ids stable
    }
    RngStream rng(walk_seed, combine_keys(kWalkTag + 1, r));
    NodeId pos = start;
    std::uint64_t t = 0;
    while (pos != kRoot && t <= horizon) {
      pos = step(arena, pos, rng);
      ++t;
    }
    if (pos == kRoot) {
      values[r] = std::exp(-lambda * static_cast<double>(1 + t));
    } else {
      ++out.censored;
    }
  }
  const MeanEstimate m = mean_estimate(values);
  out.mean = m.mean;
  out.stderr_ = m.stderr_;
  return out;
}

}  // namespace rwtree

// rwtree command-line front end. Exit codes: 0 pass, 1 fail, 2 config/regime error.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rwtree/arena.hpp"
#include "rwtree/cascade.hpp"
#include "rwtree/environment.hpp"
#include "rwtree/errors.hpp"
#include "rwtree/limits.hpp"
#include "rwtree/recursion.hpp"
#include "rwtree/runner.hpp"
#include "rwtree/walk.hpp"

using namespace rwtree;
using nlohmann::json;

namespace {

struct Common {
  std::string spec;
  std::uint64_t seed = 1;
  std::string out;
  unsigned workers = 1;
  std::map<std::string, double> tol;
  std::vector<std::string> params;
};

void add_common(CLI::App* cmd, Common& c, bool spec_required = true) {
  auto* opt = cmd->add_option("--spec", c.spec, "spec file (JSON)");
  if (spec_required) opt->required();
  cmd->add_option("--seed", c.seed, "walk / pool seed");
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--workers", c.workers, "worker threads");
}

// --tol.KEY=VALUE or --tol.KEY VALUE, taken out of argv before CLI11 sees it
std::map<std::string, double> take_tolerances(std::vector<std::string>& args) {
  std::map<std::string, double> tol;
  std::vector<std::string> rest;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a.rfind("--tol.", 0) != 0) {
      rest.push_back(a);
      continue;
    }
    std::string key = a.substr(6), value;
    const auto eq = key.find('=');
    if (eq != std::string::npos) {
      value = key.substr(eq + 1);
      key = key.substr(0, eq);
    } else if (i + 1 < args.size()) {
      value = args[++i];
    } else {
      throw ConfigError("missing value for " + a);
    }
    try {
      tol[key] = std::stod(value);
    } catch (const std::exception&) {
      throw ConfigError("bad tolerance value '" + value + "' for " + a);
    }
  }
  args = std::move(rest);
  return tol;
}

SpecFile load(const Common& c) { return load_spec_file(c.spec); }

void emit(const Common& c, const CsvTable& t) {
  if (c.out.empty()) {
    for (std::size_t i = 0; i < t.header.size(); ++i) std::cout << (i ? "," : "") << t.header[i];
    std::cout << '\n';
    for (const auto& row : t.rows) {
      for (std::size_t i = 0; i < row.size(); ++i) {
        std::printf("%s%.10g", i ? "," : "", row[i]);
      }
      std::printf("\n");
    }
    std::fflush(stdout);
    return;
  }
  std::filesystem::create_directories(c.out);
  write_csv(c.out + "/" + t.name + ".csv", t);
  std::cout << "wrote " << c.out << "/" << t.name << ".csv\n";
}

json parse_param_value(const std::string& v) {
  try {
    return json::parse(v);
  } catch (const json::exception&) {
    return v;
  }
}

RunConfig make_config(const Common& c) {
  RunConfig cfg;
  if (!c.spec.empty()) attach_spec(cfg, c.spec);
  cfg.seed = c.seed;
  cfg.out_dir = c.out;
  cfg.workers = c.workers;
  cfg.tolerances = c.tol;
  for (const auto& p : c.params) {
    const auto eq = p.find('=');
    if (eq == std::string::npos) throw ConfigError("--param expects KEY=VALUE, got " + p);
    cfg.params[p.substr(0, eq)] = parse_param_value(p.substr(eq + 1));
  }
  return cfg;
}

void print_report(const VerificationReport& r) {
  std::printf("%-13s %-4s %s estimate %.6g predicted %.6g (%s) %s [%.1fs]\n", r.claim_id.c_str(),
              to_string(r.status).c_str(), r.spec_label.c_str(), r.estimate, r.predicted,
              r.tolerance.c_str(), r.detail.c_str(), r.runtime_seconds);
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  Common c;
  try {
    c.tol = take_tolerances(args);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }

  CLI::App app{"random walks on marked Galton-Watson trees"};
  app.require_subcommand(1);
  int code = 0;

  // env
  auto* env = app.add_subcommand("env", "environment specs");
  env->require_subcommand(1);
  std::string spec_pos;
  auto* validate = env->add_subcommand("validate", "check the hypotheses and report kappa");
  validate->add_option("spec", spec_pos, "spec file")->required();
  validate->callback([&] {
    const SpecFile sf = load_spec_file(spec_pos);
    const AssumptionReport r = validate_assumptions(sf.spec);
    std::printf("hyp1 %s\nhyp2 %s\nnon-lattice %s\nkappa %.12g\nregime %s\npsi'(1) %.12g\n%s\n",
                r.hyp1_ok ? "ok" : "FAILS", r.hyp2_ok ? "ok" : "FAILS",
                to_string(r.hyp3_status).c_str(), r.kappa, to_string(regime_for(r.kappa)).c_str(),
                r.psi_prime_1, r.details.c_str());
    code = r.hyp1_ok && r.hyp2_ok ? 0 : 1;
  });
  int cal_b = 2;
  double cal_c = 2.0, cal_kappa = 1.5;
  std::uint64_t cal_seed = 0;
  std::string cal_out;
  auto* calibrate = env->add_subcommand("calibrate", "two-point marks with a target kappa");
  calibrate->add_option("--b", cal_b, "children per vertex");
  calibrate->add_option("--c", cal_c, "second mark value");
  calibrate->add_option("--kappa", cal_kappa, "target kappa")->required();
  calibrate->add_option("--seed", cal_seed, "environment seed stored in the spec");
  calibrate->add_option("--out", cal_out, "write the spec file here");
  calibrate->callback([&] {
    const TwoPointCalibration t = calibrate_two_point(cal_b, cal_c, cal_kappa);
    const std::string doc = spec_to_json(t.spec, cal_seed).dump(2);
    if (cal_out.empty()) {
      std::cout << doc << '\n';
    } else {
      std::ofstream(cal_out) << doc << '\n';
    }
    std::fprintf(stderr, "a %.12g p %.12g residuals %.2e %.2e\n", t.a, t.p, t.residual_mean,
                 t.residual_kappa);
    const AssumptionReport r = validate_assumptions(t.spec);
    code = r.hyp1_ok && r.hyp2_ok ? 0 : 1;
  });

  // walk
  auto* walk = app.add_subcommand("walk", "quenched walk simulations");
  walk->require_subcommand(1);
  std::vector<std::uint64_t> horizons{16, 64, 256, 1024, 4096};
  std::size_t replicas = 100'000;
  bool annealed = false;
  auto* survive = walk->add_subcommand("survive", "P(T+ > n) at the horizons");
  add_common(survive, c);
  survive->add_option("--horizons", horizons, "horizons (sorted)");
  survive->add_option("--replicas", replicas, "walks");
  survive->add_flag("--quenched", "fixed environment (the default)");
  survive->add_flag("--annealed", annealed, "fresh environment for every walk");
  survive->callback([&] {
    const SpecFile sf = load(c);
    WalkOptions o;
    o.workers = c.workers;
    o.quenched = !annealed;
    const SurvivalCurve s = survival_curve(sf.spec, sf.seed, horizons, replicas, c.seed, o);
    CsvTable t{"survival", {"n", "p_hat", "stderr"}, {}};
    for (std::size_t i = 0; i < horizons.size(); ++i) {
      t.rows.push_back({static_cast<double>(horizons[i]), s.survival[i], s.standard_errors[i]});
    }
    emit(c, t);
  });
  std::uint64_t lt_n = 100'000;
  std::vector<std::uint64_t> probes;
  auto* localtime = walk->add_subcommand("localtime", "local time at the root and P(X_n = root)");
  add_common(localtime, c);
  localtime->add_option("--n", lt_n, "walk length");
  localtime->add_option("--replicas", replicas, "walks");
  localtime->add_option("--probes", probes, "even times for the local probability");
  localtime->callback([&] {
    const SpecFile sf = load(c);
    WalkOptions o;
    o.workers = c.workers;
    const LocalTimeResult r = local_time_and_local_prob(sf.spec, sf.seed, lt_n, probes, replicas,
                                                        c.seed, o);
    CsvTable lt{"local_times", {"replica", "local_time"}, {}};
    for (std::size_t i = 0; i < r.local_times.size(); ++i) {
      lt.rows.push_back({static_cast<double>(i), r.local_times[i]});
    }
    emit(c, lt);
    if (!probes.empty()) {
      CsvTable lp{"local_prob", {"n", "point_prob", "point_stderr", "window_prob", "window_stderr"}, {}};
      for (std::size_t i = 0; i < probes.size(); ++i) {
        lp.rows.push_back({static_cast<double>(probes[i]), r.point_prob[i], r.point_stderr[i],
                           r.window_prob[i], r.window_stderr[i]});
      }
      emit(c, lp);
    }
  });

  // recur
  auto* recur = app.add_subcommand("recur", "tree recursion");
  recur->require_subcommand(1);
  double eps = 1e-3, min_weight = 0.0;
  std::vector<int> depths{100, 200, 400, 800};
  auto* beps = recur->add_subcommand("b-eps", "B_eps at the root along a depth schedule");
  add_common(beps, c);
  beps->add_option("--eps", eps, "epsilon in (0, 1)");
  beps->add_option("--depths", depths, "increasing depths");
  beps->add_option("--min-weight", min_weight, "prune vertices below this path weight");
  beps->callback([&] {
    const SpecFile sf = load(c);
    TreeArena arena(sf.spec, sf.seed, std::size_t{1} << 24);
    PruneOptions p;
    p.min_weight = min_weight;
    CsvTable t{"b_eps", {"depth", "B_value", "gap"}, {}};
    double prev = std::numeric_limits<double>::quiet_NaN();
    for (int d : depths) {
      const RecursionField f = beta_backward(arena, d, lambda_from_epsilon(eps), p);
      t.rows.push_back({static_cast<double>(d), f.root_B, std::abs(f.root_B - prev)});
      prev = f.root_B;
    }
    emit(c, t);
  });
  std::vector<double> lambdas{0.02, 0.05};
  std::uint64_t horizon = 4096;
  auto* abel = recur->add_subcommand("abel", "Abel sum of P(T+ > n) against the recursion");
  add_common(abel, c);
  abel->add_option("--lambda", lambdas, "lambda values");
  abel->add_option("--replicas", replicas, "walks");
  abel->add_option("--horizon", horizon, "censoring horizon");
  abel->add_option("--min-weight", min_weight, "prune vertices below this path weight");
  abel->callback([&] {
    const SpecFile sf = load(c);
    WalkOptions o;
    o.workers = c.workers;
    o.keep_first_returns = true;
    const SurvivalCurve s = survival_curve(sf.spec, sf.seed, {horizon}, replicas, c.seed, o);
    TreeArena arena(sf.spec, sf.seed, std::size_t{1} << 24);
    PruneOptions p;
    p.min_weight = min_weight > 0.0 ? min_weight : 1e-6;
    CsvTable t{"abel", {"lambda", "lhs", "lhs_stderr", "rhs", "rhs_halfwidth", "z"}, {}};
    bool ok = true;
    for (double l : lambdas) {
      const AbelCheck a = abel_cross_check(arena, l, s, 800, p);
      ok = ok && a.pass;
      t.rows.push_back({l, a.lhs, a.lhs_stderr, a.rhs, a.rhs_halfwidth, a.z});
    }
    emit(c, t);
    code = ok ? 0 : 1;
  });

  // cascade
  auto* cascade = app.add_subcommand("cascade", "population dynamics");
  cascade->require_subcommand(1);
  std::string target = "b-eps";
  std::size_t pool = 200'000;
  auto* run = cascade->add_subcommand("run", "iterate to the fixpoint");
  add_common(run, c);
  run->add_option("--target", target, "b-eps or m-inf")->check(CLI::IsMember({"b-eps", "m-inf"}));
  run->add_option("--eps", eps, "epsilon");
  run->add_option("--pool", pool, "pool size");
  std::size_t average = 400;
  run->add_option("--average", average, "steps averaged after burn-in");
  run->callback([&] {
    const SpecFile sf = load(c);
    CascadeOptions o;
    o.pool_size = pool;
    o.average_iterations = average;
    o.seed = c.seed;
    o.step.workers = c.workers;
    const CascadeTarget tg = target == "b-eps" ? CascadeTarget::BEps : CascadeTarget::MInf;
    const FixpointResult f = run_to_fixpoint(sf.spec, tg, eps, o);
    CsvTable t{"trace", {"iteration", "mean", "sd"}, {}};
    for (std::size_t i = 0; i < f.mean_trace.size(); ++i) {
      t.rows.push_back({static_cast<double>(i + 1), f.mean_trace[i],
                        i + 1 == f.mean_trace.size() ? f.pool.mean().sd
                                                     : std::numeric_limits<double>::quiet_NaN()});
    }
    emit(c, t);
    if (tg == CascadeTarget::BEps) {
      // one pool's residual is the drift of a single step, so judge the time average
      const MeanEstimate& id = f.identity_residual;
      const double rounding = 64.0 * std::numeric_limits<double>::epsilon() * std::max(eps, f.mean.mean);
      const bool pass = std::abs(id.mean) <= 3.0 * id.stderr_ + rounding;
      std::fprintf(stderr, "mean B %.6e stderr %.2e\n", f.mean.mean, f.mean.stderr_);
      std::fprintf(stderr, "identity difference %.3e stderr %.3e %s\n", id.mean, id.stderr_,
                   pass ? "ok" : "FAILS");
      code = pass ? 0 : 1;
    }
  });
  auto* tail = cascade->add_subcommand("tail", "tail of the M_inf pool");
  add_common(tail, c);
  tail->add_option("--pool", pool, "pool size");
  tail->callback([&] {
    const SpecFile sf = load(c);
    CascadeOptions o;
    o.pool_size = pool;
    o.seed = c.seed;
    o.step.workers = c.workers;
    const FixpointResult f = run_to_fixpoint(sf.spec, CascadeTarget::MInf, 0.0, o);
    std::vector<double> s = f.pool.samples;
    std::sort(s.begin(), s.end());
    CsvTable t{"tail", {"x", "tail_prob"}, {}};
    const double n = static_cast<double>(s.size());
    for (int i = 0; i <= 80; ++i) {
      const double q = 1.0 - std::pow(10.0, -4.0 * i / 80.0);
      const double x = sorted_quantile(s, q);
      const auto above = s.end() - std::upper_bound(s.begin(), s.end(), x);
      if (above > 0) t.rows.push_back({x, static_cast<double>(above) / n});
    }
    emit(c, t);
    const TailFit fit = estimate_tail_constant(f.pool.samples, kappa(sf.spec), 200, c.seed);
    std::fprintf(stderr, "exponent %.4f +- %.4f  c_M %.4f [%.4f, %.4f]  hill %.4f +- %.4f\n",
                 fit.exponent_hat, fit.exponent_stderr, fit.constant_hat, fit.constant_ci_lo,
                 fit.constant_ci_hi, fit.hill_exponent, fit.hill_stderr);
  });

  // limits
  auto* limits = app.add_subcommand("limits", "limit-law constants and checks");
  limits->require_subcommand(1);
  double c_m = 0.0, m_inf = 0.0;
  auto* predict = limits->add_subcommand("predict", "constants c1..c5 for a spec");
  add_common(predict, c);
  predict->add_option("--c-m", c_m, "tail constant of M_inf (needed when kappa <= 2)");
  predict->add_option("--m-inf", m_inf, "quenched M_inf (default: from the arena)");
  predict->callback([&] {
    const SpecFile sf = load(c);
    TreeArena arena(sf.spec, sf.seed);
    const double w = arena.omega_root_parent();
    const double m = m_inf > 0.0 ? m_inf
                     : sf.spec.is_homogeneous() ? 1.0
                                                : stopping_line_limit(arena, 1e-6);
    const LimitPrediction p = predict_limits(sf.spec, c_m > 0.0 ? std::optional(c_m) : std::nullopt,
                                             m, w, c.seed);
    std::printf("regime %s\nkappa %.10g\nc1 %.10g\nc2 %.10g\nc3 %.10g\nc4 %.10g\nc5 %.10g\n"
                "omega %.10g\nM_inf %.10g\nquenched_prefactor %.10g\nlocal_time_constant %.10g\n"
                "rate %s\n",
                to_string(p.regime).c_str(), p.kappa, p.c1, p.c2, p.c3, p.c4, p.c5, p.omega_root,
                p.m_inf, p.quenched_prefactor, p.local_time_constant(), p.rate.formula().c_str());
  });
  auto* c12 = limits->add_subcommand("check-c12", "KS of the rescaled local time");
  add_common(c12, c);
  c12->add_option("--n", lt_n, "walk length");
  c12->add_option("--replicas", replicas, "walks");
  c12->add_option("--c-m", c_m, "tail constant of M_inf (needed when kappa <= 2)");
  c12->callback([&] {
    const SpecFile sf = load(c);
    TreeArena arena(sf.spec, sf.seed);
    const double w = arena.omega_root_parent();
    const double m = sf.spec.is_homogeneous() ? 1.0 : stopping_line_limit(arena, 1e-6);
    const LimitPrediction p = predict_limits(sf.spec, c_m > 0.0 ? std::optional(c_m) : std::nullopt,
                                             m, w, c.seed);
    WalkOptions o;
    o.workers = c.workers;
    const LocalTimeResult r = local_time_and_local_prob(sf.spec, sf.seed, lt_n, {}, replicas, c.seed, o);
    const KsReport ks = corollary12_check(r.local_times, p, lt_n, c.seed);
    CsvTable t{"cdf", {"x", "empirical_cdf", "predicted_cdf"}, {}};
    for (const auto& pt : ks.curve) t.rows.push_back({pt.z, pt.empirical, pt.predicted});
    emit(c, t);
    std::fprintf(stderr, "KS %.4f (%s, constant %.6g)\n", ks.statistic, ks.method.c_str(), ks.constant);
  });

  // verify
  std::vector<std::string> claims;
  std::string config_file;
  bool all = false;
  auto* verify_cmd = app.add_subcommand("verify", "run claim checks");
  add_common(verify_cmd, c, false);
  verify_cmd->add_option("claims", claims, "claim ids");
  verify_cmd->add_flag("--all", all, "every claim that applies to the spec");
  verify_cmd->add_option("--param", c.params, "KEY=VALUE pipeline parameter");
  verify_cmd->add_option("--config", config_file, "re-run a saved config");
  verify_cmd->callback([&] {
    RunConfig cfg;
    if (!config_file.empty()) {
      std::ifstream in(config_file);
      if (!in) throw ConfigError("cannot open " + config_file);
      json doc;
      in >> doc;
      cfg = run_config_from_json(doc);
      if (claims.empty()) claims.push_back(cfg.command);
      if (!c.out.empty()) cfg.out_dir = c.out;
    } else {
      cfg = make_config(c);
    }
    if (all) {
      claims.clear();
      for (const auto& info : claim_registry()) {
        if (info.regime == "none" || (cfg.has_spec() && claim_applies(info, cfg.spec_file().spec))) {
          claims.push_back(info.id);
        }
      }
    }
    if (claims.empty()) throw ConfigError("no claim given");
    std::vector<VerificationReport> reports;
    for (const auto& id : claims) {
      reports.push_back(verify(id, cfg));
      print_report(reports.back());
    }
    code = exit_code(reports);
  });

  // report
  std::vector<std::string> report_dirs;
  auto* report = app.add_subcommand("report", "summary table of saved reports");
  report->add_option("dirs", report_dirs, "directories holding *.report.json")->required();
  report->add_option("--out", c.out, "write bundle.csv here");
  report->callback([&] {
    std::vector<VerificationReport> reports;
    for (const auto& d : report_dirs) {
      if (!std::filesystem::is_directory(d)) throw ConfigError("not a directory: " + d);
      for (const auto& e : std::filesystem::directory_iterator(d)) {
        const std::string name = e.path().filename().string();
        if (name.size() < 12 || name.substr(name.size() - 12) != ".report.json") continue;
        std::ifstream in(e.path());
        json doc;
        in >> doc;
        reports.push_back(report_from_json(doc));
      }
    }
    const std::string bundle = report_bundle(reports);
    if (c.out.empty()) {
      std::cout << bundle;
    } else {
      std::filesystem::create_directories(c.out);
      std::ofstream(c.out + "/bundle.csv") << bundle;
      std::cout << "wrote " << c.out << "/bundle.csv (" << reports.size() << " rows)\n";
    }
    code = exit_code(reports);
  });

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return code;
}

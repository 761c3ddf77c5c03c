#include "siag/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "siag/error.hpp"
#include "siag/harness.hpp"
#include "siag/io.hpp"

namespace siag {

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config_path;
  std::string out_dir;
  std::vector<std::string> overrides;
  int threads = 0;
  long trials = 0;
  long horizon = -1;
};

void add_common(CLI::App& cmd, Common& c, bool needs_out) {
  cmd.add_option("--config", c.config_path, "experiment config (JSON); a manifest.json also works")
      ->required();
  auto* out = cmd.add_option("--out", c.out_dir, "output directory");
  if (needs_out) out->required();
  cmd.add_option("--set", c.overrides, "override a config field, e.g. --set schedule.kind=cyclic");
  cmd.add_option("--threads", c.threads, "max concurrent trials (default: all cores)")
      ->check(CLI::NonNegativeNumber);
  cmd.add_option("--trials", c.trials, "override the number of trials")->check(CLI::PositiveNumber);
  cmd.add_option("--horizon", c.horizon, "override the number of iterations")
      ->check(CLI::NonNegativeNumber);
}

json raw_config(const Common& c) {
  json j = load_json_file(c.config_path);
  if (j.is_object() && j.contains("config") && !j.contains("problem")) j = j.at("config");
  for (const auto& o : c.overrides) apply_override(j, o);
  if (c.trials > 0) j["trials"] = c.trials;
  if (c.horizon >= 0) j["horizon"] = c.horizon;
  return j;
}

fs::path prepare_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory '" + dir + "'");
  return fs::path(dir);
}

std::string curve_csv(const std::vector<GapEstimate>& curve) {
  std::ostringstream s;
  write_curve_csv(s, curve);
  return s.str();
}

void write_result(const fs::path& dir, const ResultSet& r) {
  atomic_write(dir / "curve.csv", curve_csv(r.curve));
  atomic_write(dir / "manifest.json", manifest(r).dump(2) + "\n");
}

void print_summary(std::ostream& out, const ResultSet& r) {
  const auto& c = r.config;
  out << "method " << to_string(c.method) << ", schedule " << to_string(c.schedule.kind)
      << ", n=" << c.problem.n << ", horizon=" << c.horizon << ", trials=" << c.trials << '\n';
  out << "certified T " << r.certified_T << ", observed max staleness " << r.observed_max_staleness
      << '\n';
  if (r.constants) out << "gamma " << r.constants->gamma << " (minimum " << r.constants->gamma_min << ")\n";
  const auto& last = r.curve.back();
  out << "E_" << last.t << " = " << std::setprecision(6) << last.mean << " +/- " << last.std_err
      << '\n';
  if (c.horizon >= 100) {
    try {
      out << "log-log slope over [" << c.horizon / 100 << ", " << c.horizon
          << "] = " << slope_fit(r.curve, c.horizon / 100, c.horizon) << '\n';
    } catch (const ContractError&) {
      // too few grid points for a fit
    }
  }
  out << "curve hash " << r.curve_hash << '\n';
}

RunOptions run_options(const Common& c) {
  RunOptions o;
  o.threads = c.threads;
  return o;
}

int cmd_run(const Common& c, std::ostream& out) {
  const ExperimentConfig config = config_from_json(raw_config(c));
  const fs::path dir = prepare_dir(c.out_dir);
  const ResultSet r = run_experiment(config, run_options(c));
  write_result(dir, r);
  print_summary(out, r);
  return kExitOk;
}

std::string dir_name(const std::string& key, const std::string& value) {
  std::string s = key + "=" + value;
  for (char& ch : s)
    if (ch == '/' || ch == '\\' || ch == ' ') ch = '_';
  return s;
}

int cmd_sweep(const Common& c, const std::string& key, const std::vector<std::string>& values,
              std::ostream& out, std::ostream& err) {
  if (values.empty()) {
    err << "sweep: --values must list at least one value\n";
    return kExitConfig;
  }
  const json base = raw_config(c);
  const bool over_n = key == "n" || key == "problem.n";
  const bool over_method = key == "method";

  std::vector<ExperimentConfig> configs;
  for (const auto& v : values) {
    json j = base;
    if (over_n) {
      apply_override(j, "problem.n=" + v);
      apply_override(j, "schedule.n=" + v);
    } else {
      apply_override(j, key + "=" + v);
    }
    configs.push_back(config_from_json(j));
  }

  // run everything first so a failure leaves no partial output behind
  std::vector<ResultSet> results;
  for (const auto& cfg : configs) results.push_back(run_experiment(cfg, run_options(c)));

  const fs::path dir = prepare_dir(c.out_dir);
  for (std::size_t k = 0; k < results.size(); ++k) {
    const fs::path sub = prepare_dir((dir / dir_name(key, values[k])).string());
    write_result(sub, results[k]);
    out << "== " << key << " = " << values[k] << '\n';
    print_summary(out, results[k]);
  }

  if (over_n) {
    const long t = results.front().config.horizon;
    const auto rows = speedup_table(results, t);
    std::ostringstream csv;
    write_speedup_csv(csv, rows);
    atomic_write(dir / "speedup.csv", csv.str());
    out << "\nspeedup at t=" << t << '\n' << csv.str();
  }
  if (over_method) {
    // final-decade statistics; the bias gap shows as a plateau far above the aggregated method
    std::ostringstream csv;
    csv << std::setprecision(10) << "method,final_window_mean,final_window_slope,ratio_to_first\n";
    const auto window = [](const ResultSet& r) {
      return std::pair{std::max(1L, r.config.horizon / 10), r.config.horizon};
    };
    const auto [lo0, hi0] = window(results.front());
    const double ref = window_mean(results.front().curve, lo0, hi0);
    for (const auto& r : results) {
      const auto [lo, hi] = window(r);
      const double m = window_mean(r.curve, lo, hi);
      double slope = std::numeric_limits<double>::quiet_NaN();
      try {
        slope = slope_fit(r.curve, lo, hi);
      } catch (const ContractError&) {
      }
      csv << to_string(r.config.method) << ',' << m << ',' << slope << ',' << m / ref << '\n';
    }
    atomic_write(dir / "bias.csv", csv.str());
    out << "\nbias summary\n" << csv.str();
  }
  return kExitOk;
}

std::vector<long> default_t_grid() { return {0, 10, 100, 1000, 10000, 100000}; }

int cmd_constants(double mu, double L, double sigma2, int n, int T, double beta, double E0,
                  double gamma, std::vector<long> t_grid, std::ostream& out) {
  AnalysisConstants c = derive_constants(mu, L, sigma2, n, T, beta, E0);
  if (gamma > 0.0) c = with_gamma(c, gamma);
  out << format_constants(c, t_grid);
  return kExitOk;
}

int cmd_check(const Common& c, bool lemmas, bool theorem, std::vector<long> probes,
              std::ostream& out) {
  const ExperimentConfig config = config_from_json(raw_config(c));
  if (config.steps.kind == StepConfig::Kind::kConstant)
    throw ConfigError("check needs steps of the form beta/(t + gamma) (kind inverse_t or theorem)");
  const double p = config.problem.p;
  // cheap admissibility gate on beta before any sampling (mu = L = p for this instance)
  derive_constants(p, p, 0.0, config.problem.n, 0, config.steps.beta, 0.0);

  const RunOptions opts = run_options(c);
  const ResultSet r = run_experiment(config, opts);
  AnalysisConstants constants;
  if (r.constants) {
    constants = *r.constants;
  } else {
    const Setup setup = prepare(config);
    constants = derive_constants(setup.instance.mu(), setup.instance.L(),
                                 analysis_sigma2(setup.instance, setup.w0, config.noise_samples),
                                 config.problem.n, setup.certified_T, config.steps.beta, setup.E0);
    constants.gamma = config.steps.gamma;  // may be inadmissible; check_theorem reports that
    constants.delta2 = constants.gamma * constants.gamma * constants.E0;
  }

  std::vector<CheckReport> reports;
  if (theorem) reports.push_back(check_theorem(constants, r.curve));
  if (lemmas) {
    if (probes.empty())
      for (long t : {10L, 100L, 1000L, 10000L})
        if (t <= config.horizon) probes.push_back(t);
    if (probes.empty()) throw ConfigError("check: no lemma probe iterations within the horizon");
    const LemmaEnsemble ens = collect_lemma_ensemble(config, probes, opts);
    reports.push_back(check_lemma1(ens, constants));
    reports.push_back(check_lemma2(ens, constants));
    reports.push_back(check_lemma3(ens, constants));
  }

  bool invalid = false;
  bool violated = false;
  if (!c.out_dir.empty()) {
    const fs::path dir = prepare_dir(c.out_dir);
    write_result(dir, r);
    for (const auto& rep : reports) {
      std::ostringstream csv;
      write_report_csv(csv, rep);
      atomic_write(dir / (rep.name + ".csv"), csv.str());
    }
  }
  out << format_constants(constants, {});
  for (const auto& rep : reports) {
    out << summarize(rep) << '\n';
    invalid = invalid || !rep.constants_valid;
    violated = violated || rep.violations() > 0;
  }
  if (invalid) return kExitConfig;
  return violated ? kExitCheckFailed : kExitOk;
}

int cmd_audit(const Common& c, std::ostream& out) {
  json j = raw_config(c);
  ScheduleConfig sched;
  long horizon = c.horizon;
  if (j.contains("schedule")) {
    if (!j.contains("seed") && !j.at("schedule").contains("seed"))
      throw ConfigError("config.seed is required");
    const int n = j.contains("problem") ? j.at("problem").value("n", 0) : 0;
    sched = schedule_from_json(j.at("schedule"), n, j.value("seed", std::uint64_t{0}));
    if (horizon < 0) horizon = j.value("horizon", 0L);
  } else {
    if (!j.contains("seed")) throw ConfigError("schedule seed is required");
    sched = schedule_from_json(j, 0, 0);
  }
  if (horizon < 1) throw ConfigError("schedule-audit needs --horizon >= 1");
  const ScheduleAudit a = audit_schedule(sched, horizon);

  std::ostringstream report;
  report << "schedule " << to_string(sched.kind) << ", n=" << sched.n << ", horizon=" << horizon << '\n';
  report << "worker,activations,frequency,max_staleness,cap\n";
  for (std::size_t i = 0; i < a.activations.size(); ++i)
    report << i << ',' << a.activations[i] << ',' << std::setprecision(6) << a.frequency[i] << ','
           << a.max_gap[i] << ',' << a.caps[i] << '\n';
  report << "max staleness " << a.observed_max << " (certified T " << a.certified_T << ")\n";
  if (a.violated) report << "VIOLATION: a worker exceeded its staleness cap\n";
  out << report.str();
  if (!c.out_dir.empty()) atomic_write(prepare_dir(c.out_dir) / "audit.csv", report.str());
  return a.violated ? kExitDivergence : kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Simulator for stochastic incremental aggregated gradients on a parameter server"};
  app.require_subcommand(1);

  Common run_opts;
  auto* run = app.add_subcommand("run", "run all trials of one config; writes curve.csv and manifest.json");
  add_common(*run, run_opts, true);

  Common sweep_opts;
  std::string sweep_key;
  std::vector<std::string> sweep_values;
  auto* sweep = app.add_subcommand("sweep", "run one config per value of a field");
  add_common(*sweep, sweep_opts, true);
  sweep->add_option("--key", sweep_key, "dotted field to vary ('n' sets problem.n and schedule.n)")
      ->required();
  sweep->add_option("--values", sweep_values, "comma-separated values")->delimiter(',');

  double mu = 0, L = 0, sigma2 = 0, beta = 0, E0 = 0, gamma = 0;
  int n = 1, T = 0;
  std::vector<long> t_grid = default_t_grid();
  auto* constants = app.add_subcommand("constants", "print the constants of the convergence bound");
  constants->add_option("--mu", mu, "strong convexity")->required();
  constants->add_option("--L", L, "smoothness")->required();
  constants->add_option("--sigma2", sigma2, "gradient noise bound")->required();
  constants->add_option("--n", n, "workers")->required();
  constants->add_option("--T", T, "staleness bound")->required();
  constants->add_option("--beta", beta, "step numerator")->required();
  constants->add_option("--E0", E0, "initial squared distance")->required();
  constants->add_option("--gamma", gamma, "use this gamma instead of the minimum");
  constants->add_option("--t", t_grid, "iterations at which to print the bound")->delimiter(',');

  Common check_opts;
  bool lemmas = false;
  bool no_theorem = false;
  std::vector<long> probes;
  auto* check = app.add_subcommand("check", "run a config and test the bound (and the lemmas)");
  add_common(*check, check_opts, false);
  check->add_flag("--lemmas", lemmas, "also check the three lemma inequalities");
  check->add_flag("--no-theorem", no_theorem, "skip the bound itself");
  check->add_option("--probes", probes, "lemma probe iterations")->delimiter(',');

  Common audit_opts;
  auto* audit = app.add_subcommand("schedule-audit", "simulate a schedule alone and measure staleness");
  add_common(*audit, audit_opts, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << '\n';
    return kExitConfig;
  }

  try {
    if (*run) return cmd_run(run_opts, out);
    if (*sweep) return cmd_sweep(sweep_opts, sweep_key, sweep_values, out, err);
    if (*constants) return cmd_constants(mu, L, sigma2, n, T, beta, E0, gamma, t_grid, out);
    if (*check) return cmd_check(check_opts, lemmas, !no_theorem, probes, out);
    if (*audit) return cmd_audit(audit_opts, out);
  } catch (const ConfigError& e) {
    err << "invalid configuration: " << e.what() << '\n';
    return kExitConfig;
  } catch (const json::exception& e) {
    err << "invalid configuration: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DivergenceError& e) {
    err << "diverged: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitCheckFailed;
  }
  return kExitConfig;
}

}  // namespace siag

#include "siag/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <deque>
#include <exception>
#include <istream>
#include <ostream>
#include <set>
#include <span>
#include <thread>

#include "siag/error.hpp"
#include "siag/io.hpp"

namespace siag {

std::vector<long> recording_grid(const RecordGrid& grid, long horizon) {
  if (horizon < 0) throw ConfigError("horizon must be >= 0");
  if (horizon == 0) return {0};
  std::vector<long> out;
  if (grid.kind == RecordGrid::Kind::kLinear) {
    if (grid.record_every < 1) throw ConfigError("grid.record_every must be >= 1");
    for (long t = grid.record_every; t <= horizon; t += grid.record_every) out.push_back(t);
  } else {
    if (grid.points < 2) throw ConfigError("grid.points must be >= 2");
    const double top = std::log(static_cast<double>(horizon));
    for (int k = 0; k < grid.points; ++k) {
      const long t = std::lround(std::exp(top * k / (grid.points - 1)));
      if (out.empty() || t > out.back()) out.push_back(std::min(t, horizon));
    }
  }
  if (out.empty() || out.back() != horizon) out.push_back(horizon);
  return out;
}

void ExperimentConfig::validate() const {
  problem.validate();
  schedule.validate();
  if (schedule.n != problem.n) throw ConfigError("schedule.n must equal problem.n");
  if (horizon < 0) throw ConfigError("horizon must be >= 0");
  if (trials < 1) throw ConfigError("trials must be >= 1");
  if (!w0.empty() && static_cast<int>(w0.size()) != problem.d)
    throw ConfigError("w0 must have dimension problem.d");
  if (noise_samples < 100) throw ConfigError("noise_samples must be >= 100");
  switch (steps.kind) {
    case StepConfig::Kind::kConstant:
      StepSchedule::constant(steps.eta).validate();
      break;
    case StepConfig::Kind::kInverseT:
      StepSchedule::inverse_t(steps.beta, steps.gamma).validate();
      break;
    case StepConfig::Kind::kTheorem:
      if (!(steps.beta > 0.0)) throw ConfigError("steps.beta must be > 0");
      if (!(steps.gamma >= 0.0)) throw ConfigError("steps.gamma must be >= 0");
      break;
  }
  recording_grid(grid, std::min<long>(horizon, 1));
}

double analysis_sigma2(const LsqInstance<double>& instance, const Vector<double>& w0, long samples) {
  return std::max(empirical_noise_bound(instance, w0, samples, 0),
                  empirical_noise_bound(instance, instance.optimum(), samples, 1));
}

Setup prepare(const ExperimentConfig& config) {
  config.validate();
  Setup s{generate_instance(config.problem), {}, 0, 0.0, {}, std::nullopt};
  if (config.w0.empty())
    s.w0 = Vector<double>::Zero(config.problem.d);
  else
    s.w0 = Eigen::Map<const Vector<double>>(config.w0.data(), config.problem.d);
  s.E0 = (s.w0 - s.instance.optimum()).squaredNorm();
  s.certified_T = Schedule(config.schedule).certified_T();
  switch (config.steps.kind) {
    case StepConfig::Kind::kConstant:
      s.steps = StepSchedule::constant(config.steps.eta);
      break;
    case StepConfig::Kind::kInverseT:
      s.steps = StepSchedule::inverse_t(config.steps.beta, config.steps.gamma);
      break;
    case StepConfig::Kind::kTheorem: {
      const double sigma2 = analysis_sigma2(s.instance, s.w0, config.noise_samples);
      AnalysisConstants c = derive_constants(s.instance.mu(), s.instance.L(), sigma2,
                                             config.problem.n, s.certified_T, config.steps.beta, s.E0);
      if (config.steps.gamma > c.gamma_min) c = with_gamma(c, config.steps.gamma);
      s.steps = c.steps();
      s.constants = c;
      break;
    }
  }
  return s;
}

TrialRunner::TrialRunner(const ExperimentConfig& config, const Setup& setup, long trial)
    : config_(&config),
      setup_(&setup),
      trial_(trial),
      schedule_(config.schedule),
      tracker_(config.problem.n),
      state_(config.method, setup.w0, config.problem.n) {
  state_.sgd_normalization = config.sgd_normalization;
}

void TrialRunner::begin_iteration() {
  if (mid_iteration_) throw ContractError("begin_iteration called twice");
  active_ = schedule_.next();
  tracker_.advance(active_);
  const long t = state_.t;
  if (config_->method == Method::kIAG) {
    report_exact_gradients(state_, setup_->instance, active_);
  } else {
    samples_.clear();
    for (int i : active_.workers) {
      Stream rng = Stream::for_sample(config_->seed, static_cast<std::uint64_t>(trial_),
                                      static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(t));
      samples_.push_back(sample_gradient(setup_->instance, i, state_.w, rng, t));
    }
    // SGD ignores the buffer for its step but keeps the slots and stamps current
    report_gradients(state_, active_, samples_);
  }
  mid_iteration_ = true;
}

void TrialRunner::finish_iteration() {
  if (!mid_iteration_) throw ContractError("finish_iteration without begin_iteration");
  mid_iteration_ = false;
  try {
    if (config_->method == Method::kSGD)
      sgd_step(state_, active_, samples_, setup_->steps);
    else
      siag_step(state_, setup_->steps);
  } catch (const DivergenceError& e) {
    throw DivergenceError(std::string(e.what()) + " in trial " + std::to_string(trial_),
                          e.iteration(), trial_);
  }
}

void TrialRunner::save(std::ostream& out) const {
  if (mid_iteration_) throw ContractError("cannot checkpoint in the middle of an iteration");
  save_checkpoint(out, state_);
}

void TrialRunner::restore(std::istream& in) {
  ServerState<double> loaded = load_checkpoint<double>(in);
  if (loaded.method != config_->method || loaded.workers() != config_->problem.n ||
      loaded.dim() != config_->problem.d)
    throw ContractError("checkpoint does not match this experiment");
  schedule_.restore(loaded.t, loaded.buffer.stamps());
  tracker_.restore(loaded.t, loaded.buffer.stamps());
  state_ = std::move(loaded);
  mid_iteration_ = false;
}

Trajectory run_trial(const ExperimentConfig& config, const Setup& setup, long trial_index) {
  Trajectory out;
  TrialRunner runner(config, setup, trial_index);
  const std::vector<long> grid = recording_grid(config.grid, config.horizon);
  out.t = grid;
  out.gap.reserve(grid.size());
  if (config.horizon == 0) {
    out.gap.push_back(runner.gap());
    return out;
  }
  std::size_t next = 0;
  for (long t = 0; t < config.horizon; ++t) {
    runner.step();
    if (next < grid.size() && grid[next] == t + 1) {
      out.gap.push_back(runner.gap());
      ++next;
    }
  }
  out.observed_max_staleness = runner.tracker().observed_max();
  return out;
}

Trajectory run_trial(const ExperimentConfig& config, long trial_index) {
  const Setup setup = prepare(config);
  return run_trial(config, setup, trial_index);
}

namespace {

/// Fixed-topology pairwise sum; the result depends only on the values and their order.
double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 8) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

GapEstimate reduce(long t, std::span<const double> values) {
  GapEstimate g;
  g.t = t;
  g.trials = static_cast<long>(values.size());
  const double m = pairwise_sum(values) / static_cast<double>(values.size());
  g.mean = m;
  if (values.size() > 1) {
    std::vector<double> dev(values.size());
    for (std::size_t k = 0; k < values.size(); ++k) dev[k] = (values[k] - m) * (values[k] - m);
    g.std_err = std::sqrt(pairwise_sum(dev) / static_cast<double>(values.size() - 1) /
                          static_cast<double>(values.size()));
  }
  return g;
}

std::vector<long> execution_order(long trials, const RunOptions& options) {
  std::vector<long> order = options.trial_order;
  if (order.empty()) {
    order.resize(static_cast<std::size_t>(trials));
    for (long k = 0; k < trials; ++k) order[static_cast<std::size_t>(k)] = k;
  }
  std::vector<long> sorted = order;
  std::sort(sorted.begin(), sorted.end());
  for (long k = 0; k < trials; ++k)
    if (static_cast<long>(sorted.size()) != trials || sorted[static_cast<std::size_t>(k)] != k)
      throw ConfigError("trial_order must be a permutation of 0..trials-1");
  return order;
}

/// Runs fn(trial) for every trial on up to `threads` threads. Exceptions are
/// collected per trial and the one of the lowest trial index is rethrown.
template <typename Fn>
void for_each_trial(long trials, const RunOptions& options, Fn&& fn) {
  const std::vector<long> order = execution_order(trials, options);
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(trials));
  std::atomic<std::size_t> cursor{0};
  auto work = [&] {
    for (std::size_t k = cursor++; k < order.size(); k = cursor++) {
      const long trial = order[k];
      try {
        fn(trial);
      } catch (...) {
        errors[static_cast<std::size_t>(trial)] = std::current_exception();
      }
    }
  };
  unsigned threads = options.threads > 0 ? static_cast<unsigned>(options.threads)
                                         : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(trials));
  if (threads <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned k = 0; k < threads; ++k) pool.emplace_back(work);
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

ResultSet run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  const Setup setup = prepare(config);
  std::vector<Trajectory> runs(static_cast<std::size_t>(config.trials));
  for_each_trial(config.trials, options,
                 [&](long trial) { runs[static_cast<std::size_t>(trial)] = run_trial(config, setup, trial); });

  ResultSet result;
  result.config = config;
  result.certified_T = setup.certified_T;
  result.E0 = setup.E0;
  result.constants = setup.constants;
  const std::vector<long>& grid = runs.front().t;
  std::vector<double> column(runs.size());
  for (std::size_t k = 0; k < grid.size(); ++k) {
    for (std::size_t r = 0; r < runs.size(); ++r) column[r] = runs[r].gap[k];
    result.curve.push_back(reduce(grid[k], column));
  }
  for (const auto& r : runs)
    result.observed_max_staleness = std::max(result.observed_max_staleness, r.observed_max_staleness);
  result.config_hash = config_hash(config);
  result.curve_hash = curve_hash(result.curve);
  result.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

double slope_fit(const std::vector<GapEstimate>& curve, long t_min, long t_max) {
  std::vector<double> x;
  std::vector<double> y;
  for (const auto& g : curve) {
    if (g.t < t_min || g.t > t_max || g.t <= 0) continue;
    if (!(g.mean > 0.0))
      throw ContractError("slope_fit: nonpositive mean at t=" + std::to_string(g.t));
    x.push_back(std::log(static_cast<double>(g.t)));
    y.push_back(std::log(g.mean));
  }
  if (x.size() < 5)
    throw ContractError("slope_fit: need at least 5 recorded points in [" + std::to_string(t_min) +
                        ", " + std::to_string(t_max) + "], have " + std::to_string(x.size()));
  const auto m = static_cast<double>(x.size());
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    mx += x[k];
    my += y[k];
  }
  mx /= m;
  my /= m;
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sxy += (x[k] - mx) * (y[k] - my);
    sxx += (x[k] - mx) * (x[k] - mx);
  }
  return sxy / sxx;
}

double window_mean(const std::vector<GapEstimate>& curve, long t_min, long t_max) {
  double sum = 0.0;
  long count = 0;
  for (const auto& g : curve)
    if (g.t >= t_min && g.t <= t_max) {
      sum += g.mean;
      ++count;
    }
  if (count == 0) throw ContractError("window_mean: no recorded points in window");
  return sum / static_cast<double>(count);
}

const GapEstimate& at(const std::vector<GapEstimate>& curve, long t) {
  auto it = std::find_if(curve.begin(), curve.end(), [t](const GapEstimate& g) { return g.t == t; });
  if (it == curve.end()) throw ContractError("t=" + std::to_string(t) + " was not recorded");
  return *it;
}

std::vector<SpeedupRow> speedup_table(const std::vector<ResultSet>& results, long reference_t) {
  if (results.empty()) throw ConfigError("speedup_table needs at least one result");
  auto strip = [](ExperimentConfig c) {
    c.problem.n = 0;
    c.schedule.n = 0;
    return c;
  };
  const ExperimentConfig base = strip(results.front().config);
  std::vector<SpeedupRow> rows;
  for (const auto& r : results) {
    if (!(strip(r.config) == base))
      throw ConfigError("speedup_table: results differ in more than the worker count");
    const GapEstimate& g = at(r.curve, reference_t);
    rows.push_back({r.config.problem.n, reference_t, g.mean, g.std_err, 0.0, 0.0});
  }
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.n < b.n; });
  for (auto& row : rows) {
    row.ratio = row.mean / rows.front().mean;
    row.ideal = static_cast<double>(rows.front().n) / row.n;
  }
  return rows;
}

void write_speedup_csv(std::ostream& out, const std::vector<SpeedupRow>& rows) {
  out << "n,t,mean,stderr,ratio,ideal\n";
  out.precision(17);
  for (const auto& r : rows)
    out << r.n << ',' << r.t << ',' << r.mean << ',' << r.std_err << ',' << r.ratio << ','
        << r.ideal << '\n';
}

LemmaEnsemble collect_lemma_ensemble(const ExperimentConfig& config, const std::vector<long>& probes,
                                     const RunOptions& options) {
  const Setup setup = prepare(config);
  const int n = config.problem.n;
  const long T = setup.certified_T;
  LemmaEnsemble ens;
  ens.n = n;
  ens.T = static_cast<int>(T);
  ens.steps = setup.steps;
  ens.trials = config.trials;
  const std::set<long> probe_set(probes.begin(), probes.end());
  if (probe_set.empty() || *probe_set.begin() < 0) throw ConfigError("probes must be >= 0");
  const auto trials = static_cast<std::size_t>(config.trials);
  for (long t : probe_set) {
    LemmaProbe p;
    p.t = t;
    p.window_start = std::max(0L, t - 2 * T);
    p.grad_sq.assign(trials, 0.0);
    p.inner.assign(trials, 0.0);
    p.lag_sq.assign(static_cast<std::size_t>(n), std::vector<double>(trials, 0.0));
    p.gap.assign(static_cast<std::size_t>(t - p.window_start + 1), std::vector<double>(trials, 0.0));
    ens.probes.push_back(std::move(p));
  }
  const long last = *probe_set.rbegin();

  for_each_trial(config.trials, options, [&](long trial) {
    const auto tr = static_cast<std::size_t>(trial);
    TrialRunner runner(config, setup, trial);
    std::deque<Vector<double>> history;  // w^s for s in [t - T, t]
    for (long s = 0; s <= last; ++s) {
      runner.begin_iteration();
      const auto& st = runner.state();
      history.push_back(st.w);
      if (static_cast<long>(history.size()) > T + 1) history.pop_front();
      const double gap = runner.gap();
      for (auto& p : ens.probes)
        if (s >= p.window_start && s <= p.t) p.gap[static_cast<std::size_t>(s - p.window_start)][tr] = gap;
      if (probe_set.count(s)) {
        auto& p = *std::find_if(ens.probes.begin(), ens.probes.end(), [s](const auto& q) { return q.t == s; });
        const Vector<double> g = st.buffer.running_sum() / static_cast<double>(n);
        p.grad_sq[tr] = g.squaredNorm();
        p.inner[tr] = (st.w - setup.instance.optimum()).dot(g);
        for (int i = 0; i < n; ++i) {
          const long tau = std::max(0L, st.buffer.stamp(i));
          const long back = s - tau;
          if (back >= static_cast<long>(history.size()))
            throw ContractError("staleness exceeded the certified bound during lemma collection");
          const auto& w_tau = history[history.size() - 1 - static_cast<std::size_t>(back)];
          p.lag_sq[static_cast<std::size_t>(i)][tr] = (st.w - w_tau).squaredNorm();
        }
      }
      runner.finish_iteration();
    }
  });
  return ens;
}

}  // namespace siag

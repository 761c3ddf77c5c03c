#ifndef SIAG_HARNESS_HPP
#define SIAG_HARNESS_HPP

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "siag/optimizer.hpp"
#include "siag/problem.hpp"
#include "siag/schedule.hpp"
#include "siag/theory.hpp"

namespace siag {

/// Step-size choice of an experiment. `kTheorem` resolves beta / (t + gamma)
/// with gamma from derive_constants (or the given gamma when it is larger).
struct StepConfig {
  enum class Kind { kConstant, kInverseT, kTheorem };
  Kind kind = Kind::kInverseT;
  double eta = 0.0;
  double beta = 0.0;
  double gamma = 0.0;

  friend bool operator==(const StepConfig&, const StepConfig&) = default;
};

/// Iterations at which ||w^t - w*||^2 is recorded.
struct RecordGrid {
  enum class Kind { kLog, kLinear };
  Kind kind = Kind::kLog;
  int points = 200;       ///< log grid: target number of distinct points
  long record_every = 1;  ///< linear grid: stride

  friend bool operator==(const RecordGrid&, const RecordGrid&) = default;
};

/// Recorded iterations in (0, horizon], strictly increasing and always ending at
/// horizon; {0} when horizon is 0.
std::vector<long> recording_grid(const RecordGrid& grid, long horizon);

struct ExperimentConfig {
  ProblemSpec problem;
  ScheduleConfig schedule;
  Method method = Method::kSIAG;
  SgdNormalization sgd_normalization = SgdNormalization::kWorkers;
  StepConfig steps;
  long horizon = 1000;
  long trials = 1;
  RecordGrid grid;
  std::uint64_t seed = 0;
  std::vector<double> w0;   ///< empty means the zero vector
  long noise_samples = 2000; ///< draws per worker when sigma^2 is estimated

  void validate() const;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Everything derived from a config before any trial runs.
struct Setup {
  LsqInstance<double> instance;
  StepSchedule steps;
  int certified_T = 0;
  double E0 = 0.0;
  Vector<double> w0;
  std::optional<AnalysisConstants> constants;  ///< set for theorem-derived steps
};

/// sigma^2 for the analysis: the larger empirical bound at w0 and w*.
double analysis_sigma2(const LsqInstance<double>& instance, const Vector<double>& w0, long samples);

Setup prepare(const ExperimentConfig& config);

/**
 * One replicated run of the parameter-server loop.
 *
 * Each iteration: select A_t, let every active worker draw a fresh sample at
 * w^t (IAG: evaluate the exact gradient), update the buffer, then step.
 * Samples of worker i at iteration t come from the stream keyed by
 * (seed, trial, i, t), so a trial is a pure function of (config, trial).
 * The schedule is shared by all trials of a config.
 */
class TrialRunner {
 public:
  TrialRunner(const ExperimentConfig& config, const Setup& setup, long trial);

  /// Select A_t and refresh the buffer; state then holds w^t and g^t.
  void begin_iteration();
  /// Take the method's step to w^{t+1}.
  void finish_iteration();
  void step() {
    begin_iteration();
    finish_iteration();
  }

  const ServerState<double>& state() const noexcept { return state_; }
  const Schedule& schedule() const noexcept { return schedule_; }
  const StalenessTracker& tracker() const noexcept { return tracker_; }
  const ActiveSet& active() const noexcept { return active_; }
  long trial() const noexcept { return trial_; }
  double gap() const { return (state_.w - setup_->instance.optimum()).squaredNorm(); }

  /// Checkpoint of the full server state (see save_checkpoint for the format).
  void save(std::ostream& out) const;
  /// Continues from a checkpoint produced by save() for the same config and trial.
  void restore(std::istream& in);

 private:
  const ExperimentConfig* config_;
  const Setup* setup_;
  long trial_;
  Schedule schedule_;
  StalenessTracker tracker_;
  ServerState<double> state_;
  ActiveSet active_;
  std::vector<GradientSample<double>> samples_;
  bool mid_iteration_ = false;
};

struct Trajectory {
  std::vector<long> t;
  std::vector<double> gap;
  long observed_max_staleness = 0;
};

Trajectory run_trial(const ExperimentConfig& config, const Setup& setup, long trial_index);
Trajectory run_trial(const ExperimentConfig& config, long trial_index);

struct ResultSet {
  ExperimentConfig config;
  std::vector<GapEstimate> curve;
  double wall_time_s = 0.0;
  long observed_max_staleness = 0;
  int certified_T = 0;
  double E0 = 0.0;
  std::optional<AnalysisConstants> constants;
  std::string config_hash;
  std::string curve_hash;
};

struct RunOptions {
  int threads = 0;                  ///< 0: hardware concurrency
  std::vector<long> trial_order;    ///< optional execution order (must be a permutation)
};

/// Runs all trials and estimates E_t on the grid. Throws DivergenceError naming the
/// lowest failing trial if any trial diverges.
ResultSet run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

/// OLS slope of log(mean) against log(t) over recorded t in [t_min, t_max].
double slope_fit(const std::vector<GapEstimate>& curve, long t_min, long t_max);

/// Average of recorded means with t in [t_min, t_max].
double window_mean(const std::vector<GapEstimate>& curve, long t_min, long t_max);

/// Curve point at exactly t; throws if t was not recorded.
const GapEstimate& at(const std::vector<GapEstimate>& curve, long t);

struct SpeedupRow {
  int n = 0;
  long t = 0;
  double mean = 0.0;
  double std_err = 0.0;
  double ratio = 0.0;  ///< E_t(n) / E_t(n_min)
  double ideal = 0.0;  ///< n_min / n
};

/// Results must agree on everything but the worker count.
std::vector<SpeedupRow> speedup_table(const std::vector<ResultSet>& results, long reference_t);
void write_speedup_csv(std::ostream& out, const std::vector<SpeedupRow>& rows);

/// Per-trial observations at the probe iterations, for the lemma checkers.
LemmaEnsemble collect_lemma_ensemble(const ExperimentConfig& config, const std::vector<long>& probes,
                                     const RunOptions& options = {});

}  // namespace siag

#endif  // SIAG_HARNESS_HPP

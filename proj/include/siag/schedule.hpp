#ifndef SIAG_SCHEDULE_HPP
#define SIAG_SCHEDULE_HPP

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace siag {

enum class ScheduleKind { kCyclic, kUniformCover, kNonuniform };

std::string_view to_string(ScheduleKind kind);
ScheduleKind schedule_kind_from_string(std::string_view name);

/**
 * Worker-selection scheme. Workers are 0-based throughout the library.
 *
 * `caps` and `draw_weights` are overrides: when non-empty they replace the
 * per-worker staleness caps and random-draw weights the scheme would
 * otherwise derive. A draw weight of zero means the worker is only ever
 * activated by the cap-forcing rule.
 */
struct ScheduleConfig {
  ScheduleKind kind = ScheduleKind::kCyclic;
  int n = 1;
  int cover_T = 15;
  int ti_min = 10;
  int ti_max = 20;
  int active_per_iter = 1;
  /// When positive, overrides active_per_iter with round(active_fraction * n).
  double active_fraction = 0.0;
  std::uint64_t seed = 0;
  std::vector<int> caps;
  std::vector<double> draw_weights;

  void validate() const;
  int draws_per_iter() const;

  friend bool operator==(const ScheduleConfig&, const ScheduleConfig&) = default;
};

/// Workers that report a fresh gradient at iteration `iter`; sorted, unique, nonempty.
struct ActiveSet {
  long iter = 0;
  std::vector<int> workers;

  void validate(int n) const;
  bool contains(int worker) const;
};

/**
 * Tracks tau_i(t), the last iteration <= t at which worker i was active
 * (-1 before its first activation), and the largest activation gap seen.
 *
 * The gap of worker i at iteration t is t - tau_i(t-1): the number of
 * iterations its buffer slot has aged when it is refreshed (or would be, if
 * refreshed next). A schedule with certified staleness bound T keeps every
 * gap <= T, which implies tau_i(t) >= t - T + 1.
 */
class StalenessTracker {
 public:
  explicit StalenessTracker(int n);

  /// Consumes A_t for t == next_iter(); returns t - tau_i(t) for every worker.
  std::vector<long> advance(const ActiveSet& active);

  int workers() const noexcept { return static_cast<int>(tau_.size()); }
  long next_iter() const noexcept { return next_iter_; }
  const std::vector<long>& tau() const noexcept { return tau_; }
  /// Largest activation gap over all workers so far (0 before the first advance).
  long observed_max() const noexcept { return observed_max_; }
  /// Largest gap per worker.
  const std::vector<long>& observed_per_worker() const noexcept { return per_worker_; }

  /// Resumes at iteration `next_iter` with the given last activations. Gap
  /// statistics restart from the current ages.
  void restore(long next_iter, std::vector<long> tau);

 private:
  std::vector<long> tau_;
  std::vector<long> per_worker_;
  long next_iter_ = 0;
  long observed_max_ = 0;
};

/**
 * Deterministic stream of active sets.
 *
 * Random schemes draw `draws_per_iter()` distinct workers per iteration
 * (uniformly, or with probability proportional to 1/T_i for the non-uniform
 * scheme), then force-include any worker whose gap would otherwise exceed
 * its cap. Every draw at iteration t comes from a stream keyed by
 * (seed, t), so the sequence can be resumed from (t, last activations).
 */
class Schedule {
 public:
  explicit Schedule(ScheduleConfig config);

  ActiveSet next();

  const ScheduleConfig& config() const noexcept { return config_; }
  int workers() const noexcept { return config_.n; }
  long next_iter() const noexcept { return next_iter_; }
  /// Per-worker activation caps T_i.
  const std::vector<int>& caps() const noexcept { return caps_; }
  const std::vector<double>& weights() const noexcept { return weights_; }
  /// Bound T with tau_i(t) >= t - T for all i, t (max_i T_i).
  int certified_T() const noexcept { return certified_T_; }
  const std::vector<long>& last_activation() const noexcept { return last_; }

  /// Repositions the stream at iteration `iter` given each worker's last activation.
  void restore(long iter, std::vector<long> last_activation);

 private:
  void draw_random(long iter, std::vector<char>& chosen) const;

  ScheduleConfig config_;
  std::vector<int> caps_;
  std::vector<double> weights_;
  int certified_T_ = 1;
  long next_iter_ = 0;
  std::vector<long> last_;
};

/// Drawn per-worker caps for the non-uniform scheme (uniform on [ti_min, ti_max]).
std::vector<int> draw_caps(const ScheduleConfig& config);

struct ScheduleAudit {
  long horizon = 0;
  int certified_T = 0;
  long observed_max = 0;
  std::vector<long> activations;
  std::vector<double> frequency;  ///< activations / horizon
  std::vector<long> max_gap;
  std::vector<int> caps;
  bool violated = false;
};

/// Runs the schedule alone for `horizon` iterations and measures it.
ScheduleAudit audit_schedule(const ScheduleConfig& config, long horizon);

}  // namespace siag

#endif  // SIAG_SCHEDULE_HPP

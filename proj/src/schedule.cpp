#include "siag/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "siag/error.hpp"
#include "siag/rng.hpp"

namespace siag {

std::string_view to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::kCyclic: return "cyclic";
    case ScheduleKind::kUniformCover: return "uniform_cover";
    case ScheduleKind::kNonuniform: return "nonuniform";
  }
  return "unknown";
}

ScheduleKind schedule_kind_from_string(std::string_view name) {
  if (name == "cyclic") return ScheduleKind::kCyclic;
  if (name == "uniform_cover" || name == "uniform") return ScheduleKind::kUniformCover;
  if (name == "nonuniform" || name == "non_uniform") return ScheduleKind::kNonuniform;
  throw ConfigError("unknown schedule kind '" + std::string(name) + "'");
}

void ScheduleConfig::validate() const {
  if (n < 1) throw ConfigError("schedule.n must be >= 1");
  if (cover_T < 1) throw ConfigError("schedule.cover_T must be >= 1");
  if (ti_min < 1 || ti_max < ti_min)
    throw ConfigError("schedule.Ti_range must be nonempty with min >= 1");
  if (active_fraction < 0.0 || active_fraction > 1.0)
    throw ConfigError("schedule.active_fraction must lie in [0, 1]");
  if (active_fraction == 0.0 && (active_per_iter < 1 || active_per_iter > n))
    throw ConfigError("schedule.active_per_iter must lie in [1, n]");
  if (!caps.empty()) {
    if (static_cast<int>(caps.size()) != n)
      throw ConfigError("schedule.caps must have one entry per worker");
    for (int c : caps)
      if (c < 1) throw ConfigError("schedule.caps entries must be >= 1");
  }
  if (!draw_weights.empty()) {
    if (static_cast<int>(draw_weights.size()) != n)
      throw ConfigError("schedule.draw_weights must have one entry per worker");
    for (double w : draw_weights)
      if (!(w >= 0.0) || !std::isfinite(w))
        throw ConfigError("schedule.draw_weights entries must be finite and >= 0");
  }
}

int ScheduleConfig::draws_per_iter() const {
  if (active_fraction > 0.0)
    return std::clamp(static_cast<int>(std::lround(active_fraction * n)), 1, n);
  return active_per_iter;
}

void ActiveSet::validate(int n) const {
  if (workers.empty()) throw ContractError("active set must be nonempty");
  for (std::size_t k = 0; k < workers.size(); ++k) {
    if (workers[k] < 0 || workers[k] >= n)
      throw ContractError("active worker " + std::to_string(workers[k]) + " out of range");
    if (k > 0 && workers[k] <= workers[k - 1])
      throw ContractError("active set must be sorted and unique");
  }
}

bool ActiveSet::contains(int worker) const {
  return std::binary_search(workers.begin(), workers.end(), worker);
}

StalenessTracker::StalenessTracker(int n) {
  if (n < 1) throw ConfigError("tracker needs n >= 1");
  tau_.assign(static_cast<std::size_t>(n), -1);
  per_worker_.assign(static_cast<std::size_t>(n), 0);
}

std::vector<long> StalenessTracker::advance(const ActiveSet& active) {
  if (active.iter != next_iter_)
    throw ContractError("tracker expected iteration " + std::to_string(next_iter_) + ", got " +
                        std::to_string(active.iter));
  active.validate(workers());
  const long t = active.iter;
  for (int i : active.workers) tau_[static_cast<std::size_t>(i)] = t;

  std::vector<long> staleness(tau_.size());
  for (std::size_t i = 0; i < tau_.size(); ++i) {
    staleness[i] = t - tau_[i];
    // gap if refreshed at t+1; every closed gap was recorded this way one iteration earlier
    per_worker_[i] = std::max(per_worker_[i], staleness[i] + 1);
    observed_max_ = std::max(observed_max_, per_worker_[i]);
  }
  ++next_iter_;
  return staleness;
}

void StalenessTracker::restore(long next_iter, std::vector<long> tau) {
  if (tau.size() != tau_.size()) throw ContractError("tracker restore: wrong worker count");
  tau_ = std::move(tau);
  next_iter_ = next_iter;
  observed_max_ = 0;
  for (std::size_t i = 0; i < tau_.size(); ++i) {
    per_worker_[i] = next_iter > 0 ? next_iter - tau_[i] : 0;
    observed_max_ = std::max(observed_max_, per_worker_[i]);
  }
}

std::vector<int> draw_caps(const ScheduleConfig& config) {
  Stream rng(derive_key(config.seed, {static_cast<std::uint64_t>(StreamTag::kCaps)}));
  const auto span = static_cast<std::uint64_t>(config.ti_max - config.ti_min + 1);
  std::vector<int> caps(static_cast<std::size_t>(config.n));
  for (int& c : caps) c = config.ti_min + static_cast<int>(rng.below(span));
  return caps;
}

Schedule::Schedule(ScheduleConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto n = static_cast<std::size_t>(config_.n);
  switch (config_.kind) {
    case ScheduleKind::kCyclic:
      caps_.assign(n, config_.n);
      break;
    case ScheduleKind::kUniformCover:
      caps_ = config_.caps.empty() ? std::vector<int>(n, config_.cover_T) : config_.caps;
      weights_.assign(n, 1.0);
      break;
    case ScheduleKind::kNonuniform:
      caps_ = config_.caps.empty() ? draw_caps(config_) : config_.caps;
      weights_.resize(n);
      for (std::size_t i = 0; i < n; ++i) weights_[i] = 1.0 / caps_[i];
      break;
  }
  if (!config_.draw_weights.empty() && config_.kind != ScheduleKind::kCyclic)
    weights_ = config_.draw_weights;
  certified_T_ = *std::max_element(caps_.begin(), caps_.end());
  last_.assign(n, -1);
}

void Schedule::draw_random(long iter, std::vector<char>& chosen) const {
  Stream rng(derive_key(config_.seed, {static_cast<std::uint64_t>(StreamTag::kSchedule),
                                       static_cast<std::uint64_t>(iter)}));
  const int n = config_.n;
  const bool equal = std::all_of(weights_.begin(), weights_.end(),
                                 [&](double w) { return w == weights_.front(); }) &&
                     weights_.front() > 0.0;
  int k = config_.draws_per_iter();

  if (equal) {
    // partial Fisher-Yates
    std::vector<int> pool(static_cast<std::size_t>(n));
    std::iota(pool.begin(), pool.end(), 0);
    for (int j = 0; j < k; ++j) {
      const auto pick = j + static_cast<int>(rng.below(static_cast<std::uint64_t>(n - j)));
      std::swap(pool[static_cast<std::size_t>(j)], pool[static_cast<std::size_t>(pick)]);
      chosen[static_cast<std::size_t>(pool[static_cast<std::size_t>(j)])] = 1;
    }
    return;
  }

  std::vector<double> w = weights_;
  k = std::min<int>(k, static_cast<int>(std::count_if(w.begin(), w.end(),
                                                      [](double x) { return x > 0.0; })));
  for (int j = 0; j < k; ++j) {
    double total = 0.0;
    for (double x : w) total += x;
    double u = rng.uniform() * total;
    int pick = -1;
    for (int i = 0; i < n; ++i) {
      if (w[static_cast<std::size_t>(i)] <= 0.0) continue;
      pick = i;
      u -= w[static_cast<std::size_t>(i)];
      if (u < 0.0) break;
    }
    chosen[static_cast<std::size_t>(pick)] = 1;
    w[static_cast<std::size_t>(pick)] = 0.0;
  }
}

ActiveSet Schedule::next() {
  const long t = next_iter_;
  const int n = config_.n;
  ActiveSet out;
  out.iter = t;

  if (config_.kind == ScheduleKind::kCyclic) {
    out.workers.push_back(static_cast<int>(t % n));
  } else {
    std::vector<char> chosen(static_cast<std::size_t>(n), 0);
    draw_random(t, chosen);
    for (int i = 0; i < n; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      if (t - last_[ui] >= caps_[ui]) chosen[ui] = 1;
      if (chosen[ui]) out.workers.push_back(i);
    }
  }
  for (int i : out.workers) last_[static_cast<std::size_t>(i)] = t;
  ++next_iter_;
  return out;
}

void Schedule::restore(long iter, std::vector<long> last_activation) {
  if (static_cast<int>(last_activation.size()) != config_.n)
    throw ContractError("restore: expected one activation stamp per worker");
  for (long s : last_activation)
    if (s < -1 || s >= iter) throw ContractError("restore: activation stamp out of range");
  next_iter_ = iter;
  last_ = std::move(last_activation);
}

ScheduleAudit audit_schedule(const ScheduleConfig& config, long horizon) {
  if (horizon < 1) throw ConfigError("audit horizon must be >= 1");
  Schedule schedule(config);
  StalenessTracker tracker(config.n);
  ScheduleAudit audit;
  audit.horizon = horizon;
  audit.certified_T = schedule.certified_T();
  audit.caps = schedule.caps();
  audit.activations.assign(static_cast<std::size_t>(config.n), 0);
  for (long t = 0; t < horizon; ++t) {
    const ActiveSet a = schedule.next();
    for (int i : a.workers) ++audit.activations[static_cast<std::size_t>(i)];
    tracker.advance(a);
  }
  audit.observed_max = tracker.observed_max();
  audit.max_gap = tracker.observed_per_worker();
  audit.frequency.resize(audit.activations.size());
  for (std::size_t i = 0; i < audit.activations.size(); ++i) {
    audit.frequency[i] = static_cast<double>(audit.activations[i]) / static_cast<double>(horizon);
    if (audit.max_gap[i] > audit.caps[i]) audit.violated = true;
  }
  return audit;
}

}  // namespace siag

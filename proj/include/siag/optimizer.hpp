#ifndef SIAG_OPTIMIZER_HPP
#define SIAG_OPTIMIZER_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "siag/error.hpp"
#include "siag/problem.hpp"
#include "siag/schedule.hpp"

namespace siag {

enum class Method { kSIAG, kIAG, kSGD };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::kSIAG: return "sIAG";
    case Method::kIAG: return "IAG";
    case Method::kSGD: return "SGD";
  }
  return "unknown";
}

inline Method method_from_string(std::string_view name) {
  if (name == "sIAG" || name == "siag") return Method::kSIAG;
  if (name == "IAG" || name == "iag") return Method::kIAG;
  if (name == "SGD" || name == "sgd") return Method::kSGD;
  throw ConfigError("unknown method '" + std::string(name) + "'");
}

/// Denominator of the non-aggregated SGD step.
enum class SgdNormalization { kWorkers, kActive };

/// eta_t: constant, or beta / (t + gamma).
struct StepSchedule {
  enum class Kind { kConstant, kInverseT };

  Kind kind = Kind::kConstant;
  double eta_const = 0.0;
  double beta = 0.0;
  double gamma = 0.0;

  static StepSchedule constant(double eta) { return {Kind::kConstant, eta, 0.0, 0.0}; }
  static StepSchedule inverse_t(double beta, double gamma) {
    return {Kind::kInverseT, 0.0, beta, gamma};
  }

  void validate() const {
    if (kind == Kind::kConstant) {
      if (!(eta_const >= 0.0) || !std::isfinite(eta_const))
        throw ConfigError("steps.eta must be finite and >= 0");
    } else if (!(beta > 0.0) || !(gamma > 0.0) || !std::isfinite(beta) || !std::isfinite(gamma)) {
      throw ConfigError("steps.beta and steps.gamma must be finite and > 0");
    }
  }

  /// Step at iteration t; negative t is clamped to 0.
  double operator()(long t) const noexcept {
    if (kind == Kind::kConstant) return eta_const;
    return beta / (static_cast<double>(t < 0 ? 0 : t) + gamma);
  }

  friend bool operator==(const StepSchedule&, const StepSchedule&) = default;
};

inline double step_size(const StepSchedule& schedule, long t) { return schedule(t); }

/**
 * The server's n-slot buffer of latest reported gradients and its running sum.
 *
 * Slot i starts at zero with stamp -1 and is overwritten whenever worker i
 * reports. The running sum follows the incremental recursion
 * g^t = g^{t-1} - old_i + new_i, except when every slot is replaced at once,
 * in which case it is rebuilt from the slots in ascending worker order.
 */
template <typename Scalar = double>
class GradientBuffer {
 public:
  using VectorType = Vector<Scalar>;

  GradientBuffer() = default;
  GradientBuffer(int n, int d)
      : slots_(Matrix<Scalar>::Zero(d, n)),
        stamps_(static_cast<std::size_t>(n), -1),
        running_sum_(VectorType::Zero(d)) {}

  int workers() const noexcept { return static_cast<int>(slots_.cols()); }
  int dim() const noexcept { return static_cast<int>(slots_.rows()); }

  auto slot(int worker) const { return slots_.col(worker); }
  const Matrix<Scalar>& slots() const noexcept { return slots_; }
  long stamp(int worker) const { return stamps_.at(static_cast<std::size_t>(worker)); }
  const std::vector<long>& stamps() const noexcept { return stamps_; }
  const VectorType& running_sum() const noexcept { return running_sum_; }

  template <typename Derived>
  void replace(int worker, const Eigen::MatrixBase<Derived>& grad, long stamp) {
    running_sum_ -= slots_.col(worker);
    running_sum_ += grad;
    slots_.col(worker) = grad;
    stamps_[static_cast<std::size_t>(worker)] = stamp;
  }

  template <typename Derived>
  void overwrite(int worker, const Eigen::MatrixBase<Derived>& grad, long stamp) {
    slots_.col(worker) = grad;
    stamps_[static_cast<std::size_t>(worker)] = stamp;
  }

  /// sum_i slots[i], ascending worker order.
  VectorType recompute_sum() const {
    VectorType sum = VectorType::Zero(dim());
    for (int i = 0; i < workers(); ++i) sum += slots_.col(i);
    return sum;
  }

  void resync() { running_sum_ = recompute_sum(); }

  /// Largest per-coordinate gap between the running and the recomputed sum.
  Scalar drift() const { return (running_sum_ - recompute_sum()).cwiseAbs().maxCoeff(); }

  /// Restores raw state (checkpoint load).
  void assign(Matrix<Scalar> slots, std::vector<long> stamps, VectorType running_sum) {
    slots_ = std::move(slots);
    stamps_ = std::move(stamps);
    running_sum_ = std::move(running_sum);
  }

 private:
  Matrix<Scalar> slots_;
  std::vector<long> stamps_;
  VectorType running_sum_;
};

/// Divergence guard on ||w||.
inline constexpr double kDivergenceNorm = 1e9;

template <typename Scalar = double>
struct ServerState {
  using VectorType = Vector<Scalar>;

  Vector<Scalar> w;
  long t = 0;
  GradientBuffer<Scalar> buffer;
  Method method = Method::kSIAG;
  SgdNormalization sgd_normalization = SgdNormalization::kWorkers;

  ServerState() = default;
  ServerState(Method m, VectorType w0, int n)
      : w(std::move(w0)), buffer(n, static_cast<int>(w.size())), method(m) {}

  int workers() const noexcept { return buffer.workers(); }
  int dim() const noexcept { return static_cast<int>(w.size()); }
};

namespace detail {

template <typename Scalar>
void check_samples(const ServerState<Scalar>& state, const ActiveSet& active,
                   const std::vector<GradientSample<Scalar>>& samples, const char* what) {
  if (active.iter != state.t)
    throw ContractError(std::string(what) + ": active set is for iteration " +
                        std::to_string(active.iter) + " but the server is at " +
                        std::to_string(state.t));
  active.validate(state.workers());
  if (samples.size() != active.workers.size())
    throw ContractError(std::string(what) + ": expected " + std::to_string(active.workers.size()) +
                        " samples, got " + std::to_string(samples.size()));
  std::vector<char> seen(static_cast<std::size_t>(state.workers()), 0);
  for (const auto& s : samples) {
    if (!active.contains(s.worker))
      throw ContractError(std::string(what) + ": sample from inactive worker " +
                          std::to_string(s.worker));
    if (seen[static_cast<std::size_t>(s.worker)]++)
      throw ContractError(std::string(what) + ": duplicate sample from worker " +
                          std::to_string(s.worker));
    if (s.iter_stamp != state.t)
      throw ContractError(std::string(what) + ": sample of worker " + std::to_string(s.worker) +
                          " computed at iteration " + std::to_string(s.iter_stamp) +
                          ", expected " + std::to_string(state.t));
    if (s.grad.size() != state.dim())
      throw ContractError(std::string(what) + ": gradient dimension mismatch");
  }
}

/// Samples reordered by ascending worker index.
template <typename Scalar>
std::vector<const GradientSample<Scalar>*> by_worker(
    const std::vector<GradientSample<Scalar>>& samples) {
  std::vector<const GradientSample<Scalar>*> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(&s);
  std::sort(out.begin(), out.end(),
            [](const auto* a, const auto* b) { return a->worker < b->worker; });
  return out;
}

template <typename Scalar>
void guard(const ServerState<Scalar>& state) {
  const Scalar norm = state.w.norm();
  if (!state.w.allFinite() || !(static_cast<double>(norm) <= kDivergenceNorm)) {
    std::ostringstream msg;
    msg << "iterate diverged at iteration " << state.t << ": ||w|| = " << norm
        << " (step size too large for stability?)";
    throw DivergenceError(msg.str(), state.t);
  }
}

template <typename Scalar>
void descend(ServerState<Scalar>& state, const Vector<Scalar>& direction, Scalar scale) {
  state.w -= scale * direction;
  ++state.t;
  guard(state);
}

}  // namespace detail

/// Stores the fresh gradients of A_t in the buffer (buffer update of the sIAG loop).
template <typename Scalar>
void report_gradients(ServerState<Scalar>& state, const ActiveSet& active,
                      const std::vector<GradientSample<Scalar>>& samples) {
  detail::check_samples(state, active, samples, "report_gradients");
  const bool full = static_cast<int>(active.workers.size()) == state.workers();
  for (const auto* s : detail::by_worker(samples)) {
    if (full)
      state.buffer.overwrite(s->worker, s->grad, state.t);
    else
      state.buffer.replace(s->worker, s->grad, state.t);
  }
  if (full) state.buffer.resync();
}

/// w^{t+1} = w^t - (eta_t / n) * sum_i g_i.
template <typename Scalar>
void siag_step(ServerState<Scalar>& state, const StepSchedule& steps) {
  const auto scale = static_cast<Scalar>(steps(state.t)) / static_cast<Scalar>(state.workers());
  detail::descend(state, state.buffer.running_sum(), scale);
}

/// IAG buffer update: active slots take the exact gradient at w^t.
template <typename Scalar>
void report_exact_gradients(ServerState<Scalar>& state, const LsqInstance<Scalar>& instance,
                            const ActiveSet& active) {
  if (active.iter != state.t) throw ContractError("report_exact_gradients: iteration mismatch");
  active.validate(state.workers());
  const bool full = static_cast<int>(active.workers.size()) == state.workers();
  for (int i : active.workers) {
    if (full)
      state.buffer.overwrite(i, exact_gradient(instance, i, state.w), state.t);
    else
      state.buffer.replace(i, exact_gradient(instance, i, state.w), state.t);
  }
  if (full) state.buffer.resync();
}

/// Refreshes active slots with exact gradients at w^t, then takes the aggregated step.
template <typename Scalar>
void iag_step(ServerState<Scalar>& state, const LsqInstance<Scalar>& instance,
              const ActiveSet& active, const StepSchedule& steps) {
  if (state.method != Method::kIAG) throw ContractError("iag_step on a non-IAG server");
  report_exact_gradients(state, instance, active);
  siag_step(state, steps);
}

/// Non-aggregated step on the gradients reported at t only.
template <typename Scalar>
void sgd_step(ServerState<Scalar>& state, const ActiveSet& active,
              const std::vector<GradientSample<Scalar>>& samples, const StepSchedule& steps) {
  if (state.method != Method::kSGD) throw ContractError("sgd_step on a non-SGD server");
  detail::check_samples(state, active, samples, "sgd_step");
  Vector<Scalar> direction = Vector<Scalar>::Zero(state.dim());
  for (const auto* s : detail::by_worker(samples)) direction += s->grad;
  const Scalar denom = state.sgd_normalization == SgdNormalization::kActive
                           ? static_cast<Scalar>(active.workers.size())
                           : static_cast<Scalar>(state.workers());
  detail::descend(state, direction, static_cast<Scalar>(steps(state.t)) / denom);
}

// Checkpoints are line-oriented CSV; every floating-point value is written in
// C99 hexadecimal notation so a reload is bit-exact.
//
//   siag-checkpoint,1
//   method,<sIAG|IAG|SGD>
//   sgd_normalization,<n|active>
//   t,<iteration>
//   n,<workers>
//   d,<dimension>
//   w,<x_1>,...,<x_d>
//   running_sum,<x_1>,...,<x_d>
//   slot,<worker>,<stamp>,<x_1>,...,<x_d>     (n lines, ascending worker)

namespace detail {
inline std::string hex(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", x);
  return buf;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  return out;
}

inline double parse_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw IoError("checkpoint: bad number '" + s + "'");
  return v;
}

inline long parse_long(const std::string& s) {
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0') throw IoError("checkpoint: bad integer '" + s + "'");
  return v;
}
}  // namespace detail

template <typename Scalar>
void save_checkpoint(std::ostream& out, const ServerState<Scalar>& state) {
  auto write_vec = [&](const auto& v) {
    for (Eigen::Index k = 0; k < v.size(); ++k) out << ',' << detail::hex(static_cast<double>(v[k]));
    out << '\n';
  };
  out << "siag-checkpoint,1\n";
  out << "method," << to_string(state.method) << '\n';
  out << "sgd_normalization,"
      << (state.sgd_normalization == SgdNormalization::kActive ? "active" : "n") << '\n';
  out << "t," << state.t << '\n';
  out << "n," << state.workers() << '\n';
  out << "d," << state.dim() << '\n';
  out << "w";
  write_vec(state.w);
  out << "running_sum";
  write_vec(state.buffer.running_sum());
  for (int i = 0; i < state.workers(); ++i) {
    out << "slot," << i << ',' << state.buffer.stamp(i);
    write_vec(state.buffer.slot(i));
  }
  if (!out) throw IoError("checkpoint: write failed");
}

template <typename Scalar = double>
ServerState<Scalar> load_checkpoint(std::istream& in) {
  std::string line;
  auto next = [&](std::string_view key) {
    if (!std::getline(in, line)) throw IoError("checkpoint: truncated before '" + std::string(key) + "'");
    auto cells = detail::split_csv(line);
    if (cells.empty() || cells[0] != key)
      throw IoError("checkpoint: expected '" + std::string(key) + "' line");
    return cells;
  };
  auto header = next("siag-checkpoint");
  if (header.size() != 2 || header[1] != "1") throw IoError("checkpoint: unsupported version");
  ServerState<Scalar> state;
  state.method = method_from_string(next("method").at(1));
  state.sgd_normalization =
      next("sgd_normalization").at(1) == "active" ? SgdNormalization::kActive : SgdNormalization::kWorkers;
  state.t = detail::parse_long(next("t").at(1));
  const auto n = static_cast<int>(detail::parse_long(next("n").at(1)));
  const auto d = static_cast<int>(detail::parse_long(next("d").at(1)));
  if (n < 1 || d < 1) throw IoError("checkpoint: bad dimensions");

  auto read_vec = [&](const std::vector<std::string>& cells, std::size_t offset) {
    if (cells.size() != offset + static_cast<std::size_t>(d)) throw IoError("checkpoint: bad vector length");
    Vector<Scalar> v(d);
    for (int k = 0; k < d; ++k)
      v[k] = static_cast<Scalar>(detail::parse_double(cells[offset + static_cast<std::size_t>(k)]));
    return v;
  };
  state.w = read_vec(next("w"), 1);
  Vector<Scalar> sum = read_vec(next("running_sum"), 1);
  Matrix<Scalar> slots(d, n);
  std::vector<long> stamps(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    auto cells = next("slot");
    if (cells.size() < 3 || detail::parse_long(cells[1]) != i) throw IoError("checkpoint: slot order");
    stamps[static_cast<std::size_t>(i)] = detail::parse_long(cells[2]);
    slots.col(i) = read_vec(cells, 3);
  }
  state.buffer = GradientBuffer<Scalar>(n, d);
  state.buffer.assign(std::move(slots), std::move(stamps), std::move(sum));
  return state;
}

}  // namespace siag

#endif  // SIAG_OPTIMIZER_HPP

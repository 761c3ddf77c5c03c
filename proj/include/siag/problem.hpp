#ifndef SIAG_PROBLEM_HPP
#define SIAG_PROBLEM_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>

#include "siag/error.hpp"
#include "siag/rng.hpp"

namespace siag {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Size and noise parameters of the synthetic streaming least-squares problem.
struct ProblemSpec {
  int n = 1;                ///< workers
  int d = 1;                ///< parameter dimension
  int p = 1;                ///< rows of each sampled design matrix
  double noise_std = 0.0;   ///< observation noise of y, not the variance constant
  std::uint64_t master_seed = 0;

  void validate() const {
    if (n < 1) throw ConfigError("problem.n must be >= 1");
    if (d < 1) throw ConfigError("problem.d must be >= 1");
    if (p < 1) throw ConfigError("problem.p must be >= 1");
    if (!(noise_std >= 0.0) || !std::isfinite(noise_std))
      throw ConfigError("problem.noise_std must be finite and >= 0");
  }

  friend bool operator==(const ProblemSpec&, const ProblemSpec&) = default;
};

/**
 * Heterogeneous least-squares instance.
 *
 * Worker i observes xi = (A, y) with A in R^{p x d}, A_jk ~ N(0, 1) and
 * y ~ N(A w_i*, noise_std^2 I_p), and the loss 0.5 * ||A w - y||^2. Since
 * E[A^T A] = p I the expected local gradient is p (w - w_i*), so the expected
 * objective has mu = L = p and its minimizer is the mean of the w_i*.
 *
 * Immutable after construction; safe to share between concurrent trials.
 */
template <typename Scalar = double>
class LsqInstance {
 public:
  using VectorType = Vector<Scalar>;
  using MatrixType = Matrix<Scalar>;

  /// `local_optima` holds w_i* as column i (d x n).
  LsqInstance(ProblemSpec spec, MatrixType local_optima)
      : spec_(std::move(spec)), w_star_local_(std::move(local_optima)) {
    spec_.validate();
    if (w_star_local_.rows() != spec_.d || w_star_local_.cols() != spec_.n)
      throw ConfigError("local optima must be a d x n matrix");
    w_star_ = VectorType::Zero(spec_.d);
    for (int i = 0; i < spec_.n; ++i) w_star_ += w_star_local_.col(i);
    w_star_ /= static_cast<Scalar>(spec_.n);
  }

  const ProblemSpec& spec() const noexcept { return spec_; }
  int workers() const noexcept { return spec_.n; }
  int dim() const noexcept { return spec_.d; }
  int rows() const noexcept { return spec_.p; }

  const MatrixType& local_optima() const noexcept { return w_star_local_; }
  auto local_optimum(int worker) const { return w_star_local_.col(worker); }
  const VectorType& optimum() const noexcept { return w_star_; }

  Scalar mu() const noexcept { return static_cast<Scalar>(spec_.p); }
  Scalar L() const noexcept { return static_cast<Scalar>(spec_.p); }

 private:
  ProblemSpec spec_;
  MatrixType w_star_local_;
  VectorType w_star_;
};

/// Draws w_i* i.i.d. uniform on [0,1]^d from the seed's instance stream.
template <typename Scalar = double>
LsqInstance<Scalar> generate_instance(const ProblemSpec& spec) {
  spec.validate();
  Stream rng(derive_key(spec.master_seed, {static_cast<std::uint64_t>(StreamTag::kInstance)}));
  Matrix<Scalar> local(spec.d, spec.n);
  for (int i = 0; i < spec.n; ++i)
    for (int k = 0; k < spec.d; ++k) local(k, i) = static_cast<Scalar>(rng.uniform());
  return LsqInstance<Scalar>(spec, std::move(local));
}

/// One oracle answer: a stochastic gradient of worker `worker` computed at
/// the iterate of iteration `iter_stamp`.
template <typename Scalar = double>
struct GradientSample {
  Vector<Scalar> grad;
  int worker = 0;
  long iter_stamp = 0;
};

namespace detail {
template <typename Derived>
void require_dim(const Eigen::MatrixBase<Derived>& w, int d, const char* what) {
  if (w.rows() != d || w.cols() != 1)
    throw ContractError(std::string(what) + ": expected a vector of dimension " +
                        std::to_string(d) + ", got " + std::to_string(w.rows()) + "x" +
                        std::to_string(w.cols()));
}
inline void require_worker(int worker, int n, const char* what) {
  if (worker < 0 || worker >= n)
    throw ContractError(std::string(what) + ": worker index " + std::to_string(worker) +
                        " out of range [0, " + std::to_string(n) + ")");
}
}  // namespace detail

/// A^T (A w - y): gradient of 0.5 ||A w - y||^2 for one realized data point.
template <typename DerivedA, typename DerivedY, typename DerivedW>
auto lsq_gradient(const Eigen::MatrixBase<DerivedA>& A, const Eigen::MatrixBase<DerivedY>& y,
                  const Eigen::MatrixBase<DerivedW>& w) {
  using Scalar = typename DerivedW::Scalar;
  Vector<Scalar> residual = A * w - y;
  return Vector<Scalar>(A.transpose() * residual);
}

/**
 * Fresh stochastic gradient for `worker` at `w`.
 *
 * Consumes p*d + p normals from `rng`: the entries of A in column-major
 * order, then the observation noise. The caller owns the stream and is
 * responsible for never replaying it (each data point is used once).
 */
template <typename Scalar, typename DerivedW>
GradientSample<Scalar> sample_gradient(const LsqInstance<Scalar>& inst, int worker,
                                       const Eigen::MatrixBase<DerivedW>& w, Stream& rng,
                                       long iter_stamp = 0) {
  detail::require_worker(worker, inst.workers(), "sample_gradient");
  detail::require_dim(w, inst.dim(), "sample_gradient");
  const int p = inst.rows();
  const int d = inst.dim();
  const auto sigma = static_cast<Scalar>(inst.spec().noise_std);

  Matrix<Scalar> A(p, d);
  for (Eigen::Index k = 0; k < A.size(); ++k) A.data()[k] = static_cast<Scalar>(rng.normal());
  Vector<Scalar> noise(p);
  for (int j = 0; j < p; ++j) noise[j] = static_cast<Scalar>(rng.normal());

  // A w - y with y = A w_i* + sigma * noise
  const Vector<Scalar> offset = w - inst.local_optimum(worker);
  Vector<Scalar> residual = A * offset;
  if (sigma != Scalar(0)) residual -= sigma * noise;

  GradientSample<Scalar> out;
  out.grad = A.transpose() * residual;
  out.worker = worker;
  out.iter_stamp = iter_stamp;
  return out;
}

/// Closed-form expected local gradient p (w - w_i*).
template <typename Scalar, typename DerivedW>
Vector<Scalar> exact_gradient(const LsqInstance<Scalar>& inst, int worker,
                              const Eigen::MatrixBase<DerivedW>& w) {
  detail::require_worker(worker, inst.workers(), "exact_gradient");
  detail::require_dim(w, inst.dim(), "exact_gradient");
  return inst.L() * (w - inst.local_optimum(worker));
}

/// (1/n) sum_i grad F_i(w), summed in ascending worker order.
template <typename Scalar, typename DerivedW>
Vector<Scalar> mean_exact_gradient(const LsqInstance<Scalar>& inst,
                                   const Eigen::MatrixBase<DerivedW>& w) {
  detail::require_dim(w, inst.dim(), "mean_exact_gradient");
  Vector<Scalar> sum = Vector<Scalar>::Zero(inst.dim());
  for (int i = 0; i < inst.workers(); ++i) sum += exact_gradient(inst, i, w);
  return sum / static_cast<Scalar>(inst.workers());
}

struct NoiseProbe {
  double mean = 0.0;    ///< estimate of E||grad f_i(w; xi) - grad F_i(w)||^2
  double std_err = 0.0;  ///< standard error of that estimate
  long samples = 0;
};

/// Monte Carlo estimate of the gradient noise variance of one worker at `w`.
template <typename Scalar, typename DerivedW>
NoiseProbe empirical_noise_variance(const LsqInstance<Scalar>& inst, int worker,
                                    const Eigen::MatrixBase<DerivedW>& w, long samples,
                                    Stream& rng) {
  if (samples < 2) throw ConfigError("empirical_noise_variance needs at least 2 samples");
  const Vector<Scalar> expected = exact_gradient(inst, worker, w);
  double sum = 0.0;
  double sum_sq = 0.0;
  for (long s = 0; s < samples; ++s) {
    const auto g = sample_gradient(inst, worker, w, rng);
    const double dev = static_cast<double>((g.grad - expected).squaredNorm());
    sum += dev;
    sum_sq += dev * dev;
  }
  const double m = sum / static_cast<double>(samples);
  const double var = std::max(0.0, (sum_sq - sum * m) / static_cast<double>(samples - 1));
  return {m, std::sqrt(var / static_cast<double>(samples)), samples};
}

/**
 * Smallest sigma^2 with E||grad f_i(w;xi) - grad F_i(w)||^2 <= sigma^2 (1 + ||w - w*||^2)
 * for every worker at the probed point. Draws come from a dedicated probe
 * stream of the instance seed, so the result is reproducible.
 */
template <typename Scalar, typename DerivedW>
double empirical_noise_bound(const LsqInstance<Scalar>& inst, const Eigen::MatrixBase<DerivedW>& w,
                             long samples, std::uint64_t probe_id = 0) {
  if (samples < 100) throw ConfigError("empirical_noise_bound needs at least 100 samples");
  detail::require_dim(w, inst.dim(), "empirical_noise_bound");
  const double scale = 1.0 + static_cast<double>((w - inst.optimum()).squaredNorm());
  double worst = 0.0;
  for (int i = 0; i < inst.workers(); ++i) {
    Stream rng(derive_key(inst.spec().master_seed,
                          {static_cast<std::uint64_t>(StreamTag::kNoiseProbe), probe_id,
                           static_cast<std::uint64_t>(i)}));
    worst = std::max(worst, empirical_noise_variance(inst, i, w, samples, rng).mean / scale);
  }
  return worst;
}

}  // namespace siag

#endif  // SIAG_PROBLEM_HPP

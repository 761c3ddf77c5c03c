#ifndef SIAG_THEORY_HPP
#define SIAG_THEORY_HPP

#include <iosfwd>
#include <string>
#include <vector>

#include "siag/optimizer.hpp"

namespace siag {

/**
 * Constants of the sIAG convergence bound for step sizes beta / (t + gamma):
 *
 *   C_L     = 20 L^2 + 2 sigma^2 / n
 *   rho_bar = 1 + 2T + (mu/2 + 5 L^2 / mu) beta T
 *   gamma  >= 2T + max{16 C_L beta^2 rho_bar / (mu beta - 2),
 *                      sqrt(8 C_L beta^2 rho_bar / (mu beta - 4))}
 *   delta1  = 32 beta^2 rho_bar / (mu beta - 2) + 1
 *   delta2  = gamma^2 E0
 *
 * and the bound E_t <= delta1 sigma^2 / (n (gamma + t)) + delta2 / (gamma + t)^2.
 */
struct AnalysisConstants {
  double mu = 0.0;
  double L = 0.0;
  double sigma2 = 0.0;
  int n = 1;
  int T = 0;
  double beta = 0.0;
  double gamma = 0.0;
  double gamma_min = 0.0;
  double C_L = 0.0;
  double rho_bar = 0.0;
  double delta1 = 0.0;
  double delta2 = 0.0;
  double E0 = 0.0;

  StepSchedule steps() const { return StepSchedule::inverse_t(beta, gamma); }
};

double lemma_constant_CL(double L, double sigma2, int n);
double rho_bar(double mu, double L, int T, double beta);
/// Smallest admissible gamma for (mu, L, sigma2, n, T, beta).
double gamma_lower_bound(double mu, double L, double sigma2, int n, int T, double beta);

/// Throws ConfigError unless mu > 0, L >= mu, beta > 4/mu, T >= 0, n >= 1, sigma2 >= 0, E0 >= 0.
AnalysisConstants derive_constants(double mu, double L, double sigma2, int n, int T, double beta,
                                   double E0);

/// Same constants with a larger gamma (delta2 recomputed). Throws if gamma < gamma_min.
AnalysisConstants with_gamma(AnalysisConstants c, double gamma);

/// Empty when the constants satisfy every precondition of the bound, else the reason.
std::string admissibility_error(const AnalysisConstants& c);

double theorem_bound(const AnalysisConstants& c, long t);

/// Monte Carlo estimate of E_t = E||w^t - w*||^2.
struct GapEstimate {
  long t = 0;
  double mean = 0.0;
  double std_err = 0.0;
  long trials = 0;
};

/// Mean and standard error of a sample.
GapEstimate estimate(long t, const std::vector<double>& values);

struct CheckRow {
  long t = 0;
  int worker = -1;  ///< worker the row refers to, -1 when not per-worker
  double lhs = 0.0;
  double rhs = 0.0;
  double margin = 0.0;  ///< slack of the inequality, positive when satisfied
  double lhs_err = 0.0;
  double rhs_err = 0.0;
  bool violated = false;
};

/// Outcome of checking one inequality along a curve or ensemble.
struct CheckReport {
  std::string name;
  bool constants_valid = true;
  std::string message;
  std::vector<CheckRow> rows;

  int violations() const;
  /// Smallest margin over all rows, in units of the row's combined standard error
  /// when that is positive, else the raw margin.
  double worst_margin() const;
  bool passed() const { return constants_valid && violations() == 0; }
};

/// Confidence multiplier of every statistical verdict.
inline constexpr double kBand = 3.0;

/// Flags t where mean - 3 stderr exceeds the bound.
CheckReport check_theorem(const AnalysisConstants& c, const std::vector<GapEstimate>& curve);

/// Per-trial quantities observed at one probe iteration t.
struct LemmaProbe {
  long t = 0;
  std::vector<double> grad_sq;             ///< ||g^t / n||^2 per trial
  std::vector<double> inner;               ///< <w^t - w*, g^t / n> per trial
  std::vector<std::vector<double>> lag_sq; ///< [worker][trial] ||w^t - w^{tau_i(t)}||^2
  long window_start = 0;                   ///< (t - 2T)_+
  std::vector<std::vector<double>> gap;    ///< [s - window_start][trial] ||w^s - w*||^2

  /// E_s estimate for s in [window_start, t].
  GapEstimate gap_at(long s) const;
  /// max E_s over s in [max(from, window_start), t] and the standard error of the maximizer.
  GapEstimate gap_max(long from) const;
};

struct LemmaEnsemble {
  int n = 1;
  int T = 0;
  StepSchedule steps;
  long trials = 0;
  std::vector<LemmaProbe> probes;
};

/// E||g^t/n||^2 <= 2 sigma^2/n + C_L max_{s in [(t-T)+, t]} E_s
CheckReport check_lemma1(const LemmaEnsemble& ensemble, const AnalysisConstants& c);
/// E<w^t - w*, g^t/n> >= (mu/4) E_t - [...] E_t^max - [...] sigma^2/n
CheckReport check_lemma2(const LemmaEnsemble& ensemble, const AnalysisConstants& c);
/// E||w^t - w^{tau_i(t)}||^2 <= T^2 eta_{t-T}^2 (2 sigma^2/n + C_L E_t^max), per worker
CheckReport check_lemma3(const LemmaEnsemble& ensemble, const AnalysisConstants& c);

/// CSV with header t,worker,lhs,rhs,margin,stderr,rhs_stderr,violated.
void write_report_csv(std::ostream& out, const CheckReport& report);
/// One-paragraph human-readable summary.
std::string summarize(const CheckReport& report);
/// Plain-text table of the constants and the bound at the given iterations.
std::string format_constants(const AnalysisConstants& c, const std::vector<long>& t_grid);

}  // namespace siag

#endif  // SIAG_THEORY_HPP

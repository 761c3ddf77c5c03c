#include "siag/theory.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include "siag/error.hpp"

namespace siag {

double lemma_constant_CL(double L, double sigma2, int n) {
  return 20.0 * L * L + 2.0 * sigma2 / static_cast<double>(n);
}

double rho_bar(double mu, double L, int T, double beta) {
  return 1.0 + 2.0 * T + (mu / 2.0 + 5.0 * L * L / mu) * beta * T;
}

double gamma_lower_bound(double mu, double L, double sigma2, int n, int T, double beta) {
  const double cl = lemma_constant_CL(L, sigma2, n);
  const double rho = rho_bar(mu, L, T, beta);
  const double b2 = beta * beta;
  const double first = 16.0 * cl * b2 * rho / (mu * beta - 2.0);
  const double second = std::sqrt(8.0 * cl * b2 * rho / (mu * beta - 4.0));
  return 2.0 * T + std::max(first, second);
}

namespace {
std::string domain_error(double mu, double L, double sigma2, int n, int T, double beta,
                         double E0) {
  std::ostringstream msg;
  if (!(mu > 0.0)) msg << "mu must be > 0 (got " << mu << ")";
  else if (!(L >= mu)) msg << "L must be >= mu (got L=" << L << ", mu=" << mu << ")";
  else if (!(beta > 4.0 / mu))
    msg << "beta must exceed 4/mu = " << 4.0 / mu << " (got beta=" << beta
        << "); the induction step of the bound needs mu*beta > 4";
  else if (T < 0) msg << "T must be >= 0";
  else if (n < 1) msg << "n must be >= 1";
  else if (!(sigma2 >= 0.0)) msg << "sigma2 must be >= 0";
  else if (!(E0 >= 0.0)) msg << "E0 must be >= 0";
  return msg.str();
}
}  // namespace

AnalysisConstants derive_constants(double mu, double L, double sigma2, int n, int T, double beta,
                                   double E0) {
  if (auto err = domain_error(mu, L, sigma2, n, T, beta, E0); !err.empty()) throw ConfigError(err);
  AnalysisConstants c;
  c.mu = mu;
  c.L = L;
  c.sigma2 = sigma2;
  c.n = n;
  c.T = T;
  c.beta = beta;
  c.E0 = E0;
  c.C_L = lemma_constant_CL(L, sigma2, n);
  c.rho_bar = rho_bar(mu, L, T, beta);
  c.gamma_min = gamma_lower_bound(mu, L, sigma2, n, T, beta);
  c.gamma = c.gamma_min;
  c.delta1 = 32.0 * beta * beta * c.rho_bar / (mu * beta - 2.0) + 1.0;
  c.delta2 = c.gamma * c.gamma * E0;
  return c;
}

AnalysisConstants with_gamma(AnalysisConstants c, double gamma) {
  if (!(gamma >= c.gamma_min))
    throw ConfigError("gamma must be >= " + std::to_string(c.gamma_min));
  c.gamma = gamma;
  c.delta2 = gamma * gamma * c.E0;
  return c;
}

std::string admissibility_error(const AnalysisConstants& c) {
  if (auto err = domain_error(c.mu, c.L, c.sigma2, c.n, c.T, c.beta, c.E0); !err.empty())
    return err;
  const double need = gamma_lower_bound(c.mu, c.L, c.sigma2, c.n, c.T, c.beta);
  if (!(c.gamma >= need * (1.0 - 1e-12)))
    return "gamma = " + std::to_string(c.gamma) + " is below the admissible bound " +
           std::to_string(need);
  return {};
}

double theorem_bound(const AnalysisConstants& c, long t) {
  const double s = c.gamma + static_cast<double>(t);
  return c.delta1 * c.sigma2 / (static_cast<double>(c.n) * s) + c.delta2 / (s * s);
}

GapEstimate estimate(long t, const std::vector<double>& values) {
  GapEstimate g;
  g.t = t;
  g.trials = static_cast<long>(values.size());
  if (values.empty()) return g;
  double sum = 0.0;
  for (double v : values) sum += v;
  g.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - g.mean) * (v - g.mean);
    g.std_err = std::sqrt(ss / static_cast<double>(values.size() - 1) /
                          static_cast<double>(values.size()));
  }
  return g;
}

int CheckReport::violations() const {
  return static_cast<int>(std::count_if(rows.begin(), rows.end(),
                                        [](const CheckRow& r) { return r.violated; }));
}

double CheckReport::worst_margin() const {
  double worst = std::numeric_limits<double>::infinity();
  for (const auto& r : rows) {
    const double err = std::hypot(r.lhs_err, r.rhs_err);
    worst = std::min(worst, err > 0.0 ? r.margin / err : r.margin);
  }
  return worst;
}

CheckReport check_theorem(const AnalysisConstants& c, const std::vector<GapEstimate>& curve) {
  CheckReport report;
  report.name = "theorem";
  if (auto err = admissibility_error(c); !err.empty()) {
    report.constants_valid = false;
    report.message = "constants not admissible: " + err;
    return report;
  }
  for (const auto& g : curve) {
    CheckRow row;
    row.t = g.t;
    row.lhs = g.mean;
    row.rhs = theorem_bound(c, g.t);
    row.margin = row.rhs - row.lhs;
    row.lhs_err = g.std_err;
    row.violated = g.mean - kBand * g.std_err > row.rhs;
    report.rows.push_back(row);
  }
  return report;
}

GapEstimate LemmaProbe::gap_at(long s) const {
  const long k = s - window_start;
  if (k < 0 || k >= static_cast<long>(gap.size()))
    throw ContractError("lemma probe at t=" + std::to_string(t) + " has no record for s=" +
                        std::to_string(s));
  return estimate(s, gap[static_cast<std::size_t>(k)]);
}

GapEstimate LemmaProbe::gap_max(long from) const {
  GapEstimate best;
  best.mean = -1.0;
  for (long s = std::max(from, window_start); s <= t; ++s) {
    const GapEstimate g = gap_at(s);
    if (g.mean > best.mean) best = g;
  }
  return best;
}

namespace {

struct Frame {
  double eta;       ///< eta_{(t-T)+}
  GapEstimate Et;
  GapEstimate Emax; ///< over [(t-2T)+, t]
};

Frame frame(const LemmaEnsemble& e, const LemmaProbe& p) {
  Frame f;
  f.eta = e.steps(std::max(0L, p.t - e.T));
  f.Et = p.gap_at(p.t);
  f.Emax = p.gap_max(p.t - 2L * e.T);
  return f;
}

CheckReport start(const char* name, const AnalysisConstants& c) {
  CheckReport r;
  r.name = name;
  // the lemmas hold for any step sequence; only the problem constants must be sane
  if (!(c.mu > 0.0) || !(c.L >= c.mu) || !(c.sigma2 >= 0.0) || c.n < 1 || c.T < 0) {
    r.constants_valid = false;
    r.message = "problem constants out of domain";
  }
  return r;
}

}  // namespace

CheckReport check_lemma1(const LemmaEnsemble& ensemble, const AnalysisConstants& c) {
  CheckReport report = start("lemma1", c);
  if (!report.constants_valid) return report;
  for (const auto& p : ensemble.probes) {
    const GapEstimate lhs = estimate(p.t, p.grad_sq);
    const GapEstimate emax = p.gap_max(p.t - ensemble.T);
    CheckRow row;
    row.t = p.t;
    row.lhs = lhs.mean;
    row.lhs_err = lhs.std_err;
    row.rhs = 2.0 * c.sigma2 / c.n + c.C_L * emax.mean;
    row.rhs_err = c.C_L * emax.std_err;
    row.margin = row.rhs - row.lhs;
    row.violated = row.lhs - kBand * row.lhs_err > row.rhs + kBand * row.rhs_err;
    report.rows.push_back(row);
  }
  return report;
}

CheckReport check_lemma2(const LemmaEnsemble& ensemble, const AnalysisConstants& c) {
  CheckReport report = start("lemma2", c);
  if (!report.constants_valid) return report;
  const double T = ensemble.T;
  for (const auto& p : ensemble.probes) {
    const Frame f = frame(ensemble, p);
    const GapEstimate lhs = estimate(p.t, p.inner);
    const double gap_coeff = c.C_L * T * f.eta +
                             (c.mu / 4.0 + 5.0 * c.L * c.L / (2.0 * c.mu)) * c.C_L * T * T * f.eta * f.eta;
    const double noise_coeff = 2.0 * T * f.eta + (c.mu / 2.0 + 5.0 * c.L * c.L / c.mu) * T * T * f.eta * f.eta;
    CheckRow row;
    row.t = p.t;
    row.lhs = lhs.mean;
    row.lhs_err = lhs.std_err;
    row.rhs = c.mu / 4.0 * f.Et.mean - gap_coeff * f.Emax.mean - noise_coeff * c.sigma2 / c.n;
    row.rhs_err = std::hypot(c.mu / 4.0 * f.Et.std_err, gap_coeff * f.Emax.std_err);
    row.margin = row.lhs - row.rhs;
    row.violated = row.lhs + kBand * row.lhs_err < row.rhs - kBand * row.rhs_err;
    report.rows.push_back(row);
  }
  return report;
}

CheckReport check_lemma3(const LemmaEnsemble& ensemble, const AnalysisConstants& c) {
  CheckReport report = start("lemma3", c);
  if (!report.constants_valid) return report;
  const double T = ensemble.T;
  for (const auto& p : ensemble.probes) {
    const Frame f = frame(ensemble, p);
    const double scale = T * T * f.eta * f.eta;
    const double rhs = scale * (2.0 * c.sigma2 / c.n + c.C_L * f.Emax.mean);
    const double rhs_err = scale * c.C_L * f.Emax.std_err;
    for (std::size_t i = 0; i < p.lag_sq.size(); ++i) {
      const GapEstimate lhs = estimate(p.t, p.lag_sq[i]);
      CheckRow row;
      row.t = p.t;
      row.worker = static_cast<int>(i);
      row.lhs = lhs.mean;
      row.lhs_err = lhs.std_err;
      row.rhs = rhs;
      row.rhs_err = rhs_err;
      row.margin = rhs - lhs.mean;
      row.violated = row.lhs - kBand * row.lhs_err > row.rhs + kBand * row.rhs_err;
      report.rows.push_back(row);
    }
  }
  return report;
}

void write_report_csv(std::ostream& out, const CheckReport& report) {
  out << "t,worker,lhs,rhs,margin,stderr,rhs_stderr,violated\n";
  out << std::setprecision(17);
  for (const auto& r : report.rows)
    out << r.t << ',' << r.worker << ',' << r.lhs << ',' << r.rhs << ',' << r.margin << ','
        << r.lhs_err << ',' << r.rhs_err << ',' << (r.violated ? 1 : 0) << '\n';
}

std::string summarize(const CheckReport& report) {
  std::ostringstream s;
  s << report.name << ": ";
  if (!report.constants_valid) {
    s << "INVALID (" << report.message << ")";
    return s.str();
  }
  s << report.rows.size() << " rows, " << report.violations() << " violation(s) at "
    << kBand << " standard errors";
  if (!report.rows.empty()) s << ", worst margin " << std::setprecision(4) << report.worst_margin();
  return s.str();
}

std::string format_constants(const AnalysisConstants& c, const std::vector<long>& t_grid) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2);
  s << "mu        " << c.mu << '\n'
    << "L         " << c.L << '\n'
    << "sigma2    " << c.sigma2 << '\n'
    << "n         " << c.n << '\n'
    << "T         " << c.T << '\n'
    << "beta      " << c.beta << '\n'
    << "E0        " << c.E0 << '\n'
    << "C_L       " << c.C_L << '\n'
    << "rho_bar   " << c.rho_bar << '\n'
    << "gamma_min " << c.gamma_min << '\n'
    << "gamma     " << c.gamma << '\n'
    << "delta1    " << c.delta1 << '\n'
    << "delta2    " << std::setprecision(6) << std::scientific << c.delta2 << '\n';
  if (!t_grid.empty()) {
    s << "\nt,bound\n";
    for (long t : t_grid) s << t << ',' << std::scientific << std::setprecision(6) << theorem_bound(c, t) << '\n';
  }
  return s.str();
}

}  // namespace siag

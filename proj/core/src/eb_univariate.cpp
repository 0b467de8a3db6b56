#include "ebmon/eb_univariate.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>

#include "ebmon/ranking.hpp"
#include "ebmon/stats.hpp"

namespace ebmon {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kLog2Pi = 1.8378770664093454836;

void validate_crudes(const std::vector<CrudeEffect>& crudes, std::size_t minimum) {
  if (crudes.size() < minimum) {
    throw ValidationError("prior fit requires at least " + std::to_string(minimum) +
                          " centres, got " + std::to_string(crudes.size()));
  }
  for (const CrudeEffect& c : crudes) {
    if (!std::isfinite(c.theta_hat) || !std::isfinite(c.s2) || c.s2 <= 0.0) {
      throw ValidationError("centre " + c.centre_id +
                            ": theta_hat and s2 must be finite with s2 > 0");
    }
  }
}

double marginal_loglik(const VectorXd& theta, const VectorXd& s2,
                       const VectorXd& fitted, double tau2) {
  double ll = 0.0;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double v = s2[i] + tau2;
    const double r = theta[i] - fitted[i];
    ll -= 0.5 * (kLog2Pi + std::log(v) + r * r / v);
  }
  return ll;
}

// Profile MLE of mu for fixed tau2 (precision-weighted mean). Shared by the
// EM finalization, the profile CI and the sensitivity sweep so that all three
// agree bitwise.
double profile_mu(const VectorXd& theta, const VectorXd& s2, double tau2) {
  double sw = 0.0, swt = 0.0;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double w = 1.0 / (s2[i] + tau2);
    sw += w;
    swt += w * theta[i];
  }
  return swt / sw;
}

VectorXd gls_gamma(const VectorXd& theta, const VectorXd& s2, const MatrixXd& V,
                   double tau2) {
  if (V.cols() == 1) {
    VectorXd g(1);
    g[0] = profile_mu(theta, s2, tau2);
    return g;
  }
  VectorXd w(theta.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i) w[i] = 1.0 / (s2[i] + tau2);
  const MatrixXd A = V.transpose() * w.asDiagonal() * V;
  const VectorXd b = V.transpose() * (w.asDiagonal() * theta);
  return A.ldlt().solve(b);
}

// Moment start for tau2 from weighted residuals (DerSimonian-Laird when V is
// the constant column).
double moment_tau2(const VectorXd& theta, const VectorXd& s2, const MatrixXd& V) {
  const Eigen::Index n = theta.size();
  const Eigen::Index p = V.cols();
  VectorXd w(n);
  for (Eigen::Index i = 0; i < n; ++i) w[i] = 1.0 / s2[i];
  const MatrixXd VtWV = V.transpose() * w.asDiagonal() * V;
  const VectorXd gamma = VtWV.ldlt().solve(V.transpose() * (w.asDiagonal() * theta));
  const VectorXd resid = theta - V * gamma;
  double q = 0.0, sw = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    q += w[i] * resid[i] * resid[i];
    sw += w[i];
  }
  const MatrixXd VtW2V = V.transpose() * w.cwiseProduct(w).asDiagonal() * V;
  const double denom = sw - (VtWV.ldlt().solve(VtW2V)).trace();
  if (denom <= 0.0) return 0.0;
  return std::max(0.0, (q - static_cast<double>(n - p)) / denom);
}

struct EngineResult {
  VectorXd gamma;
  double tau2 = 0.0;
  double loglik = 0.0;
  int iterations = 0;
  bool at_boundary = false;
  std::vector<double> trace;
};

// EM for theta_i ~ N(V_i'gamma, tau2), theta_hat_i | theta_i ~ N(theta_i, s_i^2).
EngineResult em_engine(const VectorXd& theta, const VectorXd& s2, const MatrixXd& V,
                       const EmOptions& opts) {
  const Eigen::Index n = theta.size();
  const double scale = stats::median({s2.data(), s2.data() + n});

  EngineResult res;
  res.gamma = gls_gamma(theta, s2, V, 0.0);
  // Starting EM at exactly tau2 = 0 would be a fixed point.
  res.tau2 = std::max(moment_tau2(theta, s2, V), 0.001 * scale);
  res.loglik = marginal_loglik(theta, s2, V * res.gamma, res.tau2);
  res.trace.push_back(res.loglik);

  const MatrixXd VtV = V.transpose() * V;
  Eigen::LDLT<MatrixXd> ols(VtV);

  VectorXd m(n);
  for (int iter = 1; iter <= opts.max_iterations; ++iter) {
    res.iterations = iter;
    const VectorXd fitted = V * res.gamma;
    double sum_v = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double b = res.tau2 / (res.tau2 + s2[i]);
      m[i] = fitted[i] + b * (theta[i] - fitted[i]);
      sum_v += b * s2[i];
    }
    res.gamma = ols.solve(V.transpose() * m);
    const VectorXd new_fitted = V * res.gamma;
    double rss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double r = m[i] - new_fitted[i];
      rss += r * r;
    }
    res.tau2 = (rss + sum_v) / static_cast<double>(n);

    const double ll = marginal_loglik(theta, s2, new_fitted, res.tau2);
    res.trace.push_back(ll);
    const double change = ll - res.loglik;
    res.loglik = ll;
    if (std::abs(change) < opts.loglik_tol) break;
  }

  // Self-consistency polish: gamma at the GLS optimum for the final tau2.
  // This maximizes the likelihood over gamma, so it cannot decrease it.
  res.gamma = gls_gamma(theta, s2, V, res.tau2);
  res.loglik = marginal_loglik(theta, s2, V * res.gamma, res.tau2);
  res.trace.push_back(res.loglik);

  // Boundary handling: when the constrained fit at tau2 = 0 matches or beats
  // the EM limit, the MLE sits on the boundary.
  const VectorXd gamma0 = gls_gamma(theta, s2, V, 0.0);
  const double ll0 = marginal_loglik(theta, s2, V * gamma0, 0.0);
  if (ll0 >= res.loglik || res.tau2 < 1e-12 * scale) {
    if (ll0 >= res.loglik) {
      res.gamma = gamma0;
      res.loglik = ll0;
      res.trace.push_back(ll0);
    }
    res.tau2 = 0.0;
    res.at_boundary = true;
  }
  return res;
}

void unpack(const std::vector<CrudeEffect>& crudes, VectorXd& theta, VectorXd& s2) {
  const Eigen::Index n = static_cast<Eigen::Index>(crudes.size());
  theta.resize(n);
  s2.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    theta[i] = crudes[static_cast<std::size_t>(i)].theta_hat;
    s2[i] = crudes[static_cast<std::size_t>(i)].s2;
  }
}

}  // namespace

PriorEstimate fit_prior_mle(const std::vector<CrudeEffect>& crudes,
                            const EmOptions& opts) {
  validate_crudes(crudes, 2);
  VectorXd theta, s2;
  unpack(crudes, theta, s2);
  const EngineResult res = em_engine(theta, s2, MatrixXd::Ones(theta.size(), 1), opts);

  PriorEstimate prior;
  prior.mu = res.gamma[0];
  prior.tau2 = res.tau2;
  prior.method = PriorMethod::MleEm;
  prior.log_likelihood = res.loglik;
  prior.iterations = res.iterations;
  prior.at_boundary = res.at_boundary;
  prior.loglik_trace = res.trace;
  return prior;
}

PriorEstimate fit_prior_moment(const std::vector<CrudeEffect>& crudes) {
  validate_crudes(crudes, 2);
  VectorXd theta, s2;
  unpack(crudes, theta, s2);

  PriorEstimate prior;
  prior.method = PriorMethod::Moment;
  prior.mu = profile_mu(theta, s2, 0.0);  // inverse-s2 weighted mean
  prior.tau2 = moment_tau2(theta, s2, MatrixXd::Ones(theta.size(), 1));
  prior.at_boundary = prior.tau2 == 0.0;
  prior.log_likelihood =
      marginal_loglik(theta, s2, VectorXd::Constant(theta.size(), prior.mu), prior.tau2);
  return prior;
}

PosteriorSummary posterior(const CrudeEffect& crude, const PriorEstimate& prior) {
  PosteriorSummary post;
  post.centre_id = crude.centre_id;
  post.shrinkage = prior.tau2 / (prior.tau2 + crude.s2);
  post.ebe = prior.mu + post.shrinkage * (crude.theta_hat - prior.mu);
  post.pv = post.shrinkage * crude.s2;
  return post;
}

Interval posterior_interval(const PosteriorSummary& post, double level) {
  const double half = stats::central_z(level) * std::sqrt(post.pv);
  return {post.ebe - half, post.ebe + half};
}

double proportion_true_variation(const PriorEstimate& prior,
                                 const std::vector<CrudeEffect>& crudes) {
  if (crudes.empty()) throw ValidationError("proportion_true_variation: no centres");
  std::vector<double> s2;
  s2.reserve(crudes.size());
  for (const CrudeEffect& c : crudes) s2.push_back(c.s2);
  const double med = stats::median(std::move(s2));
  if (prior.tau2 == 0.0) return 0.0;
  return prior.tau2 / (prior.tau2 + med);
}

CovariatePrior fit_prior_with_covariates(const std::vector<CrudeEffect>& crudes,
                                         const std::vector<std::vector<double>>& V,
                                         std::vector<std::string> covariate_names,
                                         const EmOptions& opts) {
  validate_crudes(crudes, 2);
  const std::size_t n = crudes.size();
  const std::size_t m = V.empty() ? 0 : V.front().size();
  if (!V.empty() && V.size() != n) {
    throw ValidationError("fit_prior_with_covariates: V rows do not align with centres");
  }
  if (covariate_names.empty()) {
    for (std::size_t l = 0; l < m; ++l) covariate_names.push_back("V" + std::to_string(l + 1));
  }
  if (covariate_names.size() != m) {
    throw ValidationError("fit_prior_with_covariates: covariate name count mismatch");
  }

  MatrixXd design(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m + 1));
  design.col(0).setOnes();
  for (std::size_t i = 0; i < n; ++i) {
    if (!V.empty() && V[i].size() != m) {
      throw ValidationError("fit_prior_with_covariates: ragged covariate matrix");
    }
    for (std::size_t l = 0; l < m; ++l) {
      design(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l + 1)) = V[i][l];
    }
  }
  // Rank check with the intercept included.
  {
    Eigen::ColPivHouseholderQR<MatrixXd> qr(design);
    qr.setThreshold(1e-10);
    if (qr.rank() < design.cols()) {
      throw ValidationError("fit_prior_with_covariates: covariate matrix with intercept "
                            "is rank deficient");
    }
  }

  VectorXd theta, s2;
  unpack(crudes, theta, s2);
  const EngineResult res = em_engine(theta, s2, design, opts);

  CovariatePrior prior;
  prior.gamma.assign(res.gamma.data(), res.gamma.data() + res.gamma.size());
  prior.tau2 = res.tau2;
  prior.covariate_names = std::move(covariate_names);
  prior.log_likelihood = res.loglik;
  prior.iterations = res.iterations;
  prior.at_boundary = res.at_boundary;
  prior.loglik_trace = res.trace;
  return prior;
}

double fitted_prior_mean(const CovariatePrior& prior, const std::vector<double>& v_row) {
  if (v_row.size() + 1 != prior.gamma.size()) {
    throw ValidationError("fitted_prior_mean: covariate row length mismatch");
  }
  double f = prior.gamma[0];
  for (std::size_t l = 0; l < v_row.size(); ++l) f += prior.gamma[l + 1] * v_row[l];
  return f;
}

Interval tolerance_interval(const CovariatePrior& prior,
                            const std::vector<double>& v_row, double level) {
  const double f = fitted_prior_mean(prior, v_row);
  const double half = stats::central_z(level) * std::sqrt(prior.tau2);
  return {f - half, f + half};
}

PosteriorSummary posterior_with_covariates(const CrudeEffect& crude,
                                           const CovariatePrior& prior,
                                           const std::vector<double>& v_row) {
  const double f = fitted_prior_mean(prior, v_row);
  PosteriorSummary post;
  post.centre_id = crude.centre_id;
  post.shrinkage = prior.tau2 / (prior.tau2 + crude.s2);
  post.ebe = f + post.shrinkage * (crude.theta_hat - f);
  post.pv = post.shrinkage * crude.s2;
  return post;
}

namespace {

double profile_loglik(const VectorXd& theta, const VectorXd& s2, double tau2) {
  const double mu = profile_mu(theta, s2, tau2);
  return marginal_loglik(theta, s2, VectorXd::Constant(theta.size(), mu), tau2);
}

// Golden-section maximization on [lo, hi]; f unimodal in the bracket.
double golden_max(double lo, double hi, double tol,
                  const std::function<double(double)>& f) {
  const double inv_phi = 0.6180339887498949;
  double a = lo, b = hi;
  double x1 = b - inv_phi * (b - a);
  double x2 = a + inv_phi * (b - a);
  double f1 = f(x1), f2 = f(x2);
  while (b - a > tol) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + inv_phi * (b - a);
      f2 = f(x2);
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - inv_phi * (b - a);
      f1 = f(x1);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace

Interval tau2_profile_ci(const std::vector<CrudeEffect>& crudes, double level) {
  validate_crudes(crudes, 2);
  if (level <= 0.0 || level >= 1.0) {
    throw ValidationError("tau2_profile_ci: level must lie in (0,1)");
  }
  VectorXd theta, s2;
  unpack(crudes, theta, s2);
  const auto lp = [&](double t2) { return profile_loglik(theta, s2, t2); };

  // Locate the profile maximum: start from the EM fit and polish locally.
  const PriorEstimate mle = fit_prior_mle(crudes);
  const double scale = std::max(mle.tau2, stats::median({s2.data(), s2.data() + s2.size()}));
  double t_hat = mle.tau2;
  if (t_hat > 0.0) {
    t_hat = golden_max(0.0, 2.0 * t_hat + 0.1 * scale, 1e-10 * scale + 1e-14, lp);
  }
  double l_max = lp(t_hat);
  if (lp(0.0) >= l_max) {
    t_hat = 0.0;
    l_max = lp(0.0);
  }

  const double q = stats::chi2_quantile_1df(level);
  const auto deficit = [&](double t2) { return 2.0 * (l_max - lp(t2)) - q; };

  // Lower endpoint.
  double lo = 0.0;
  if (deficit(0.0) > 0.0) {
    double a = 0.0, b = t_hat;
    for (int i = 0; i < 200 && b - a > 1e-12 * (scale + b); ++i) {
      const double mid = 0.5 * (a + b);
      (deficit(mid) > 0.0 ? a : b) = mid;
    }
    lo = 0.5 * (a + b);
  }

  // Upper endpoint: bracket by doubling, then bisect.
  double step = std::max(scale, 1e-8);
  double b = t_hat + step;
  while (deficit(b) <= 0.0) {
    step *= 2.0;
    b = t_hat + step;
    if (step > 1e12 * (scale + 1.0)) {
      throw NumericalError("tau2_profile_ci: failed to bracket the upper endpoint");
    }
  }
  double a = t_hat;
  for (int i = 0; i < 200 && b - a > 1e-12 * (scale + b); ++i) {
    const double mid = 0.5 * (a + b);
    (deficit(mid) > 0.0 ? b : a) = mid;
  }
  return {lo, 0.5 * (a + b)};
}

std::vector<SensitivityRow> sensitivity_sweep(const std::vector<CrudeEffect>& crudes,
                                              const std::vector<double>& tau2_grid) {
  validate_crudes(crudes, 2);
  if (tau2_grid.empty()) throw ValidationError("sensitivity_sweep: empty grid");
  for (double t2 : tau2_grid) {
    if (!(t2 >= 0.0) || !std::isfinite(t2)) {
      throw ValidationError("sensitivity_sweep: grid values must be finite and >= 0");
    }
  }
  VectorXd theta, s2;
  unpack(crudes, theta, s2);

  std::vector<SensitivityRow> rows;
  rows.reserve(tau2_grid.size());
  for (double t2 : tau2_grid) {
    SensitivityRow row;
    row.tau2 = t2;
    row.mu = profile_mu(theta, s2, t2);
    PriorEstimate prior;
    prior.mu = row.mu;
    prior.tau2 = t2;
    row.epc.reserve(crudes.size());
    for (const CrudeEffect& c : crudes) {
      row.epc.push_back(epc(posterior(c, prior), prior));
    }
    row.ra = rankability(row.epc).ra;
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace ebmon

#pragma once

#include <string>
#include <vector>

#include "ebmon/stage1.hpp"

namespace ebmon {

enum class PriorMethod { MleEm, Moment };

// Normal mixing distribution G = N(mu, tau2) fitted to one year's crude
// effects from the marginal N(theta_hat_i; mu, s_i^2 + tau2) likelihood.
struct PriorEstimate {
  double mu = 0.0;
  double tau2 = 0.0;
  PriorMethod method = PriorMethod::MleEm;
  double log_likelihood = 0.0;
  int iterations = 0;
  bool at_boundary = false;           // tau2 clamped at 0
  std::vector<double> loglik_trace;   // marginal log-likelihood per EM iteration
};

struct PosteriorSummary {
  std::string centre_id;
  double ebe = 0.0;        // posterior mean
  double pv = 0.0;         // posterior variance
  double shrinkage = 0.0;  // tau2 / (tau2 + s2)
};

// Second-stage model with centre-level covariates:
// theta_i ~ N(gamma_0 + sum_l V_il gamma_l, tau2).
struct CovariatePrior {
  std::vector<double> gamma;
  double tau2 = 0.0;
  std::vector<std::string> covariate_names;
  double log_likelihood = 0.0;
  int iterations = 0;
  bool at_boundary = false;
  std::vector<double> loglik_trace;
};

struct EmOptions {
  int max_iterations = 10000;
  double loglik_tol = 1e-10;
};

PriorEstimate fit_prior_mle(const std::vector<CrudeEffect>& crudes,
                            const EmOptions& opts = {});

// DerSimonian-Laird: inverse-s2 weighted mean, Q-statistic variance truncated
// at zero.
PriorEstimate fit_prior_moment(const std::vector<CrudeEffect>& crudes);

PosteriorSummary posterior(const CrudeEffect& crude, const PriorEstimate& prior);

// ebe +/- z * sqrt(pv).
Interval posterior_interval(const PosteriorSummary& post, double level);

// rho = tau2 / (tau2 + median(s_i^2)).
double proportion_true_variation(const PriorEstimate& prior,
                                 const std::vector<CrudeEffect>& crudes);

// V has one row per crude effect; the first column must be the constant 1.
CovariatePrior fit_prior_with_covariates(const std::vector<CrudeEffect>& crudes,
                                         const std::vector<std::vector<double>>& V,
                                         std::vector<std::string> covariate_names = {},
                                         const EmOptions& opts = {});

double fitted_prior_mean(const CovariatePrior& prior, const std::vector<double>& v_row);

// Interval containing the given fraction of the theta distribution at the
// centre's covariates: fitted mean +/- z * sqrt(tau2).
Interval tolerance_interval(const CovariatePrior& prior,
                            const std::vector<double>& v_row, double level);

// Posterior of theta_i under the covariate prior, conditioning on theta_hat_i.
PosteriorSummary posterior_with_covariates(const CrudeEffect& crude,
                                           const CovariatePrior& prior,
                                           const std::vector<double>& v_row);

// Profile-likelihood confidence interval for tau2, mu profiled out in closed
// form. The lower endpoint may sit at the tau2 = 0 boundary.
Interval tau2_profile_ci(const std::vector<CrudeEffect>& crudes, double level);

struct SensitivityRow {
  double tau2 = 0.0;
  double mu = 0.0;  // profiled mean at this tau2
  double ra = 0.0;
  std::vector<double> epc;  // aligned with the input crude order
};

// Recompute posteriors, EPC and RA at each fixed tau2 with mu re-profiled.
std::vector<SensitivityRow> sensitivity_sweep(const std::vector<CrudeEffect>& crudes,
                                              const std::vector<double>& tau2_grid);

}  // namespace ebmon

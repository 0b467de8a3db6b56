#pragma once

#include <string>
#include <vector>

#include "ebmon/errors.hpp"

namespace ebmon {

struct PatientRecord {
  std::string centre_id;
  int year = 0;
  int outcome = 0;                 // 0 or 1
  std::vector<double> covariates;  // first entry is the constant 1
};

struct BetaModel {
  std::vector<double> coefficients;
  bool converged = false;
  int iterations = 0;
  double log_likelihood = 0.0;
  std::vector<double> loglik_trace;  // after each accepted IRLS step
};

// Per centre-year reduction of the patient data: observed events O,
// model-expected events E and the Bernoulli information sum p(1-p).
struct CentreYearSummary {
  std::string centre_id;
  int year = 0;
  long n = 0;
  double observed = 0.0;
  double expected = 0.0;
  double information = 0.0;
};

// Score-statistic estimate of the centre effect on the log-odds scale,
// theta_hat = (O-E)/var, treated as N(theta, s2) with s2 = 1/var.
struct CrudeEffect {
  std::string centre_id;
  int year = 0;
  double theta_hat = 0.0;
  double s2 = 0.0;
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

struct IrlsOptions {
  int max_iterations = 100;
  double score_tol = 1e-8;
  double loglik_rel_tol = 1e-10;
};

// Maximum-likelihood logistic regression with no centre terms, by IRLS with
// step-halving. Throws ValidationError on a rank-deficient design (naming the
// collinear column) and ConvergenceError carrying the last iterate when the
// iteration cap is hit (the typical signature of quasi-separation).
BetaModel fit_logistic(const std::vector<PatientRecord>& patients,
                       const IrlsOptions& opts = {});

// Reduce patients to centre-year summaries under fixed beta. Groups with no
// patients simply do not appear. Output sorted by (centre_id, year).
std::vector<CentreYearSummary> summarize(const std::vector<PatientRecord>& patients,
                                         const BetaModel& beta);

// Throws ValidationError when information <= min_information.
CrudeEffect crude_effect(const CentreYearSummary& summary,
                         double min_information = 1e-6);

// Batch form: uninformative centre-years are skipped with a log entry.
std::vector<CrudeEffect> crude_effects(const std::vector<CentreYearSummary>& summaries,
                                       double min_information = 1e-6,
                                       std::vector<std::string>* log = nullptr);

struct WStatistic {
  double w = 0.0;
  double se = 0.0;
};

// W = (O-E)/n with standard error sqrt(var)/n.
WStatistic w_statistic(const CentreYearSummary& summary);

// theta_hat +/- z * sqrt(s2).
Interval confidence_interval(const CrudeEffect& crude, double level);

// Log-likelihood of the one-centre offset model at effect theta, the
// per-patient linear predictors eta being fixed. Exposed because the crude
// effect is its quadratic approximation around theta = 0.
double offset_logistic_loglik(const std::vector<double>& eta,
                              const std::vector<int>& outcomes, double theta);

}  // namespace ebmon

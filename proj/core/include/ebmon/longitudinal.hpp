#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ebmon/ranking.hpp"

namespace ebmon {

// Centre x year matrix of crude effects with an explicit missingness mask.
// Missingness is assumed MAR; centres appear with their observed coordinates
// only, no imputation anywhere.
struct Panel {
  std::vector<std::string> centres;
  std::vector<int> years;  // strictly increasing
  Eigen::MatrixXd theta_hat;
  Eigen::MatrixXd s2;
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> observed;

  std::size_t n_centres() const { return centres.size(); }
  std::size_t n_years() const { return years.size(); }
};

// years may pin an explicit year set; when empty the years present in the
// data are used. Centres with no observed year in the set are dropped with a
// log entry. Duplicate (centre, year) rows are an error.
Panel assemble_panel(const std::vector<CrudeEffect>& crudes,
                     const std::vector<int>& years = {},
                     std::vector<std::string>* log = nullptr);

enum class CovStructure { Unstructured, CompoundSymmetry, Ar1, RandomCoefficients };

std::string to_string(CovStructure s);
CovStructure cov_structure_from_string(const std::string& name);

// Two-stage longitudinal model: Theta_hat_i | Theta_i ~ MVN(Theta_i, S_i),
// Theta_i ~ MVN(M, T). For structured fits the parameters in
// structure_params regenerate T exactly via build_structured_T.
struct LongitudinalModel {
  CovStructure structure = CovStructure::Unstructured;
  std::vector<int> years;
  Eigen::VectorXd M;
  Eigen::MatrixXd T;
  std::map<std::string, double> structure_params;
  double log_likelihood = 0.0;
  int n_mean_params = 0;
  int n_cov_params = 0;
  int iterations = 0;
  bool psd_projected = false;       // T hit the eigenvalue floor in an M-step
  bool profile_at_boundary = false; // rho search ended at the bracket edge
  std::vector<double> loglik_trace; // final EM run
};

struct LongitudinalOptions {
  double loglik_tol = 1e-8;
  int max_iterations = 20000;
  double profile_tol = 1e-5;   // golden-section bracket width on rho
  double search_tol = 1e-6;    // inner-EM tolerance while profiling
};

// Saturated fit: per-year means, free T. Requires at least two jointly
// observed centres for every year pair.
LongitudinalModel fit_unstructured(const Panel& panel,
                                   const LongitudinalOptions& opts = {});

// compound_symmetry / ar1: unstructured per-year means, profile search on
// the correlation parameter with an inner EM for the rest.
// random_coefficients: EM over the linear mean and the 2x2 coefficient
// covariance, time measured from the configurable origin (first year - 1 by
// default, matching year - 90 for a panel starting in 1991).
LongitudinalModel fit_structured(const Panel& panel, CovStructure structure,
                                 const LongitudinalOptions& opts = {});

// Parameter keys: ar1 {tau2, rho}; compound_symmetry {tau2, rho_cs};
// random_coefficients {tau_a2, tau_b2, rho_ab, time_origin}.
Eigen::MatrixXd build_structured_T(CovStructure structure,
                                   const std::map<std::string, double>& params,
                                   const std::vector<int>& years);

struct FitStats {
  double log_likelihood = 0.0;
  double aic = 0.0;          // log-likelihood minus parameter count
  double aic_classic = 0.0;  // -2 log-likelihood + 2k
  int n_params = 0;
};
FitStats model_fit_stats(const LongitudinalModel& model);

enum class MeanPolicy { Manual, CarryLast, LinearTrend };

struct Extrapolation {
  std::vector<int> years;  // J+1 entries
  Eigen::VectorXd M;
  Eigen::MatrixXd T;
  double mu_next = 0.0;
  double tau2_next = 0.0;
};

// Extend M and T one year past the panel. Only structured models can be
// extrapolated; random_coefficients forces the linear-trend mean.
Extrapolation extrapolate(const LongitudinalModel& model, MeanPolicy policy,
                          std::optional<double> manual_value = std::nullopt);

struct ObservedYear {
  int year = 0;
  double theta_hat = 0.0;
  double s2 = 0.0;
};

struct PredictiveDistribution {
  std::string centre_id;
  double mean = 0.0;
  double variance = 0.0;
  std::vector<int> years_used;
};

// Conditional law of the next-year effect given the centre's observed
// history, via a linear solve on the observed block of T + diag(s2).
PredictiveDistribution predict_next(const Extrapolation& ext,
                                    const std::string& centre_id,
                                    const std::vector<ObservedYear>& history);

std::vector<PredictiveDistribution> predict_all(const Extrapolation& ext,
                                                const Panel& panel);

struct PredictiveRanking {
  std::vector<RankingRow> rows;
  RankabilityReport report;
};

// Predictive mean -> EBE, predictive variance -> pv, prior (mu_next,
// tau2_next); then the section-4 ranking machinery unchanged.
PredictiveRanking predictive_ranking(const std::vector<PredictiveDistribution>& preds,
                                     double mu_next, double tau2_next,
                                     std::vector<std::string>* log = nullptr);

}  // namespace ebmon

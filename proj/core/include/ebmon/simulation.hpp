#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ebmon/longitudinal.hpp"
#include "ebmon/rng.hpp"

namespace ebmon {

enum class PatientCountModel { Fixed, Poisson };
enum class SimMode { PatientLevel, CrudeOnly };

// Generative model: Theta_i from the prior, then either patient-level
// Bernoulli outcomes (crude effects derived through the stage-1 pipeline) or
// theta_hat ~ N(theta, s2) directly with s2 = 1 / (n * E[p(1-p)]).
struct ScenarioConfig {
  int n_centres = 0;
  std::vector<int> years;
  SimMode mode = SimMode::CrudeOnly;
  PatientCountModel count_model = PatientCountModel::Fixed;
  double patients_per_centre_year = 0.0;
  double baseline_rate = 0.0;
  std::vector<double> beta_slopes;  // effects on iid N(0,1) patient covariates
  // Prior on the true effects: either constant (mu, tau2) applied to every
  // year, or a full longitudinal model whose years match the scenario years.
  std::optional<double> prior_mu;
  std::optional<double> prior_tau2;
  std::optional<LongitudinalModel> prior_model;
  std::uint64_t seed = 0;
  bool has_seed = false;  // an explicit seed is mandatory
};

struct SyntheticDataset {
  std::vector<std::string> centres;
  std::vector<int> years;
  Eigen::MatrixXd true_effects;  // centres x years
  std::vector<PatientRecord> patients;  // patient mode only
  std::vector<CrudeEffect> crudes;
};

SyntheticDataset simulate(const ScenarioConfig& config);

// Monte-Carlo oracle for the closed-form expected rank: sample
// theta_i ~ N(EBE_i, pv_i) independently, rank each draw, average.
struct McRank {
  std::vector<double> er;
  std::vector<double> se;
};
McRank mc_expected_rank(const std::vector<PosteriorSummary>& posts, int n_draws,
                        std::uint64_t seed);

// Conditional law of one coordinate of a multivariate normal given observed
// coordinates, via an eigendecomposition inverse - deliberately a different
// factorization path than predict_next's LDLT solve.
struct ConditionResult {
  double mean = 0.0;
  double variance = 0.0;
};
ConditionResult mvn_condition_oracle(const Eigen::VectorXd& mean,
                                     const Eigen::MatrixXd& cov, int target_index,
                                     const std::vector<int>& observed_indices,
                                     const std::vector<double>& observed_values);

// E[p] and E[p(1-p)] under logit(p) = intercept + spread * Z, Z ~ N(0,1).
struct RiskMoments {
  double mean_p = 0.0;
  double mean_pq = 0.0;
};
RiskMoments risk_moments(double intercept, double spread);

// Intercept such that the marginal event rate equals target_rate.
double calibrate_intercept(double target_rate, double spread);

}  // namespace ebmon

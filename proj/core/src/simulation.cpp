#include "ebmon/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ebmon/stats.hpp"

namespace ebmon {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string centre_label(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "C%04d", i + 1);
  return buf;
}

double slope_norm(const std::vector<double>& slopes) {
  double s = 0.0;
  for (double v : slopes) s += v * v;
  return std::sqrt(s);
}

void validate_config(const ScenarioConfig& c) {
  if (!c.has_seed) throw ValidationError("simulate: an explicit seed is required");
  if (c.n_centres < 1 || c.n_centres > 9999) {
    throw ValidationError("simulate: n_centres must lie in [1, 9999]");
  }
  if (c.years.empty()) throw ValidationError("simulate: no years");
  if (!(c.baseline_rate > 0.0 && c.baseline_rate < 1.0)) {
    throw ValidationError("simulate: baseline_rate must lie in (0,1)");
  }
  if (!(c.patients_per_centre_year > 0.0)) {
    throw ValidationError("simulate: patients_per_centre_year must be positive");
  }
  const bool constant_prior = c.prior_mu.has_value() && c.prior_tau2.has_value();
  if (constant_prior == c.prior_model.has_value()) {
    throw ValidationError("simulate: specify either (mu, tau2) or a longitudinal prior");
  }
  if (constant_prior && *c.prior_tau2 < 0.0) {
    throw ValidationError("simulate: tau2 must be >= 0");
  }
  if (c.prior_model.has_value() && c.prior_model->years != c.years) {
    throw ValidationError("simulate: prior model years do not match scenario years");
  }
}

// Square root of a PSD matrix via its eigendecomposition.
MatrixXd psd_sqrt(const MatrixXd& T) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (T + T.transpose()));
  const VectorXd lam = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

RiskMoments risk_moments(double intercept, double spread) {
  if (spread == 0.0) {
    const double p = stats::expit(intercept);
    return {p, p * (1.0 - p)};
  }
  // Composite Simpson over z in [-10, 10] against the standard normal weight.
  const int n = 2000;  // even
  const double a = -10.0, b = 10.0;
  const double h = (b - a) / n;
  double sp = 0.0, spq = 0.0;
  for (int k = 0; k <= n; ++k) {
    const double z = a + k * h;
    const double w = (k == 0 || k == n) ? 1.0 : (k % 2 == 1 ? 4.0 : 2.0);
    const double phi = std::exp(-0.5 * z * z) / std::sqrt(2.0 * 3.14159265358979323846);
    const double p = stats::expit(intercept + spread * z);
    sp += w * p * phi;
    spq += w * p * (1.0 - p) * phi;
  }
  return {sp * h / 3.0, spq * h / 3.0};
}

double calibrate_intercept(double target_rate, double spread) {
  if (!(target_rate > 0.0 && target_rate < 1.0)) {
    throw ValidationError("calibrate_intercept: rate must lie in (0,1)");
  }
  if (spread == 0.0) return std::log(target_rate / (1.0 - target_rate));
  double lo = -40.0, hi = 40.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (risk_moments(mid, spread).mean_p < target_rate ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

SyntheticDataset simulate(const ScenarioConfig& config) {
  validate_config(config);
  const Rng root(config.seed);
  const std::size_t J = config.years.size();
  const double spread = slope_norm(config.beta_slopes);
  const double intercept = calibrate_intercept(config.baseline_rate, spread);

  SyntheticDataset data;
  data.years = config.years;
  data.true_effects.resize(config.n_centres, static_cast<Eigen::Index>(J));

  MatrixXd L;  // factor of the effect covariance for the longitudinal prior
  VectorXd M;
  if (config.prior_model.has_value()) {
    L = psd_sqrt(config.prior_model->T);
    M = config.prior_model->M;
  }

  for (int i = 0; i < config.n_centres; ++i) {
    const std::string id = centre_label(i);
    data.centres.push_back(id);
    const Rng centre_rng = root.substream("centre/" + id);

    // True effects for this centre.
    VectorXd theta(static_cast<Eigen::Index>(J));
    {
      Rng g = centre_rng.substream("effect");
      if (config.prior_model.has_value()) {
        VectorXd z(static_cast<Eigen::Index>(J));
        for (std::size_t j = 0; j < J; ++j) z[static_cast<Eigen::Index>(j)] = g.normal();
        theta = M + L * z;
      } else {
        const double sd = std::sqrt(*config.prior_tau2);
        for (std::size_t j = 0; j < J; ++j) {
          theta[static_cast<Eigen::Index>(j)] = *config.prior_mu + sd * g.normal();
        }
      }
    }
    data.true_effects.row(i) = theta.transpose();

    for (std::size_t j = 0; j < J; ++j) {
      const std::string ytag = std::to_string(config.years[j]);
      long n_patients;
      if (config.count_model == PatientCountModel::Fixed) {
        n_patients = std::lround(config.patients_per_centre_year);
      } else {
        Rng g = centre_rng.substream("count/" + ytag);
        n_patients = g.poisson(config.patients_per_centre_year);
      }
      if (n_patients <= 0) continue;  // centre-year missing

      if (config.mode == SimMode::PatientLevel) {
        Rng g = centre_rng.substream("patients/" + ytag);
        for (long k = 0; k < n_patients; ++k) {
          PatientRecord rec;
          rec.centre_id = id;
          rec.year = config.years[j];
          rec.covariates.push_back(1.0);
          double eta = intercept + theta[static_cast<Eigen::Index>(j)];
          for (double slope : config.beta_slopes) {
            const double z = g.normal();
            rec.covariates.push_back(z);
            eta += slope * z;
          }
          rec.outcome = g.bernoulli(stats::expit(eta)) ? 1 : 0;
          data.patients.push_back(std::move(rec));
        }
      } else {
        const double info =
            static_cast<double>(n_patients) * risk_moments(intercept, spread).mean_pq;
        if (!(info > 0.0)) continue;
        Rng g = centre_rng.substream("noise/" + ytag);
        CrudeEffect c;
        c.centre_id = id;
        c.year = config.years[j];
        c.s2 = 1.0 / info;
        c.theta_hat = theta[static_cast<Eigen::Index>(j)] + std::sqrt(c.s2) * g.normal();
        data.crudes.push_back(std::move(c));
      }
    }
  }

  if (config.mode == SimMode::PatientLevel) {
    // Derive the crude effects through the stage-1 pipeline itself.
    const BetaModel beta = fit_logistic(data.patients);
    data.crudes = crude_effects(summarize(data.patients, beta));
  }
  return data;
}

McRank mc_expected_rank(const std::vector<PosteriorSummary>& posts, int n_draws,
                        std::uint64_t seed) {
  const std::size_t n = posts.size();
  if (n == 0) throw ValidationError("mc_expected_rank: no centres");
  if (n_draws < 1) throw ValidationError("mc_expected_rank: n_draws must be >= 1");

  std::vector<double> sd(n);
  for (std::size_t i = 0; i < n; ++i) sd[i] = std::sqrt(posts[i].pv);

  std::vector<double> sum(n, 0.0), sumsq(n, 0.0), draw(n);
  std::vector<std::size_t> order(n);
  Rng g = Rng(seed).substream("mc_expected_rank");
  for (int d = 0; d < n_draws; ++d) {
    for (std::size_t i = 0; i < n; ++i) draw[i] = posts[i].ebe + sd[i] * g.normal();
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return draw[a] < draw[b]; });
    for (std::size_t pos = 0; pos < n; ++pos) {
      const double rank = static_cast<double>(pos + 1);
      sum[order[pos]] += rank;
      sumsq[order[pos]] += rank * rank;
    }
  }

  McRank out;
  out.er.resize(n);
  out.se.resize(n);
  const double nd = static_cast<double>(n_draws);
  for (std::size_t i = 0; i < n; ++i) {
    out.er[i] = sum[i] / nd;
    const double var = std::max(sumsq[i] / nd - out.er[i] * out.er[i], 0.0);
    out.se[i] = std::sqrt(var / nd);
  }
  return out;
}

ConditionResult mvn_condition_oracle(const Eigen::VectorXd& mean,
                                     const Eigen::MatrixXd& cov, int target_index,
                                     const std::vector<int>& observed_indices,
                                     const std::vector<double>& observed_values) {
  const Eigen::Index dim = mean.size();
  if (cov.rows() != dim || cov.cols() != dim) {
    throw ValidationError("mvn_condition_oracle: covariance shape mismatch");
  }
  if (target_index < 0 || target_index >= dim) {
    throw ValidationError("mvn_condition_oracle: target index out of range");
  }
  if (observed_indices.size() != observed_values.size()) {
    throw ValidationError("mvn_condition_oracle: index/value size mismatch");
  }
  for (int idx : observed_indices) {
    if (idx < 0 || idx >= dim || idx == target_index) {
      throw ValidationError("mvn_condition_oracle: bad observed index");
    }
  }

  if (observed_indices.empty()) {
    return {mean[target_index], cov(target_index, target_index)};
  }

  const Eigen::Index no = static_cast<Eigen::Index>(observed_indices.size());
  MatrixXd C(no, no);
  VectorXd cross(no), resid(no);
  for (Eigen::Index a = 0; a < no; ++a) {
    const int ia = observed_indices[static_cast<std::size_t>(a)];
    for (Eigen::Index b = 0; b < no; ++b) {
      C(a, b) = cov(ia, observed_indices[static_cast<std::size_t>(b)]);
    }
    cross[a] = cov(target_index, ia);
    resid[a] = observed_values[static_cast<std::size_t>(a)] - mean[ia];
  }

  // Eigendecomposition pseudo-inverse of the observed block.
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (C + C.transpose()));
  const VectorXd lam = es.eigenvalues();
  const double cutoff = 1e-13 * std::max(lam.cwiseAbs().maxCoeff(), 1e-300);
  VectorXd inv_lam(no);
  for (Eigen::Index a = 0; a < no; ++a) {
    inv_lam[a] = lam[a] > cutoff ? 1.0 / lam[a] : 0.0;
  }
  const MatrixXd Cinv =
      es.eigenvectors() * inv_lam.asDiagonal() * es.eigenvectors().transpose();

  ConditionResult res;
  res.mean = mean[target_index] + cross.dot(Cinv * resid);
  res.variance = cov(target_index, target_index) - cross.dot(Cinv * cross);
  return res;
}

}  // namespace ebmon

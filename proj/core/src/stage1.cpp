#include "ebmon/stage1.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <utility>

#include "ebmon/stats.hpp"

namespace ebmon {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

double bernoulli_loglik(const MatrixXd& X, const VectorXd& y, const VectorXd& beta) {
  const VectorXd eta = X * beta;
  double ll = 0.0;
  for (Eigen::Index k = 0; k < eta.size(); ++k) {
    ll += y[k] * eta[k] - stats::log1pexp(eta[k]);
  }
  return ll;
}

// Modified Gram-Schmidt rank check that names the first column linearly
// dependent on its predecessors. Columns follow the x1..xp input convention.
void check_full_rank(const MatrixXd& X) {
  const Eigen::Index p = X.cols();
  MatrixXd basis(X.rows(), p);
  Eigen::Index r = 0;
  for (Eigen::Index j = 0; j < p; ++j) {
    VectorXd v = X.col(j);
    const double norm0 = v.norm();
    for (int pass = 0; pass < 2; ++pass) {
      for (Eigen::Index k = 0; k < r; ++k) {
        v -= basis.col(k).dot(v) * basis.col(k);
      }
    }
    if (norm0 == 0.0 || v.norm() <= 1e-8 * norm0) {
      std::ostringstream msg;
      msg << "design matrix is rank deficient: column x" << (j + 1)
          << " is linearly dependent on earlier columns";
      throw ValidationError(msg.str());
    }
    basis.col(r++) = v / v.norm();
  }
}

}  // namespace

BetaModel fit_logistic(const std::vector<PatientRecord>& patients,
                       const IrlsOptions& opts) {
  if (patients.empty()) throw ValidationError("fit_logistic: no patients");
  const std::size_t p = patients.front().covariates.size();
  if (p == 0) throw ValidationError("fit_logistic: empty covariate vectors");

  const Eigen::Index n = static_cast<Eigen::Index>(patients.size());
  MatrixXd X(n, static_cast<Eigen::Index>(p));
  VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const PatientRecord& rec = patients[static_cast<std::size_t>(i)];
    if (rec.covariates.size() != p) {
      throw ValidationError("fit_logistic: covariate length varies across patients");
    }
    if (rec.outcome != 0 && rec.outcome != 1) {
      throw ValidationError("fit_logistic: outcome must be 0 or 1");
    }
    for (std::size_t j = 0; j < p; ++j) X(i, static_cast<Eigen::Index>(j)) = rec.covariates[j];
    y[i] = rec.outcome;
  }
  check_full_rank(X);

  VectorXd beta = VectorXd::Zero(static_cast<Eigen::Index>(p));
  double ll = bernoulli_loglik(X, y, beta);
  const double step_tol = 1e-6;

  BetaModel model;
  model.loglik_trace.push_back(ll);
  for (int iter = 1; iter <= opts.max_iterations; ++iter) {
    model.iterations = iter;
    VectorXd prob(n), weight(n);
    const VectorXd eta = X * beta;
    for (Eigen::Index k = 0; k < n; ++k) {
      prob[k] = stats::expit(eta[k]);
      weight[k] = prob[k] * (1.0 - prob[k]);
    }
    const VectorXd score = X.transpose() * (y - prob);
    const MatrixXd info = X.transpose() * weight.asDiagonal() * X;

    Eigen::LDLT<MatrixXd> ldlt(info);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
      throw ConvergenceError("fit_logistic: Fisher information not positive definite",
                             {beta.data(), beta.data() + beta.size()});
    }
    const VectorXd delta = ldlt.solve(score);
    double step = 0.0;
    for (Eigen::Index j = 0; j < delta.size(); ++j) {
      step = std::max(step, std::abs(delta[j]) / (1.0 + std::abs(beta[j])));
    }

    // A small score by itself cannot tell an interior maximum from a
    // likelihood flattening out on the way to infinity (separation), so
    // convergence additionally requires a small Newton step.
    if (score.lpNorm<Eigen::Infinity>() < opts.score_tol && step < step_tol) {
      model.converged = true;
      break;
    }

    double t = 1.0;
    double ll_new = ll;
    bool accepted = false;
    for (int halving = 0; halving < 40; ++halving) {
      const VectorXd candidate = beta + t * delta;
      const double cand_ll = bernoulli_loglik(X, y, candidate);
      if (cand_ll >= ll) {
        beta = candidate;
        ll_new = cand_ll;
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      // Likelihood cannot be improved in the Newton direction: numerical max.
      model.converged = score.lpNorm<Eigen::Infinity>() < opts.score_tol;
      break;
    }

    const double rel_change = std::abs(ll_new - ll) / (1.0 + std::abs(ll_new));
    ll = ll_new;
    model.loglik_trace.push_back(ll);
    if (rel_change < opts.loglik_rel_tol && t * step < step_tol) {
      model.converged = true;
      break;
    }
  }

  model.coefficients.assign(beta.data(), beta.data() + beta.size());
  model.log_likelihood = ll;
  if (!model.converged) {
    throw ConvergenceError(
        "fit_logistic: no convergence after " + std::to_string(model.iterations) +
            " iterations (possible quasi-separation)",
        model.coefficients);
  }
  return model;
}

std::vector<CentreYearSummary> summarize(const std::vector<PatientRecord>& patients,
                                         const BetaModel& beta) {
  const std::size_t p = beta.coefficients.size();
  std::map<std::pair<std::string, int>, CentreYearSummary> groups;
  for (const PatientRecord& rec : patients) {
    if (rec.covariates.size() != p) {
      throw ValidationError("summarize: covariate length does not match beta");
    }
    double eta = 0.0;
    for (std::size_t j = 0; j < p; ++j) eta += rec.covariates[j] * beta.coefficients[j];
    const double prob = stats::expit(eta);

    CentreYearSummary& s = groups[{rec.centre_id, rec.year}];
    if (s.n == 0) {
      s.centre_id = rec.centre_id;
      s.year = rec.year;
    }
    ++s.n;
    s.observed += rec.outcome;
    s.expected += prob;
    s.information += prob * (1.0 - prob);
  }
  std::vector<CentreYearSummary> out;
  out.reserve(groups.size());
  for (auto& [key, s] : groups) out.push_back(std::move(s));
  return out;
}

CrudeEffect crude_effect(const CentreYearSummary& summary, double min_information) {
  if (!(summary.information > min_information)) {
    std::ostringstream msg;
    msg << "centre " << summary.centre_id << " year " << summary.year
        << ": information " << summary.information << " at or below threshold "
        << min_information;
    throw ValidationError(msg.str());
  }
  CrudeEffect c;
  c.centre_id = summary.centre_id;
  c.year = summary.year;
  c.theta_hat = (summary.observed - summary.expected) / summary.information;
  c.s2 = 1.0 / summary.information;
  return c;
}

std::vector<CrudeEffect> crude_effects(const std::vector<CentreYearSummary>& summaries,
                                       double min_information,
                                       std::vector<std::string>* log) {
  std::vector<CrudeEffect> out;
  out.reserve(summaries.size());
  for (const CentreYearSummary& s : summaries) {
    if (!(s.information > min_information)) {
      if (log != nullptr) {
        std::ostringstream msg;
        msg << "excluded centre " << s.centre_id << " year " << s.year
            << ": information " << s.information << " at or below threshold "
            << min_information;
        log->push_back(msg.str());
      }
      continue;
    }
    out.push_back(crude_effect(s, min_information));
  }
  return out;
}

WStatistic w_statistic(const CentreYearSummary& summary) {
  if (summary.n <= 0) throw ValidationError("w_statistic: empty centre-year");
  WStatistic w;
  const double n = static_cast<double>(summary.n);
  w.w = (summary.observed - summary.expected) / n;
  w.se = std::sqrt(summary.information) / n;
  return w;
}

Interval confidence_interval(const CrudeEffect& crude, double level) {
  const double z = stats::central_z(level);
  const double half = z * std::sqrt(crude.s2);
  return {crude.theta_hat - half, crude.theta_hat + half};
}

double offset_logistic_loglik(const std::vector<double>& eta,
                              const std::vector<int>& outcomes, double theta) {
  if (eta.size() != outcomes.size()) {
    throw ValidationError("offset_logistic_loglik: eta/outcome size mismatch");
  }
  double ll = 0.0;
  for (std::size_t k = 0; k < eta.size(); ++k) {
    const double lin = eta[k] + theta;
    ll += outcomes[k] * lin - stats::log1pexp(lin);
  }
  return ll;
}

}  // namespace ebmon

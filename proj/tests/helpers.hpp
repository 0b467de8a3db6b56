#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ebmon/eb_univariate.hpp"
#include "ebmon/rng.hpp"
#include "ebmon/stage1.hpp"
#include "ebmon/stats.hpp"

namespace testutil {

// Exact MLE of the one-centre offset-logistic effect by 1-D Newton iteration.
// Independent of the score-statistic shortcut it is used to check.
inline double exact_offset_mle(const std::vector<double>& eta, const std::vector<int>& y) {
  double theta = 0.0;
  for (int iter = 0; iter < 200; ++iter) {
    double score = 0.0, info = 0.0;
    for (std::size_t k = 0; k < eta.size(); ++k) {
      const double p = ebmon::stats::expit(eta[k] + theta);
      score += y[k] - p;
      info += p * (1.0 - p);
    }
    const double step = score / info;
    theta += step;
    if (std::abs(step) < 1e-12) break;
  }
  return theta;
}

inline std::vector<ebmon::PatientRecord> intercept_only_patients(
    const std::string& centre, int year, int n, int events) {
  std::vector<ebmon::PatientRecord> out;
  for (int k = 0; k < n; ++k) {
    out.push_back({centre, year, k < events ? 1 : 0, {1.0}});
  }
  return out;
}

// Random one-year crude effects around mu with spread tau and noise scale.
inline std::vector<ebmon::CrudeEffect> random_crudes(ebmon::Rng& rng, int n, double mu,
                                                     double tau2, double s2_lo,
                                                     double s2_hi, int year = 1995) {
  std::vector<ebmon::CrudeEffect> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    ebmon::CrudeEffect c;
    c.centre_id = "C" + std::to_string(i + 1);
    c.year = year;
    c.s2 = s2_lo + (s2_hi - s2_lo) * rng.uniform01();
    const double theta = mu + std::sqrt(tau2) * rng.normal();
    c.theta_hat = theta + std::sqrt(c.s2) * rng.normal();
    out.push_back(std::move(c));
  }
  return out;
}

inline bool nondecreasing(const std::vector<double>& trace, double slack) {
  for (std::size_t i = 1; i < trace.size(); ++i) {
    if (trace[i] < trace[i - 1] - slack) return false;
  }
  return true;
}

}  // namespace testutil

#pragma once

#include <vector>

namespace ebmon::stats {

// expit(x) = 1 / (1 + exp(-x)), stable for large |x|.
double expit(double x);

// log(1 + exp(x)) without overflow.
double log1pexp(double x);

double normal_cdf(double x);

// Inverse of normal_cdf for p in (0,1). Accurate to ~1 ulp after polishing.
double normal_quantile(double p);

// z-value for a central interval of the given coverage level in [0,1).
double central_z(double level);

// Quantile of the chi-square distribution with 1 df.
double chi2_quantile_1df(double p);

// Median with the average-of-central-order-statistics convention for even n.
double median(std::vector<double> values);

double mean(const std::vector<double>& values);

// 1/n variance.
double population_variance(const std::vector<double>& values);

}  // namespace ebmon::stats

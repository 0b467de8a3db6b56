#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ebmon/eb_univariate.hpp"

namespace ebmon {

struct RankingRow {
  std::string centre_id;
  double crude_pct = 0.0;
  double ebe_pct = 0.0;
  double er = 0.0;
  double pcer = 0.0;
  double epc = 0.0;
};

struct RankabilityReport {
  double ra = 0.0;
  std::size_t n = 0;
  // RA = 12 * var(EPC) / 100^2 with the population (1/n) variance.
  static constexpr const char* variance_convention = "population";
};

// ER_i = 1 + sum_{j != i} Phi((EBE_i - EBE_j) / sqrt(pv_i + pv_j)).
// Degenerate pairs (pv_i = pv_j = 0) fall back to the tie convention: 0.5 for
// equal EBEs (logged), the exceedance indicator otherwise.
std::vector<double> expected_rank(const std::vector<PosteriorSummary>& posts,
                                  std::vector<std::string>* log = nullptr);

// PCER = 100 * (ER - 0.5) / n.
std::vector<double> pcer_from_er(const std::vector<double>& er);

// EPC = 100 * Phi((EBE - mu) / sqrt(tau2 + pv)); 50 when tau2 = pv = 0 (logged).
double epc(const PosteriorSummary& post, const PriorEstimate& prior,
           std::vector<std::string>* log = nullptr);
std::vector<double> epc_all(const std::vector<PosteriorSummary>& posts,
                            const PriorEstimate& prior,
                            std::vector<std::string>* log = nullptr);

RankabilityReport rankability(const std::vector<double>& epc_values);

// Midrank percentile 100 * (rank - 0.5) / n with average ranks for ties.
std::vector<double> crude_percentile(const std::vector<double>& values);

// Full per-centre table: crude/EBE percentiles, ER, PCER, EPC. Rows follow
// the input order.
std::vector<RankingRow> ranking_table(const std::vector<CrudeEffect>& crudes,
                                      const std::vector<PosteriorSummary>& posts,
                                      const PriorEstimate& prior,
                                      std::vector<std::string>* log = nullptr);

}  // namespace ebmon

#include "ebmon/ranking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ebmon/stats.hpp"

namespace ebmon {

std::vector<double> expected_rank(const std::vector<PosteriorSummary>& posts,
                                  std::vector<std::string>* log) {
  const std::size_t n = posts.size();
  if (n == 0) throw ValidationError("expected_rank: no centres");
  std::vector<double> er(n, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double denom2 = posts[i].pv + posts[j].pv;
      double p;
      if (denom2 > 0.0) {
        p = stats::normal_cdf((posts[i].ebe - posts[j].ebe) / std::sqrt(denom2));
      } else if (posts[i].ebe == posts[j].ebe) {
        p = 0.5;
        if (log != nullptr && i < j) {
          log->push_back("expected_rank: degenerate tie between " + posts[i].centre_id +
                         " and " + posts[j].centre_id + ", each counted 0.5");
        }
      } else {
        p = posts[i].ebe > posts[j].ebe ? 1.0 : 0.0;
      }
      er[i] += p;
    }
  }
  return er;
}

std::vector<double> pcer_from_er(const std::vector<double>& er) {
  const double n = static_cast<double>(er.size());
  std::vector<double> out;
  out.reserve(er.size());
  for (double r : er) out.push_back(100.0 * (r - 0.5) / n);
  return out;
}

double epc(const PosteriorSummary& post, const PriorEstimate& prior,
           std::vector<std::string>* log) {
  const double denom2 = prior.tau2 + post.pv;
  if (denom2 <= 0.0) {
    if (log != nullptr) {
      log->push_back("epc: centre " + post.centre_id +
                     " has tau2 + pv = 0, reporting the midpoint 50");
    }
    return 50.0;
  }
  return 100.0 * stats::normal_cdf((post.ebe - prior.mu) / std::sqrt(denom2));
}

std::vector<double> epc_all(const std::vector<PosteriorSummary>& posts,
                            const PriorEstimate& prior,
                            std::vector<std::string>* log) {
  std::vector<double> out;
  out.reserve(posts.size());
  for (const PosteriorSummary& p : posts) out.push_back(epc(p, prior, log));
  return out;
}

RankabilityReport rankability(const std::vector<double>& epc_values) {
  if (epc_values.empty()) throw ValidationError("rankability: no EPC values");
  RankabilityReport report;
  report.n = epc_values.size();
  report.ra = 12.0 * stats::population_variance(epc_values) / 1e4;
  return report;
}

std::vector<double> crude_percentile(const std::vector<double>& values) {
  const std::size_t n = values.size();
  if (n == 0) throw ValidationError("crude_percentile: empty input");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });

  std::vector<double> pct(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[idx[j + 1]] == values[idx[i]]) ++j;
    const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (std::size_t k = i; k <= j; ++k) {
      pct[idx[k]] = 100.0 * (midrank - 0.5) / static_cast<double>(n);
    }
    i = j + 1;
  }
  return pct;
}

std::vector<RankingRow> ranking_table(const std::vector<CrudeEffect>& crudes,
                                      const std::vector<PosteriorSummary>& posts,
                                      const PriorEstimate& prior,
                                      std::vector<std::string>* log) {
  if (crudes.size() != posts.size()) {
    throw ValidationError("ranking_table: crude/posterior size mismatch");
  }
  std::vector<double> theta, ebe;
  theta.reserve(crudes.size());
  ebe.reserve(posts.size());
  for (const CrudeEffect& c : crudes) theta.push_back(c.theta_hat);
  for (const PosteriorSummary& p : posts) ebe.push_back(p.ebe);

  const std::vector<double> crude_pct = crude_percentile(theta);
  const std::vector<double> ebe_pct = crude_percentile(ebe);
  const std::vector<double> er = expected_rank(posts, log);
  const std::vector<double> pcer = pcer_from_er(er);

  std::vector<RankingRow> rows;
  rows.reserve(posts.size());
  for (std::size_t i = 0; i < posts.size(); ++i) {
    RankingRow row;
    row.centre_id = posts[i].centre_id;
    row.crude_pct = crude_pct[i];
    row.ebe_pct = ebe_pct[i];
    row.er = er[i];
    row.pcer = pcer[i];
    row.epc = epc(posts[i], prior, log);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace ebmon

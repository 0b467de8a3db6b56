#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ebmon/ranking.hpp"
#include "ebmon/rng.hpp"
#include "ebmon/simulation.hpp"
#include "helpers.hpp"

using namespace ebmon;

namespace {

PosteriorSummary post(const std::string& id, double ebe, double pv) {
  PosteriorSummary p;
  p.centre_id = id;
  p.ebe = ebe;
  p.pv = pv;
  return p;
}

std::vector<PosteriorSummary> random_posteriors(Rng& g, int n) {
  std::vector<PosteriorSummary> out;
  for (int i = 0; i < n; ++i) {
    out.push_back(post("C" + std::to_string(i), g.normal(), 0.02 + 0.3 * g.uniform01()));
  }
  return out;
}

}  // namespace

TEST_CASE("expected rank: symmetry and separation") {
  const auto twins = std::vector<PosteriorSummary>{post("A", 0.3, 0.1), post("B", 0.3, 0.1)};
  const auto er2 = expected_rank(twins);
  CHECK(er2[0] == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(er2[1] == doctest::Approx(1.5).epsilon(1e-12));

  const auto far = std::vector<PosteriorSummary>{post("A", -10.0, 0.01), post("B", 0.0, 0.01),
                                                 post("C", 10.0, 0.01)};
  const auto er3 = expected_rank(far);
  CHECK(er3[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(er3[1] == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(er3[2] == doctest::Approx(3.0).epsilon(1e-6));
}

TEST_CASE("expected rank: degenerate pairs follow the tie convention") {
  std::vector<std::string> log;
  const auto tied = std::vector<PosteriorSummary>{post("A", 0.2, 0.0), post("B", 0.2, 0.0)};
  const auto er = expected_rank(tied, &log);
  CHECK(er[0] == 1.5);
  CHECK(er[1] == 1.5);
  CHECK(log.size() == 1);

  const auto split = std::vector<PosteriorSummary>{post("A", 0.1, 0.0), post("B", 0.4, 0.0)};
  const auto er2 = expected_rank(split);
  CHECK(er2[0] == 1.0);
  CHECK(er2[1] == 2.0);
}

TEST_CASE("expected rank agrees with the Monte-Carlo oracle") {
  Rng g(211);
  const auto posts = random_posteriors(g, 20);
  const auto closed = expected_rank(posts);
  const McRank mc = mc_expected_rank(posts, 40000, 998);
  for (std::size_t i = 0; i < posts.size(); ++i) {
    CHECK(std::abs(closed[i] - mc.er[i]) <= 3.0 * mc.se[i] + 1e-9);
  }
}

TEST_CASE("rank-sum identity and range") {
  Rng g(223);
  for (int rep = 0; rep < 20; ++rep) {
    const int n = 2 + static_cast<int>(g.uniform01() * 60);
    const auto posts = random_posteriors(g, n);
    const auto er = expected_rank(posts);
    const double sum = std::accumulate(er.begin(), er.end(), 0.0);
    CHECK(sum == doctest::Approx(n * (n + 1) / 2.0).epsilon(1e-9));
    for (double r : er) {
      CHECK(r >= 1.0 - 1e-12);
      CHECK(r <= n + 1e-12);
    }
  }
}

TEST_CASE("equal posterior variances: ER ordering equals EBE ordering") {
  Rng g(227);
  std::vector<PosteriorSummary> posts;
  for (int i = 0; i < 15; ++i) posts.push_back(post("C" + std::to_string(i), g.normal(), 0.2));
  const auto er = expected_rank(posts);
  for (std::size_t a = 0; a < posts.size(); ++a) {
    for (std::size_t b = 0; b < posts.size(); ++b) {
      if (posts[a].ebe < posts[b].ebe) CHECK(er[a] < er[b]);
    }
  }
}

TEST_CASE("pcer arithmetic and mean identity") {
  CHECK(pcer_from_er({1.0})[0] == 50.0);
  const auto p = pcer_from_er({1.5, 1.5});
  CHECK(p[0] == 50.0);
  CHECK(p[1] == 50.0);

  Rng g(229);
  const auto posts = random_posteriors(g, 31);
  const auto pc = pcer_from_er(expected_rank(posts));
  const double mean = std::accumulate(pc.begin(), pc.end(), 0.0) / pc.size();
  CHECK(mean == doctest::Approx(50.0).epsilon(1e-9));
}

TEST_CASE("epc formula") {
  PriorEstimate prior;
  prior.mu = 0.0;
  prior.tau2 = 1.0;
  CHECK(epc(post("A", 0.0, 0.5), prior) == doctest::Approx(50.0).epsilon(1e-12));
  CHECK(epc(post("A", 1.0, 0.5), prior) == doctest::Approx(79.29).epsilon(1e-3));

  std::vector<std::string> log;
  PriorEstimate degenerate;
  degenerate.mu = 0.3;
  degenerate.tau2 = 0.0;
  CHECK(epc(post("A", 0.3, 0.0), degenerate, &log) == 50.0);
  CHECK(log.size() == 1);
}

TEST_CASE("epc is strictly increasing in the EBE") {
  PriorEstimate prior;
  prior.mu = 0.1;
  prior.tau2 = 0.4;
  double last = -1.0;
  for (double ebe = -2.0; ebe <= 2.0; ebe += 0.1) {
    const double e = epc(post("A", ebe, 0.25), prior);
    CHECK(e > last);
    last = e;
  }
}

TEST_CASE("rankability") {
  CHECK(rankability({50.0, 50.0, 50.0}).ra == 0.0);
  const RankabilityReport r = rankability({12.5, 37.5, 62.5, 87.5});
  CHECK(r.ra == doctest::Approx(0.9375).epsilon(1e-12));
  CHECK(r.n == 4);

  // tau2 = 0 prior: every EPC is 50, RA is 0.
  PriorEstimate flat;
  flat.mu = 0.2;
  flat.tau2 = 0.0;
  std::vector<double> epcs;
  for (int i = 0; i < 10; ++i) {
    epcs.push_back(epc(post("C", 0.2, 0.0), flat));
  }
  CHECK(rankability(epcs).ra == 0.0);

  // RA = 0 iff all EPC equal.
  CHECK(rankability({40.0, 60.0}).ra > 0.0);
}

TEST_CASE("crude percentiles with midranks") {
  const auto p = crude_percentile({1.0, 2.0, 3.0});
  CHECK(p[0] == doctest::Approx(100.0 / 6.0).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(50.0).epsilon(1e-12));
  CHECK(p[2] == doctest::Approx(250.0 / 3.0).epsilon(1e-12));

  const auto tied = crude_percentile({4.0, 4.0});
  CHECK(tied[0] == 50.0);
  CHECK(tied[1] == 50.0);
}

TEST_CASE("crude percentiles are invariant under monotone maps") {
  Rng g(233);
  std::vector<double> values;
  for (int i = 0; i < 40; ++i) values.push_back(g.normal());
  const auto base = crude_percentile(values);
  std::vector<double> mapped;
  for (double v : values) mapped.push_back(std::exp(2.0 * v) + 1.0);
  const auto after = crude_percentile(mapped);
  for (std::size_t i = 0; i < values.size(); ++i) {
    CHECK(base[i] == doctest::Approx(after[i]).epsilon(1e-12));
  }
}

TEST_CASE("ranking table wires percentiles, er, pcer and epc together") {
  Rng g(239);
  std::vector<CrudeEffect> crudes;
  for (int i = 0; i < 12; ++i) {
    crudes.push_back({"C" + std::to_string(i), 1995, g.normal(), 0.1 + 0.2 * g.uniform01()});
  }
  const PriorEstimate prior = fit_prior_mle(crudes);
  std::vector<PosteriorSummary> posts;
  for (const auto& c : crudes) posts.push_back(posterior(c, prior));
  const auto rows = ranking_table(crudes, posts, prior);
  REQUIRE(rows.size() == crudes.size());
  const auto er = expected_rank(posts);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].er == doctest::Approx(er[i]).epsilon(1e-12));
    CHECK(rows[i].pcer ==
          doctest::Approx(100.0 * (er[i] - 0.5) / rows.size()).epsilon(1e-12));
    CHECK(rows[i].epc == doctest::Approx(epc(posts[i], prior)).epsilon(1e-12));
  }
}

#include <doctest.h>

#include <cmath>

#include "ebmon/rng.hpp"
#include "ebmon/stats.hpp"

using namespace ebmon;

TEST_CASE("normal cdf and quantile invert each other") {
  for (double p : {1e-10, 1e-4, 0.025, 0.3, 0.5, 0.7, 0.975, 1.0 - 1e-4}) {
    CHECK(stats::normal_cdf(stats::normal_quantile(p)) == doctest::Approx(p).epsilon(1e-10));
  }
  CHECK(stats::normal_quantile(0.975) == doctest::Approx(1.959963985).epsilon(1e-9));
  CHECK(stats::normal_cdf(0.0) == doctest::Approx(0.5));
}

TEST_CASE("central z and chi-square quantile") {
  CHECK(stats::central_z(0.0) == 0.0);
  CHECK(stats::central_z(0.95) == doctest::Approx(1.959963985).epsilon(1e-9));
  const double z = stats::central_z(0.95);
  CHECK(stats::chi2_quantile_1df(0.95) == doctest::Approx(z * z).epsilon(1e-12));
  CHECK(stats::chi2_quantile_1df(0.95) == doctest::Approx(3.841458821).epsilon(1e-8));
}

TEST_CASE("median uses the average-of-central convention") {
  CHECK(stats::median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(stats::median({4.0, 1.0, 2.0, 3.0}) == 2.5);
  CHECK(stats::median({5.0}) == 5.0);
}

TEST_CASE("rng substreams are label-stable and independent") {
  Rng root(42);
  Rng a1 = root.substream("centre/C1");
  Rng a2 = root.substream("centre/C1");
  Rng b = root.substream("centre/C2");
  const double x1 = a1.uniform01();
  CHECK(x1 == a2.uniform01());
  CHECK(x1 != b.uniform01());
  // Consuming one stream leaves another untouched.
  Rng c = root.substream("centre/C3");
  for (int i = 0; i < 100; ++i) (void)c.normal();
  Rng a3 = root.substream("centre/C1");
  CHECK(a3.uniform01() == x1);
}

TEST_CASE("rng moments are sane") {
  Rng g(7);
  const int n = 200000;
  double su = 0.0, sn = 0.0, snn = 0.0;
  long sp = 0;
  for (int i = 0; i < n; ++i) {
    su += g.uniform01();
    const double z = g.normal();
    sn += z;
    snn += z * z;
    sp += g.poisson(3.5);
  }
  CHECK(su / n == doctest::Approx(0.5).epsilon(0.01));
  CHECK(sn / n == doctest::Approx(0.0).epsilon(0.02));
  CHECK(snn / n == doctest::Approx(1.0).epsilon(0.02));
  CHECK(static_cast<double>(sp) / n == doctest::Approx(3.5).epsilon(0.02));
}

TEST_CASE("chunked poisson keeps the mean for large lambda") {
  Rng g(11);
  const int n = 20000;
  double s = 0.0, ss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = static_cast<double>(g.poisson(695.0));
    s += x;
    ss += x * x;
  }
  const double mean = s / n;
  const double var = ss / n - mean * mean;
  CHECK(mean == doctest::Approx(695.0).epsilon(0.005));
  CHECK(var == doctest::Approx(695.0).epsilon(0.05));
}

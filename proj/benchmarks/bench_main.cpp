#include <benchmark/benchmark.h>

#include <vector>

#include "ebmon/eb_univariate.hpp"
#include "ebmon/longitudinal.hpp"
#include "ebmon/ranking.hpp"
#include "ebmon/rng.hpp"
#include "ebmon/simulation.hpp"
#include "ebmon/stage1.hpp"
#include "ebmon/stats.hpp"

using namespace ebmon;

namespace {

std::vector<PatientRecord> make_patients(int n) {
  Rng g(1);
  std::vector<PatientRecord> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    PatientRecord rec;
    rec.centre_id = "C" + std::to_string(k % 112);
    rec.year = 1995;
    rec.covariates = {1.0, g.normal(), g.normal()};
    const double eta = -1.5 + 0.4 * rec.covariates[1] - 0.2 * rec.covariates[2];
    rec.outcome = g.bernoulli(stats::expit(eta)) ? 1 : 0;
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<CrudeEffect> make_crudes(int n) {
  Rng g(2);
  std::vector<CrudeEffect> out;
  for (int i = 0; i < n; ++i) {
    CrudeEffect c;
    c.centre_id = "C" + std::to_string(i);
    c.year = 1995;
    c.s2 = 0.05 + 0.3 * g.uniform01();
    c.theta_hat = 0.35 * g.normal() + std::sqrt(c.s2) * g.normal();
    out.push_back(std::move(c));
  }
  return out;
}

Panel make_panel(int n_centres) {
  LongitudinalModel truth;
  truth.structure = CovStructure::Ar1;
  truth.years = {1991, 1992, 1993, 1994, 1995};
  truth.structure_params = {{"tau2", 0.3}, {"rho", 0.9}};
  truth.T = build_structured_T(truth.structure, truth.structure_params, truth.years);
  truth.M = Eigen::VectorXd::Constant(5, 0.2);

  ScenarioConfig cfg;
  cfg.n_centres = n_centres;
  cfg.years = truth.years;
  cfg.mode = SimMode::CrudeOnly;
  cfg.count_model = PatientCountModel::Poisson;
  cfg.patients_per_centre_year = 60;
  cfg.baseline_rate = 0.2;
  cfg.prior_model = truth;
  cfg.seed = 3;
  cfg.has_seed = true;
  return assemble_panel(simulate(cfg).crudes);
}

void BM_FitLogistic(benchmark::State& state) {
  const auto patients = make_patients(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(fit_logistic(patients));
  }
}
BENCHMARK(BM_FitLogistic)->Arg(10000)->Arg(80000)->Unit(benchmark::kMillisecond);

void BM_UnivariateEm(benchmark::State& state) {
  const auto crudes = make_crudes(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(fit_prior_mle(crudes));
  }
}
BENCHMARK(BM_UnivariateEm)->Arg(112)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_ExpectedRank(benchmark::State& state) {
  const auto crudes = make_crudes(static_cast<int>(state.range(0)));
  const PriorEstimate prior = fit_prior_mle(crudes);
  std::vector<PosteriorSummary> posts;
  for (const auto& c : crudes) posts.push_back(posterior(c, prior));
  for (auto _ : state) {
    benchmark::DoNotOptimize(expected_rank(posts));
  }
}
BENCHMARK(BM_ExpectedRank)->Arg(140)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_UnstructuredEm(benchmark::State& state) {
  const Panel panel = make_panel(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(fit_unstructured(panel));
  }
}
BENCHMARK(BM_UnstructuredEm)->Arg(112)->Unit(benchmark::kMillisecond);

void BM_Ar1ProfileFit(benchmark::State& state) {
  const Panel panel = make_panel(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(fit_structured(panel, CovStructure::Ar1));
  }
}
BENCHMARK(BM_Ar1ProfileFit)->Arg(112)->Unit(benchmark::kMillisecond);

void BM_PredictAll(benchmark::State& state) {
  const Panel panel = make_panel(112);
  const LongitudinalModel fit = fit_structured(panel, CovStructure::Ar1);
  const Extrapolation ext = extrapolate(fit, MeanPolicy::CarryLast);
  for (auto _ : state) {
    benchmark::DoNotOptimize(predict_all(ext, panel));
  }
}
BENCHMARK(BM_PredictAll)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

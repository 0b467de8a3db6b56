#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ebmon/io.hpp"
#include "ebmon/rng.hpp"
#include "ebmon/simulation.hpp"
#include "helpers.hpp"

using namespace ebmon;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("ebmon_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

struct RunResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

RunResult run_cli(const std::string& args, const fs::path& dir) {
  const fs::path out_file = dir / "stdout.txt";
  const fs::path err_file = dir / "stderr.txt";
  const std::string cmd = std::string(EBMON_CLI_PATH) + " " + args + " > " +
                          out_file.string() + " 2> " + err_file.string();
  const int status = std::system(cmd.c_str());
  RunResult res;
  res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  const auto slurp = [](const fs::path& p) {
    std::ifstream in(p);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  res.out = slurp(out_file);
  res.err = slurp(err_file);
  return res;
}

std::string slurp_file(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

int count_data_rows(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::string line;
  int rows = 0;
  bool seen_header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!seen_header) {
      seen_header = true;
      continue;
    }
    ++rows;
  }
  return rows;
}

}  // namespace

TEST_CASE("format6 keeps six significant digits") {
  CHECK(io::format6(0.625) == "0.625");
  CHECK(io::format6(1234567.0) == "1.23457e+06");
  CHECK(io::format6(0.123456789) == "0.123457");
  CHECK(io::format6(-0.0) == "-0");
}

TEST_CASE("crude CSV round trip") {
  const fs::path dir = fresh_dir("roundtrip");
  Rng g(401);
  const auto crudes = testutil::random_crudes(g, 20, 0.1, 0.2, 0.05, 0.5);
  io::write_crudes(dir / "crude.csv", crudes, {.timestamp = true});
  const auto back = io::read_crudes(dir / "crude.csv");
  REQUIRE(back.size() == crudes.size());
  for (std::size_t i = 0; i < crudes.size(); ++i) {
    CHECK(back[i].centre_id == crudes[i].centre_id);
    CHECK(back[i].year == crudes[i].year);
    CHECK(back[i].theta_hat == doctest::Approx(crudes[i].theta_hat).epsilon(1e-5));
    CHECK(back[i].s2 == doctest::Approx(crudes[i].s2).epsilon(1e-5));
  }
}

TEST_CASE("patient CSV validation names the offending column") {
  const fs::path dir = fresh_dir("patient_csv");
  write_file(dir / "bad_header.csv", "centre,year,outcome,x1\nA,1995,1,1\n");
  CHECK_THROWS_WITH_AS(io::read_patients(dir / "bad_header.csv"),
                       doctest::Contains("centre_id"), ValidationError);

  write_file(dir / "bad_x.csv", "centre_id,year,outcome,z1\nA,1995,1,1\n");
  CHECK_THROWS_WITH_AS(io::read_patients(dir / "bad_x.csv"), doctest::Contains("x1"),
                       ValidationError);

  write_file(dir / "bad_const.csv", "centre_id,year,outcome,x1\nA,1995,1,2\n");
  CHECK_THROWS_WITH_AS(io::read_patients(dir / "bad_const.csv"),
                       doctest::Contains("constant"), ValidationError);

  write_file(dir / "ok.csv", "centre_id,year,outcome,x1,x2\nA,1995,1,1,0.5\n");
  const auto patients = io::read_patients(dir / "ok.csv");
  REQUIRE(patients.size() == 1);
  CHECK(patients[0].covariates == std::vector<double>{1.0, 0.5});
}

TEST_CASE("scenario config parsing") {
  const fs::path dir = fresh_dir("scenario");
  write_file(dir / "s.cfg",
             "# comment\n"
             "n_centres = 12\n"
             "years = 1991:1993\n"
             "mode = crude\n"
             "patients = poisson 14\n"
             "rate = 0.26\n"
             "slopes = 2.5\n"
             "structure = ar1\n"
             "tau2 = 0.336\n"
             "rho = 0.95\n"
             "mu = 0.23\n"
             "seed = 7\n");
  const ScenarioConfig cfg = io::read_scenario(dir / "s.cfg");
  CHECK(cfg.n_centres == 12);
  CHECK(cfg.years == std::vector<int>{1991, 1992, 1993});
  CHECK(cfg.mode == SimMode::CrudeOnly);
  CHECK(cfg.count_model == PatientCountModel::Poisson);
  CHECK(cfg.patients_per_centre_year == 14.0);
  CHECK(cfg.beta_slopes == std::vector<double>{2.5});
  REQUIRE(cfg.prior_model.has_value());
  CHECK(cfg.prior_model->structure_params.at("rho") == 0.95);
  CHECK(cfg.has_seed);

  write_file(dir / "bad.cfg", "n_centres = 5\nyears = 1991:1992\nrate = 0.2\n"
                              "patients = fixed 10\nmu = 0\ntau2 = 0.1\nseed = 1\n"
                              "bogus = 3\n");
  CHECK_THROWS_WITH_AS(io::read_scenario(dir / "bad.cfg"), doctest::Contains("bogus"),
                       ValidationError);
}

TEST_CASE("model JSON round trip preserves the generator") {
  const fs::path dir = fresh_dir("model_json");
  LongitudinalModel m;
  m.structure = CovStructure::Ar1;
  m.years = {1991, 1992, 1993};
  m.structure_params = {{"tau2", 0.25}, {"rho", 0.945}};
  m.T = build_structured_T(m.structure, m.structure_params, m.years);
  m.M = Eigen::VectorXd::Constant(3, 0.3);
  m.log_likelihood = -410.30;
  m.n_mean_params = 3;
  m.n_cov_params = 2;
  io::write_text(dir / "m.json", io::model_report_json(m));
  const LongitudinalModel back = io::model_from_json(dir / "m.json");
  CHECK(back.structure == CovStructure::Ar1);
  CHECK(back.log_likelihood == -410.30);
  CHECK((back.T - m.T).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((back.M - m.M).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("cli: score turns one centre's patients into one crude row") {
  const fs::path dir = fresh_dir("cli_score");
  std::ostringstream csv;
  csv << "centre_id,year,outcome,x1\n";
  for (int k = 0; k < 100; ++k) csv << "A,1995," << (k < 30 ? 1 : 0) << ",1\n";
  write_file(dir / "patients.csv", csv.str());

  const RunResult res = run_cli("score --input " + (dir / "patients.csv").string() +
                                    " --mode patient --out " + (dir / "out").string(),
                                dir);
  CHECK(res.exit_code == 0);
  CHECK(count_data_rows(dir / "out" / "crude.csv") == 1);
  const auto crudes = io::read_crudes(dir / "out" / "crude.csv");
  REQUIRE(crudes.size() == 1);
  // Intercept-only fit absorbs the event rate: theta_hat = 0 at 6 digits.
  CHECK(crudes[0].theta_hat == doctest::Approx(0.0).scale(1.0).epsilon(1e-6));
}

TEST_CASE("cli: malformed header exits 2 and names the column") {
  const fs::path dir = fresh_dir("cli_badheader");
  write_file(dir / "bad.csv", "centre,year,outcome,x1\nA,1995,1,1\n");
  const RunResult res = run_cli("score --input " + (dir / "bad.csv").string() +
                                    " --mode patient --out " + (dir / "out").string(),
                                dir);
  CHECK(res.exit_code == 2);
  CHECK(res.err.find("centre_id") != std::string::npos);
}

TEST_CASE("cli: non-convergence surfaces as exit 3") {
  const fs::path dir = fresh_dir("cli_exit3");
  std::ostringstream csv;
  csv << "centre_id,year,outcome,x1\n";
  for (int k = 0; k < 60; ++k) csv << "A,1995,0,1\n";  // separated fit
  write_file(dir / "patients.csv", csv.str());
  const RunResult res = run_cli("score --input " + (dir / "patients.csv").string() +
                                    " --mode patient --out " + (dir / "out").string(),
                                dir);
  CHECK(res.exit_code == 3);
  CHECK(res.err.find("separation") != std::string::npos);
}

TEST_CASE("cli: score refuses crude input") {
  const fs::path dir = fresh_dir("cli_score_crude");
  Rng g(439);
  io::write_crudes(dir / "crude.csv", testutil::random_crudes(g, 5, 0.0, 0.1, 0.1, 0.2),
                   {.timestamp = false});
  const RunResult res = run_cli("score --input " + (dir / "crude.csv").string() +
                                    " --mode crude --out " + (dir / "out").string(),
                                dir);
  CHECK(res.exit_code == 2);
}

TEST_CASE("cli: summary-mode input reproduces patient-mode crude output") {
  const fs::path dir = fresh_dir("cli_equiv");
  ScenarioConfig cfg;
  cfg.n_centres = 12;
  cfg.years = {1994, 1995};
  cfg.mode = SimMode::PatientLevel;
  cfg.count_model = PatientCountModel::Fixed;
  cfg.patients_per_centre_year = 80;
  cfg.baseline_rate = 0.25;
  cfg.prior_mu = 0.0;
  cfg.prior_tau2 = 0.1;
  cfg.seed = 11;
  cfg.has_seed = true;
  const SyntheticDataset data = simulate(cfg);
  io::write_patients(dir / "patients.csv", data.patients, {.timestamp = false});

  const RunResult a =
      run_cli("score --input " + (dir / "patients.csv").string() +
                  " --mode patient --no-timestamp --out " + (dir / "out_patient").string(),
              dir);
  REQUIRE(a.exit_code == 0);

  // Feed the summaries the patient run wrote back through summary mode.
  const RunResult b = run_cli(
      "score --input " + (dir / "out_patient" / "summaries.csv").string() +
          " --mode summary --no-timestamp --out " + (dir / "out_summary").string(),
      dir);
  REQUIRE(b.exit_code == 0);

  const auto ca = io::read_crudes(dir / "out_patient" / "crude.csv");
  const auto cb = io::read_crudes(dir / "out_summary" / "crude.csv");
  REQUIRE(ca.size() == cb.size());
  for (std::size_t i = 0; i < ca.size(); ++i) {
    CHECK(ca[i].centre_id == cb[i].centre_id);
    CHECK(ca[i].year == cb[i].year);
    CHECK(ca[i].theta_hat == doctest::Approx(cb[i].theta_hat).epsilon(5e-5).scale(1.0));
    CHECK(ca[i].s2 == doctest::Approx(cb[i].s2).epsilon(5e-5));
  }
}

TEST_CASE("cli: identical inputs give byte-identical outputs without timestamps") {
  const fs::path dir = fresh_dir("cli_idempotent");
  Rng g(419);
  const auto crudes = testutil::random_crudes(g, 25, 0.05, 0.15, 0.05, 0.4);
  io::write_crudes(dir / "crude.csv", crudes, {.timestamp = false});

  for (const char* sub : {"a", "b"}) {
    const RunResult res =
        run_cli("rank --input " + (dir / "crude.csv").string() +
                    " --mode crude --no-timestamp --out " + (dir / sub).string(),
                dir);
    REQUIRE(res.exit_code == 0);
  }
  for (const char* file : {"ranking.csv", "report.csv", "summary.csv", "intervals_ci.csv",
                           "intervals_ppi.csv", "percentiles.csv"}) {
    CHECK(slurp_file(dir / "a" / "1995" / file) == slurp_file(dir / "b" / "1995" / file));
  }
}

TEST_CASE("cli: a zero-variation stratum reports RA 0 and flat EPC") {
  const fs::path dir = fresh_dir("cli_flat");
  std::vector<CrudeEffect> crudes;
  for (int i = 0; i < 10; ++i) {
    crudes.push_back({"C" + std::to_string(i), 1995, 0.21, 0.1 + 0.01 * i});
  }
  io::write_crudes(dir / "crude.csv", crudes, {.timestamp = false});
  const RunResult res = run_cli("rank --input " + (dir / "crude.csv").string() +
                                    " --mode crude --no-timestamp --out " +
                                    (dir / "out").string(),
                                dir);
  REQUIRE(res.exit_code == 0);
  const std::string summary = slurp_file(dir / "out" / "1995" / "summary.csv");
  CHECK(summary.find("ra,n,rho") != std::string::npos);
  CHECK(summary.find("0,10,0") != std::string::npos);
  const std::string ranking = slurp_file(dir / "out" / "1995" / "ranking.csv");
  std::istringstream in(ranking);
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    CHECK(line.substr(line.rfind(',') + 1) == "50");
  }
}

TEST_CASE("cli: ranking rows are sorted by EBE with stable ties") {
  const fs::path dir = fresh_dir("cli_sorted");
  std::vector<CrudeEffect> crudes;
  Rng g(421);
  for (int i = 0; i < 15; ++i) {
    crudes.push_back({"C" + std::to_string(i), 1995, g.normal(), 0.2});
  }
  crudes.push_back({"Zed", 1995, crudes[3].theta_hat, 0.2});  // exact tie with C3
  io::write_crudes(dir / "crude.csv", crudes, {.timestamp = false});
  const RunResult res = run_cli("rank --input " + (dir / "crude.csv").string() +
                                    " --mode crude --no-timestamp --out " +
                                    (dir / "out").string(),
                                dir);
  REQUIRE(res.exit_code == 0);

  std::istringstream in(slurp_file(dir / "out" / "1995" / "ranking.csv"));
  std::string line;
  std::getline(in, line);
  double last_pct = -1.0;
  std::string last_id;
  while (std::getline(in, line)) {
    const auto first_comma = line.find(',');
    const std::string id = line.substr(0, first_comma);
    const auto second_comma = line.find(',', first_comma + 1);
    const auto third_comma = line.find(',', second_comma + 1);
    const double ebe_pct =
        std::stod(line.substr(second_comma + 1, third_comma - second_comma - 1));
    if (ebe_pct == last_pct) CHECK(last_id < id);
    CHECK(ebe_pct >= last_pct);
    last_pct = ebe_pct;
    last_id = id;
  }
}

TEST_CASE("cli: single-year input directs the user to rank") {
  const fs::path dir = fresh_dir("cli_oneyear");
  Rng g(431);
  const auto crudes = testutil::random_crudes(g, 10, 0.0, 0.1, 0.1, 0.3);
  io::write_crudes(dir / "crude.csv", crudes, {.timestamp = false});
  const RunResult res =
      run_cli("longitudinal --input " + (dir / "crude.csv").string() +
                  " --mode crude --structure ar1 --out " + (dir / "out").string(),
              dir);
  CHECK(res.exit_code == 2);
  CHECK(res.err.find("rank") != std::string::npos);
}

TEST_CASE("cli: two structures produce a paired-EPC scatter file") {
  const fs::path dir = fresh_dir("cli_pairs");
  LongitudinalModel truth;
  truth.structure = CovStructure::Ar1;
  truth.years = {1991, 1992, 1993, 1994};
  truth.structure_params = {{"tau2", 0.3}, {"rho", 0.85}};
  truth.T = build_structured_T(truth.structure, truth.structure_params, truth.years);
  truth.M = Eigen::VectorXd::Constant(4, 0.2);

  Rng g(433);
  std::vector<CrudeEffect> crudes;
  {
    ScenarioConfig cfg;
    cfg.n_centres = 40;
    cfg.years = truth.years;
    cfg.mode = SimMode::CrudeOnly;
    cfg.count_model = PatientCountModel::Fixed;
    cfg.patients_per_centre_year = 60;
    cfg.baseline_rate = 0.25;
    cfg.prior_model = truth;
    cfg.seed = 12;
    cfg.has_seed = true;
    crudes = simulate(cfg).crudes;
  }
  io::write_crudes(dir / "crude.csv", crudes, {.timestamp = false});

  const RunResult res = run_cli(
      "longitudinal --input " + (dir / "crude.csv").string() +
          " --mode crude --structure ar1 --structure rc --no-timestamp --out " +
          (dir / "out").string(),
      dir);
  REQUIRE(res.exit_code == 0);
  const fs::path pairs = dir / "out" / "epc_pairs_ar1_random_coefficients.csv";
  CHECK(count_data_rows(pairs) == 40);
  CHECK(count_data_rows(dir / "out" / "predictions_ar1.csv") == 40);
  CHECK(fs::exists(dir / "out" / "model_ar1.json"));
  CHECK(fs::exists(dir / "out" / "model_random_coefficients.json"));
}

TEST_CASE("cli: published comparison table via injected models") {
  const fs::path dir = fresh_dir("cli_fixture");
  write_file(dir / "model1.json", R"({
    "structure": "ar1",
    "years": [1991, 1992, 1993, 1994, 1995],
    "mean": [0.27, 0.33, 0.34, 0.36, 0.37],
    "structure_params": {"tau2": 0.25, "rho": 0.945},
    "log_likelihood": -410.30
  })");
  write_file(dir / "model2.json", R"({
    "structure": "random_coefficients",
    "years": [1991, 1992, 1993, 1994, 1995],
    "structure_params": {"alpha": 0.18, "beta": 0.053, "tau_a2": 0.19,
                          "tau_b2": 0.0125, "rho_ab": -0.23},
    "log_likelihood": -408.51
  })");
  const RunResult res = run_cli(
      "longitudinal --model-json " + (dir / "model1.json").string() + " --model-json " +
          (dir / "model2.json").string() + " --extrapolate manual=0.40 --no-timestamp --out " +
          (dir / "out").string(),
      dir);
  REQUIRE(res.exit_code == 0);

  const std::string table = slurp_file(dir / "out" / "model_comparison.csv");
  CHECK(table.find("ar1,5,2,-410.3,-417.3,834.6,0.4,0.25") != std::string::npos);
  CHECK(table.find("random_coefficients,2,3,-408.51,-413.51,827.02,0.498,0.505494") !=
        std::string::npos);
}

TEST_CASE("cli: simulate is reproducible and writes the full truth grid") {
  const fs::path dir = fresh_dir("cli_sim");
  write_file(dir / "s.cfg",
             "n_centres = 9\nyears = 1991:1993\nmode = patient\n"
             "patients = fixed 40\nrate = 0.3\nmu = 0.02\ntau2 = 0.08\nseed = 5\n");
  for (const char* sub : {"a", "b"}) {
    const RunResult res = run_cli("simulate --config " + (dir / "s.cfg").string() +
                                      " --no-timestamp --out " + (dir / sub).string(),
                                  dir);
    REQUIRE(res.exit_code == 0);
  }
  CHECK(slurp_file(dir / "a" / "crude.csv") == slurp_file(dir / "b" / "crude.csv"));
  CHECK(slurp_file(dir / "a" / "truth.csv") == slurp_file(dir / "b" / "truth.csv"));
  CHECK(slurp_file(dir / "a" / "patients.csv") == slurp_file(dir / "b" / "patients.csv"));
  CHECK(count_data_rows(dir / "a" / "truth.csv") == 9 * 3);

  // A different seed changes the draws.
  const RunResult res = run_cli("simulate --config " + (dir / "s.cfg").string() +
                                    " --seed 6 --no-timestamp --out " + (dir / "c").string(),
                                dir);
  REQUIRE(res.exit_code == 0);
  CHECK(slurp_file(dir / "a" / "crude.csv") != slurp_file(dir / "c" / "crude.csv"));
}

TEST_CASE("cli: simulate-score-rank pipeline hangs together") {
  const fs::path dir = fresh_dir("cli_pipeline");
  write_file(dir / "s.cfg",
             "n_centres = 40\nyears = 1995:1995\nmode = patient\n"
             "patients = fixed 300\nrate = 0.2\nmu = 0.0\ntau2 = 0.15\nseed = 31\n");
  REQUIRE(run_cli("simulate --config " + (dir / "s.cfg").string() + " --out " +
                      (dir / "sim").string(),
                  dir)
              .exit_code == 0);
  REQUIRE(run_cli("score --input " + (dir / "sim" / "patients.csv").string() +
                      " --mode patient --out " + (dir / "scored").string(),
                  dir)
              .exit_code == 0);
  const RunResult rank = run_cli("rank --input " + (dir / "scored" / "crude.csv").string() +
                                     " --mode crude --out " + (dir / "ranked").string(),
                                 dir);
  REQUIRE(rank.exit_code == 0);
  CHECK(rank.out.find("rho=") != std::string::npos);
  CHECK(fs::exists(dir / "ranked" / "1995" / "ranking.csv"));
  const std::string summary = slurp_file(dir / "ranked" / "1995" / "summary.csv");
  CHECK(summary.find("ra,n,rho") != std::string::npos);
}

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <future>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ebmon/eb_univariate.hpp"
#include "ebmon/io.hpp"
#include "ebmon/longitudinal.hpp"
#include "ebmon/ranking.hpp"
#include "ebmon/simulation.hpp"
#include "ebmon/stage1.hpp"
#include "ebmon/stats.hpp"

namespace fs = std::filesystem;
using namespace ebmon;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;

struct CommonArgs {
  std::string input;
  std::string mode = "crude";
  std::string stratify_by;
  std::string out = ".";
  double level = 0.95;
  double min_information = 1e-6;
  bool no_timestamp = false;

  io::WriteOptions write_options() const { return {.timestamp = !no_timestamp}; }
};

void append_lines(std::vector<std::string>& dest, const std::vector<std::string>& src) {
  dest.insert(dest.end(), src.begin(), src.end());
}

// Per-stratum stage-1 run: fit beta (pooled or per year), reduce, score.
struct Stage1Result {
  std::vector<CentreYearSummary> summaries;
  std::vector<CrudeEffect> crudes;
  std::map<int, BetaModel> betas;  // keyed by year; -1 = pooled
  std::vector<std::string> log;
};

Stage1Result run_stage1(const std::vector<PatientRecord>& patients,
                        const std::string& stratify_by, double min_information) {
  Stage1Result res;
  if (stratify_by.empty()) {
    const BetaModel beta = fit_logistic(patients);
    res.betas[-1] = beta;
    res.summaries = summarize(patients, beta);
  } else if (stratify_by == "year") {
    std::map<int, std::vector<PatientRecord>> by_year;
    for (const PatientRecord& rec : patients) by_year[rec.year].push_back(rec);
    for (auto& [year, group] : by_year) {
      const BetaModel beta = fit_logistic(group);
      res.betas[year] = beta;
      auto part = summarize(group, beta);
      res.summaries.insert(res.summaries.end(), part.begin(), part.end());
    }
  } else {
    throw ValidationError("--stratify-by supports only 'year'");
  }
  res.crudes = crude_effects(res.summaries, min_information, &res.log);
  return res;
}

struct CrudeInput {
  std::vector<CrudeEffect> crudes;
  std::vector<std::string> log;
};

CrudeInput load_crudes(const CommonArgs& args) {
  CrudeInput in;
  if (args.mode == "crude") {
    in.crudes = io::read_crudes(args.input);
  } else if (args.mode == "summary") {
    const auto summaries = io::read_summaries(args.input);
    in.crudes = crude_effects(summaries, args.min_information, &in.log);
  } else if (args.mode == "patient") {
    const auto patients = io::read_patients(args.input);
    Stage1Result s1 = run_stage1(patients, args.stratify_by, args.min_information);
    in.crudes = std::move(s1.crudes);
    in.log = std::move(s1.log);
  } else {
    throw ValidationError("--mode must be patient, summary or crude");
  }
  if (in.crudes.empty()) throw ValidationError("no usable crude effects in " + args.input);
  return in;
}

std::string beta_json(const BetaModel& beta) {
  std::ostringstream os;
  os << "{\n  \"coefficients\": [";
  for (std::size_t j = 0; j < beta.coefficients.size(); ++j) {
    if (j > 0) os << ", ";
    os << beta.coefficients[j];
  }
  os << "],\n  \"converged\": " << (beta.converged ? "true" : "false")
     << ",\n  \"iterations\": " << beta.iterations
     << ",\n  \"log_likelihood\": " << beta.log_likelihood << "\n}\n";
  return os.str();
}

int cmd_score(const CommonArgs& args) {
  if (args.mode == "crude") {
    throw ValidationError("score consumes patient or summary input, not crude effects");
  }
  const fs::path out(args.out);
  const io::WriteOptions wopts = args.write_options();

  std::vector<std::string> log;
  std::vector<CrudeEffect> crudes;
  if (args.mode == "patient") {
    const auto patients = io::read_patients(args.input);
    Stage1Result s1 = run_stage1(patients, args.stratify_by, args.min_information);
    crudes = std::move(s1.crudes);
    log = std::move(s1.log);
    for (const auto& [year, beta] : s1.betas) {
      const std::string name = year < 0 ? "beta.json" : "beta_" + std::to_string(year) + ".json";
      io::write_text(out / name, beta_json(beta));
    }
    io::write_summaries(out / "summaries.csv", s1.summaries, wopts);
  } else {
    const auto summaries = io::read_summaries(args.input);
    crudes = crude_effects(summaries, args.min_information, &log);
  }
  if (crudes.empty()) throw ValidationError("no centre-year passed the information threshold");

  io::write_crudes(out / "crude.csv", crudes, wopts);
  if (args.stratify_by == "year") {
    std::map<int, std::vector<CrudeEffect>> by_year;
    for (const CrudeEffect& c : crudes) by_year[c.year].push_back(c);
    for (const auto& [year, group] : by_year) {
      io::write_crudes(out / ("crude_" + std::to_string(year) + ".csv"), group, wopts);
    }
  }
  {
    std::ostringstream os;
    for (const std::string& entry : log) os << entry << "\n";
    io::write_text(out / "log.txt", os.str());
  }
  std::cout << "score: wrote " << crudes.size() << " crude effects to "
            << (out / "crude.csv").string() << "\n";
  return 0;
}

struct StratumOutput {
  int year = 0;
  std::size_t n = 0;
  double mu = 0.0, tau2 = 0.0, rho = 0.0, ra = 0.0;
};

StratumOutput rank_stratum(int year, const std::vector<CrudeEffect>& crudes,
                           const CommonArgs& args, const std::string& estimator,
                           std::vector<std::string> log) {
  const fs::path dir = fs::path(args.out) / std::to_string(year);
  const io::WriteOptions wopts = args.write_options();

  const PriorEstimate prior =
      estimator == "moment" ? fit_prior_moment(crudes) : fit_prior_mle(crudes);
  if (prior.at_boundary) {
    log.push_back("prior: tau2 clamped at 0 (boundary solution); EPC=50, RA=0 follow");
  }

  std::vector<PosteriorSummary> posts;
  posts.reserve(crudes.size());
  for (const CrudeEffect& c : crudes) posts.push_back(posterior(c, prior));

  std::vector<io::ReportRow> report;
  std::vector<io::IntervalRow> ci_rows, ppi_rows;
  for (std::size_t i = 0; i < crudes.size(); ++i) {
    io::ReportRow r;
    r.centre_id = crudes[i].centre_id;
    r.theta_hat = crudes[i].theta_hat;
    r.s2 = crudes[i].s2;
    r.ebe = posts[i].ebe;
    r.pv = posts[i].pv;
    r.shrinkage = posts[i].shrinkage;
    r.ci = confidence_interval(crudes[i], args.level);
    r.ppi = posterior_interval(posts[i], args.level);
    report.push_back(r);
    ci_rows.push_back({r.centre_id, r.theta_hat, r.ci});
    ppi_rows.push_back({r.centre_id, r.ebe, r.ppi});
  }

  std::vector<RankingRow> rows = ranking_table(crudes, posts, prior, &log);
  std::vector<io::PercentileRow> pct;
  pct.reserve(rows.size());
  for (const RankingRow& r : rows) {
    pct.push_back({r.centre_id, r.crude_pct, r.ebe_pct, r.epc});
  }
  std::vector<double> epcs;
  epcs.reserve(rows.size());
  for (const RankingRow& r : rows) epcs.push_back(r.epc);
  const RankabilityReport report_ra = rankability(epcs);
  const double rho = proportion_true_variation(prior, crudes);

  // Ranking rows sorted by EBE ascending, centre id breaking ties.
  {
    std::vector<std::size_t> order(rows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (posts[a].ebe != posts[b].ebe) return posts[a].ebe < posts[b].ebe;
      return posts[a].centre_id < posts[b].centre_id;
    });
    std::vector<RankingRow> sorted;
    sorted.reserve(rows.size());
    for (std::size_t i : order) sorted.push_back(rows[i]);
    rows = std::move(sorted);
  }

  io::write_report(dir / "report.csv", report, wopts);
  io::write_ranking(dir / "ranking.csv", rows, wopts);
  io::write_ranking_summary(dir / "summary.csv", report_ra, rho, wopts);
  io::write_intervals(dir / "intervals_ci.csv", ci_rows, wopts);
  io::write_intervals(dir / "intervals_ppi.csv", ppi_rows, wopts);
  io::write_percentiles(dir / "percentiles.csv", pct, wopts);
  {
    std::ostringstream os;
    for (const std::string& entry : log) os << entry << "\n";
    io::write_text(dir / "log.txt", os.str());
  }

  return {year, crudes.size(), prior.mu, prior.tau2, rho, report_ra.ra};
}

int cmd_rank(const CommonArgs& args, const std::string& estimator) {
  if (estimator != "mle" && estimator != "moment") {
    throw ValidationError("--estimator must be mle or moment");
  }
  CrudeInput in = load_crudes(args);

  std::map<int, std::vector<CrudeEffect>> strata;
  for (const CrudeEffect& c : in.crudes) strata[c.year].push_back(c);

  // Strata are independent; evaluate them concurrently.
  std::vector<std::future<StratumOutput>> futures;
  for (const auto& [year, crudes] : strata) {
    futures.push_back(std::async(std::launch::async, rank_stratum, year,
                                 std::cref(crudes), std::cref(args), std::cref(estimator),
                                 in.log));
  }
  for (auto& f : futures) {
    const StratumOutput s = f.get();
    std::cout << "year=" << s.year << " n=" << s.n << " mu=" << io::format6(s.mu)
              << " tau2=" << io::format6(s.tau2) << " rho=" << io::format6(s.rho)
              << " RA=" << io::format6(s.ra) << "\n";
  }
  return 0;
}

MeanPolicy parse_policy(const std::string& text, std::optional<double>& manual_value) {
  if (text == "carry") return MeanPolicy::CarryLast;
  if (text == "trend") return MeanPolicy::LinearTrend;
  if (text.rfind("manual=", 0) == 0) {
    try {
      manual_value = std::stod(text.substr(7));
    } catch (const std::exception&) {
      throw ValidationError("--extrapolate manual=<value>: cannot parse value");
    }
    return MeanPolicy::Manual;
  }
  throw ValidationError("--extrapolate must be carry, trend or manual=<value>");
}

int cmd_longitudinal(const CommonArgs& args, const std::vector<std::string>& structures,
                     const std::vector<std::string>& model_jsons,
                     const std::string& extrapolate_arg) {
  const fs::path out(args.out);
  const io::WriteOptions wopts = args.write_options();
  std::optional<double> manual_value;
  const MeanPolicy policy = parse_policy(extrapolate_arg, manual_value);

  std::vector<LongitudinalModel> models;
  std::optional<Panel> panel;
  std::vector<std::string> log;

  if (!model_jsons.empty()) {
    for (const std::string& path : model_jsons) {
      models.push_back(io::model_from_json(path));
    }
  } else {
    if (args.input.empty()) {
      throw ValidationError("longitudinal: provide --input or --model-json");
    }
    CrudeInput in = load_crudes(args);
    log = std::move(in.log);
    {
      std::set<int> years;
      for (const CrudeEffect& c : in.crudes) years.insert(c.year);
      if (years.size() < 2) {
        throw ValidationError(
            "input covers a single year; longitudinal modelling needs several - use "
            "the rank command for a one-year analysis");
      }
    }
    panel = assemble_panel(in.crudes, {}, &log);
    if (structures.empty()) {
      throw ValidationError("longitudinal: request at least one --structure");
    }
    for (const std::string& name : structures) {
      const CovStructure s = cov_structure_from_string(name);
      models.push_back(s == CovStructure::Unstructured ? fit_unstructured(*panel)
                                                       : fit_structured(*panel, s));
    }
  }

  struct ModelOutput {
    std::string name;
    std::optional<Extrapolation> ext;
    std::vector<std::string> centres;
    std::vector<double> epc;
  };
  std::vector<ModelOutput> outputs;

  std::ostringstream comparison;
  comparison << "model,n_mean_params,n_cov_params,log_likelihood,aic,aic_classic,"
                "mu_next,tau2_next\n";
  for (const LongitudinalModel& model : models) {
    ModelOutput mo;
    mo.name = to_string(model.structure);
    const FitStats fsstats = model_fit_stats(model);

    std::string ext_cols = ",";
    if (model.structure != CovStructure::Unstructured) {
      const Extrapolation ext = extrapolate(model, policy, manual_value);
      mo.ext = ext;
      ext_cols = io::format6(ext.mu_next) + "," + io::format6(ext.tau2_next);

      if (panel.has_value()) {
        const auto preds = predict_all(ext, *panel);
        const PredictiveRanking pr =
            predictive_ranking(preds, ext.mu_next, ext.tau2_next, &log);
        mo.centres.reserve(preds.size());
        mo.epc.reserve(preds.size());
        std::vector<io::IntervalRow> pred_intervals;
        for (std::size_t i = 0; i < preds.size(); ++i) {
          mo.centres.push_back(preds[i].centre_id);
          mo.epc.push_back(pr.rows[i].epc);
          const double half = stats::central_z(args.level) * std::sqrt(preds[i].variance);
          pred_intervals.push_back({preds[i].centre_id, preds[i].mean,
                                    {preds[i].mean - half, preds[i].mean + half}});
        }
        io::write_predictions(out / ("predictions_" + mo.name + ".csv"), preds, mo.epc,
                              wopts);
        io::write_intervals(out / ("predicted_intervals_" + mo.name + ".csv"),
                            pred_intervals, wopts);
        std::cout << "structure=" << mo.name << " predictive RA=" << io::format6(pr.report.ra)
                  << " n=" << pr.report.n << "\n";
      }
      io::write_text(out / ("model_" + mo.name + ".json"),
                     io::model_report_json(model, &*mo.ext));
    } else {
      io::write_text(out / ("model_" + mo.name + ".json"), io::model_report_json(model));
    }

    comparison << mo.name << ',' << model.n_mean_params << ',' << model.n_cov_params << ','
               << io::format6(fsstats.log_likelihood) << ',' << io::format6(fsstats.aic)
               << ',' << io::format6(fsstats.aic_classic) << ',' << ext_cols << "\n";
    outputs.push_back(std::move(mo));
  }

  io::write_text(out / "model_comparison.csv", comparison.str());
  std::cout << comparison.str();

  // Paired EPC scatter for every pair of predicting models.
  for (std::size_t a = 0; a < outputs.size(); ++a) {
    for (std::size_t b = a + 1; b < outputs.size(); ++b) {
      if (outputs[a].epc.empty() || outputs[b].epc.empty()) continue;
      io::write_epc_pairs(
          out / ("epc_pairs_" + outputs[a].name + "_" + outputs[b].name + ".csv"),
          outputs[a].name, outputs[b].name, outputs[a].centres, outputs[a].epc,
          outputs[b].epc, wopts);
    }
  }
  {
    std::ostringstream os;
    for (const std::string& entry : log) os << entry << "\n";
    io::write_text(out / "log.txt", os.str());
  }
  return 0;
}

int cmd_simulate(const std::string& config_path, const CommonArgs& args,
                 std::optional<std::uint64_t> seed_override) {
  ScenarioConfig cfg = io::read_scenario(config_path);
  if (seed_override.has_value()) {
    cfg.seed = *seed_override;
    cfg.has_seed = true;
  }
  const SyntheticDataset data = simulate(cfg);
  const fs::path out(args.out);
  const io::WriteOptions wopts = args.write_options();

  io::write_truth(out / "truth.csv", data, wopts);
  io::write_crudes(out / "crude.csv", data.crudes, wopts);
  if (!data.patients.empty()) {
    io::write_patients(out / "patients.csv", data.patients, wopts);
  }
  std::cout << "simulate: " << data.centres.size() << " centres, " << data.years.size()
            << " years, " << data.crudes.size() << " crude effects"
            << (data.patients.empty()
                    ? std::string()
                    : ", " + std::to_string(data.patients.size()) + " patients")
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ebmon - empirical Bayes monitoring of institutional performance"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string estimator = "mle";
  std::vector<std::string> structures;
  std::vector<std::string> model_jsons;
  std::string extrapolate_arg = "carry";
  std::string sim_config;
  std::optional<std::uint64_t> seed_override;

  const auto add_common = [&](CLI::App* cmd, bool needs_input) {
    auto* opt = cmd->add_option("--input", args.input, "input CSV file");
    if (needs_input) opt->required();
    cmd->add_option("--mode", args.mode, "input kind: patient|summary|crude");
    cmd->add_option("--stratify-by", args.stratify_by,
                    "fit stage-1 coefficients per stratum (only: year)");
    cmd->add_option("--level", args.level, "interval coverage level")
        ->check(CLI::Range(0.0, 0.999999));
    cmd->add_option("--min-information", args.min_information,
                    "exclusion threshold for centre-year information");
    cmd->add_option("--out", args.out, "output directory");
    cmd->add_flag("--no-timestamp", args.no_timestamp,
                  "suppress the generated-at header line");
  };

  auto* score = app.add_subcommand("score", "stage-1 scoring: patients to crude effects");
  add_common(score, true);

  auto* rank = app.add_subcommand("rank", "per-year empirical Bayes ranking");
  add_common(rank, true);
  rank->add_option("--estimator", estimator, "prior estimator: mle|moment");

  auto* longitudinal =
      app.add_subcommand("longitudinal", "multi-year model fit and next-year prediction");
  add_common(longitudinal, false);
  longitudinal->add_option("--structure", structures,
                           "covariance structure (repeatable): "
                           "unstructured|cs|ar1|rc");
  longitudinal->add_option("--extrapolate", extrapolate_arg,
                           "mean policy: carry|trend|manual=<value>");
  longitudinal->add_option("--model-json", model_jsons,
                           "inject fitted model parameters, skipping the fit (repeatable)");

  auto* simulate_cmd = app.add_subcommand("simulate", "generate a synthetic dataset");
  simulate_cmd->add_option("--config", sim_config, "scenario config file")->required();
  simulate_cmd->add_option("--out", args.out, "output directory");
  simulate_cmd->add_flag("--no-timestamp", args.no_timestamp,
                         "suppress the generated-at header line");
  std::uint64_t seed_value = 0;
  auto* seed_opt = simulate_cmd->add_option("--seed", seed_value, "override scenario seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (*score) return cmd_score(args);
    if (*rank) return cmd_rank(args, estimator);
    if (*longitudinal) {
      return cmd_longitudinal(args, structures, model_jsons, extrapolate_arg);
    }
    if (*simulate_cmd) {
      if (seed_opt->count() > 0) seed_override = seed_value;
      return cmd_simulate(sim_config, args, seed_override);
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ebmon/eb_univariate.hpp"
#include "ebmon/longitudinal.hpp"
#include "ebmon/ranking.hpp"
#include "ebmon/simulation.hpp"
#include "ebmon/stage1.hpp"

namespace ebmon::io {

// All floating-point output uses 6 significant digits.
std::string format6(double x);

struct WriteOptions {
  bool timestamp = true;  // leading "# generated ..." comment line
};

// Readers skip blank lines and lines starting with '#'. Headers are matched
// exactly; a mismatch is a ValidationError naming the offending column.
std::vector<PatientRecord> read_patients(const std::filesystem::path& path);
std::vector<CentreYearSummary> read_summaries(const std::filesystem::path& path);
std::vector<CrudeEffect> read_crudes(const std::filesystem::path& path);

void write_crudes(const std::filesystem::path& path,
                  const std::vector<CrudeEffect>& crudes,
                  const WriteOptions& opts = {});

void write_summaries(const std::filesystem::path& path,
                     const std::vector<CentreYearSummary>& summaries,
                     const WriteOptions& opts = {});

void write_patients(const std::filesystem::path& path,
                    const std::vector<PatientRecord>& patients,
                    const WriteOptions& opts = {});

// centre_id,theta_hat,s2,ebe,pv,shrinkage,ci_lo,ci_hi,ppi_lo,ppi_hi
struct ReportRow {
  std::string centre_id;
  double theta_hat = 0.0, s2 = 0.0;
  double ebe = 0.0, pv = 0.0, shrinkage = 0.0;
  Interval ci, ppi;
};
void write_report(const std::filesystem::path& path, const std::vector<ReportRow>& rows,
                  const WriteOptions& opts = {});

void write_ranking(const std::filesystem::path& path, const std::vector<RankingRow>& rows,
                   const WriteOptions& opts = {});

// One-row summary: ra,n,rho
void write_ranking_summary(const std::filesystem::path& path, const RankabilityReport& report,
                           double rho, const WriteOptions& opts = {});

// Interval plot data (figure layout): centre_id,estimate,lo,hi sorted by
// estimate, ties broken by centre_id.
struct IntervalRow {
  std::string centre_id;
  double estimate = 0.0;
  Interval interval;
};
void write_intervals(const std::filesystem::path& path, std::vector<IntervalRow> rows,
                     const WriteOptions& opts = {});

// Percentile scatter data: centre_id,crude_pct,ebe_pct,epc
struct PercentileRow {
  std::string centre_id;
  double crude_pct = 0.0, ebe_pct = 0.0, epc = 0.0;
};
void write_percentiles(const std::filesystem::path& path,
                       const std::vector<PercentileRow>& rows,
                       const WriteOptions& opts = {});

// centre_id,pred_mean,pred_var,years_used,epc with years_used joined by ';'
void write_predictions(const std::filesystem::path& path,
                       const std::vector<PredictiveDistribution>& preds,
                       const std::vector<double>& epc,
                       const WriteOptions& opts = {});

// Paired EPCs from two model fits, one row per centre.
void write_epc_pairs(const std::filesystem::path& path, const std::string& name_a,
                     const std::string& name_b, const std::vector<std::string>& centres,
                     const std::vector<double>& epc_a, const std::vector<double>& epc_b,
                     const WriteOptions& opts = {});

// True effects: centre_id,year,theta
void write_truth(const std::filesystem::path& path, const SyntheticDataset& data,
                 const WriteOptions& opts = {});

// Model report mirroring the comparison-table layout: structure, parameter
// counts, log-likelihood, both AIC conventions, M, T, structure parameters
// and (optionally) the extrapolation block.
std::string model_report_json(const LongitudinalModel& model,
                              const Extrapolation* ext = nullptr);
LongitudinalModel model_from_json(const std::filesystem::path& path);

void write_text(const std::filesystem::path& path, const std::string& text);

// Scenario config: "key = value" lines, '#' comments. Keys: n_centres,
// years (first:last or comma list), mode (patient|crude), patients
// (fixed <k> | poisson <mean>), rate, slopes (comma list, optional),
// mu + tau2 or structure-specific prior keys, seed.
ScenarioConfig read_scenario(const std::filesystem::path& path);

}  // namespace ebmon::io

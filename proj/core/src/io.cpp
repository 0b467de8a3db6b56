#include "ebmon/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace ebmon::io {

namespace {

using nlohmann::json;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, sep)) out.push_back(trim(field));
  if (!line.empty() && line.back() == sep) out.push_back("");
  return out;
}

double parse_double(const std::string& s, const std::string& what) {
  double v = 0.0;
  const char* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc{} || ptr != end) {
    throw ValidationError("cannot parse " + what + " from '" + s + "'");
  }
  return v;
}

long parse_long(const std::string& s, const std::string& what) {
  long v = 0;
  const char* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc{} || ptr != end) {
    throw ValidationError("cannot parse " + what + " from '" + s + "'");
  }
  return v;
}

int parse_int(const std::string& s, const std::string& what) {
  return static_cast<int>(parse_long(s, what));
}

struct CsvFile {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvFile read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  CsvFile csv;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    auto fields = split(t, ',');
    if (!have_header) {
      csv.header = std::move(fields);
      have_header = true;
    } else {
      if (fields.size() != csv.header.size()) {
        throw ValidationError(path.string() + ": row with " +
                              std::to_string(fields.size()) + " fields, expected " +
                              std::to_string(csv.header.size()));
      }
      csv.rows.push_back(std::move(fields));
    }
  }
  if (!have_header) throw ValidationError(path.string() + ": missing header line");
  return csv;
}

void expect_column(const CsvFile& csv, std::size_t i, const std::string& name,
                   const std::filesystem::path& path) {
  if (i >= csv.header.size() || csv.header[i] != name) {
    const std::string found = i < csv.header.size() ? csv.header[i] : "<missing>";
    throw ValidationError(path.string() + ": expected column '" + name + "' at position " +
                          std::to_string(i + 1) + ", found '" + found + "'");
  }
}

class Writer {
public:
  Writer(const std::filesystem::path& path, const WriteOptions& opts) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    out_.open(path);
    if (!out_) throw ValidationError("cannot write " + path.string());
    if (opts.timestamp) {
      const auto now = std::chrono::system_clock::now();
      const std::time_t t = std::chrono::system_clock::to_time_t(now);
      char buf[64];
      std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
      out_ << "# generated " << buf << "\n";
    }
  }
  std::ofstream& stream() { return out_; }

private:
  std::ofstream out_;
};

}  // namespace

std::string format6(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", x);
  return buf;
}

std::vector<PatientRecord> read_patients(const std::filesystem::path& path) {
  const CsvFile csv = read_csv(path);
  expect_column(csv, 0, "centre_id", path);
  expect_column(csv, 1, "year", path);
  expect_column(csv, 2, "outcome", path);
  if (csv.header.size() < 4) {
    throw ValidationError(path.string() + ": expected covariate column 'x1' after 'outcome'");
  }
  const std::size_t p = csv.header.size() - 3;
  for (std::size_t j = 0; j < p; ++j) {
    expect_column(csv, 3 + j, "x" + std::to_string(j + 1), path);
  }

  std::vector<PatientRecord> out;
  out.reserve(csv.rows.size());
  for (const auto& row : csv.rows) {
    PatientRecord rec;
    rec.centre_id = row[0];
    rec.year = parse_int(row[1], "year");
    const long y = parse_long(row[2], "outcome");
    if (y != 0 && y != 1) {
      throw ValidationError(path.string() + ": outcome must be 0 or 1, got '" + row[2] + "'");
    }
    rec.outcome = static_cast<int>(y);
    rec.covariates.reserve(p);
    for (std::size_t j = 0; j < p; ++j) {
      rec.covariates.push_back(parse_double(row[3 + j], csv.header[3 + j]));
    }
    if (rec.covariates[0] != 1.0) {
      throw ValidationError(path.string() + ": column x1 must be the constant 1");
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<CentreYearSummary> read_summaries(const std::filesystem::path& path) {
  const CsvFile csv = read_csv(path);
  const char* names[] = {"centre_id", "year", "n", "observed", "expected", "information"};
  for (std::size_t i = 0; i < 6; ++i) expect_column(csv, i, names[i], path);
  if (csv.header.size() != 6) {
    throw ValidationError(path.string() + ": unexpected extra column '" + csv.header[6] + "'");
  }
  std::vector<CentreYearSummary> out;
  out.reserve(csv.rows.size());
  for (const auto& row : csv.rows) {
    CentreYearSummary s;
    s.centre_id = row[0];
    s.year = parse_int(row[1], "year");
    s.n = parse_long(row[2], "n");
    s.observed = parse_double(row[3], "observed");
    s.expected = parse_double(row[4], "expected");
    s.information = parse_double(row[5], "information");
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<CrudeEffect> read_crudes(const std::filesystem::path& path) {
  const CsvFile csv = read_csv(path);
  const char* names[] = {"centre_id", "year", "theta_hat", "s2"};
  for (std::size_t i = 0; i < 4; ++i) expect_column(csv, i, names[i], path);
  std::vector<CrudeEffect> out;
  out.reserve(csv.rows.size());
  for (const auto& row : csv.rows) {
    CrudeEffect c;
    c.centre_id = row[0];
    c.year = parse_int(row[1], "year");
    c.theta_hat = parse_double(row[2], "theta_hat");
    c.s2 = parse_double(row[3], "s2");
    out.push_back(std::move(c));
  }
  return out;
}

void write_crudes(const std::filesystem::path& path, const std::vector<CrudeEffect>& crudes,
                  const WriteOptions& opts) {
  Writer w(path, opts);
  w.stream() << "centre_id,year,theta_hat,s2\n";
  for (const CrudeEffect& c : crudes) {
    w.stream() << c.centre_id << ',' << c.year << ',' << format6(c.theta_hat) << ','
               << format6(c.s2) << "\n";
  }
}

void write_summaries(const std::filesystem::path& path,
                     const std::vector<CentreYearSummary>& summaries,
                     const WriteOptions& opts) {
  Writer w(path, opts);
  w.stream() << "centre_id,year,n,observed,expected,information\n";
  for (const CentreYearSummary& s : summaries) {
    w.stream() << s.centre_id << ',' << s.year << ',' << s.n << ',' << format6(s.observed)
               << ',' << format6(s.expected) << ',' << format6(s.information) << "\n";
  }
}

void write_patients(const std::filesystem::path& path,
                    const std::vector<PatientRecord>& patients, const WriteOptions& opts) {
  Writer w(path, opts);
  const std::size_t p = patients.empty() ? 1 : patients.front().covariates.size();
  w.stream() << "centre_id,year,outcome";
  for (std::size_t j = 0; j < p; ++j) w.stream() << ",x" << (j + 1);
  w.stream() << "\n";
  for (const PatientRecord& rec : patients) {
    w.stream() << rec.centre_id << ',' << rec.year << ',' << rec.outcome;
    for (double x : rec.covariates) w.stream() << ',' << format6(x);
    w.stream() << "\n";
  }
}

void write_report(const std::filesystem::path& path, const std::vector<ReportRow>& rows,
                  const WriteOptions& opts) {
  Writer w(path, opts);
  w.stream() << "centre_id,theta_hat,s2,ebe,pv,shrinkage,ci_lo,ci_hi,ppi_lo,ppi_hi\n";
  for (const ReportRow& r : rows) {
    w.stream() << r.centre_id << ',' << format6(r.theta_hat) << ',' << format6(r.s2) << ','
               << format6(r.ebe) << ',' << format6(r.pv) << ',' << format6(r.shrinkage) << ','
               << format6(r.ci.lo) << ',' << format6(r.ci.hi) << ',' << format6(r.ppi.lo)
               << ',' << format6(r.ppi.hi) << "\n";
  }
}

void write_ranking(const std::filesystem::path& path, const std::vector<RankingRow>& rows,
                   const WriteOptions& opts) {
  Writer w(path, opts);
  w.stream() << "centre_id,crude_pct,ebe_pct,er,pcer,epc\n";
  for (const RankingRow& r : rows) {
    w.stream() << r.centre_id << ',' << format6(r.crude_pct) << ',' << format6(r.ebe_pct)
               << ',' << format6(r.er) << ',' << format6(r.pcer) << ',' << format6(r.epc)
               << "\n";
  }
}

void write_ranking_summary(const std::filesystem::path& path, const RankabilityReport& report,
                           double rho, const WriteOptions& opts) {
  Writer w(path, opts);
  w.stream() << "ra,n,rho\n";
  w.stream() << format6(report.ra) << ',' << report.n << ',' << format6(rho) << "\n";
}

void write_intervals(const std::filesystem::path& path, std::vector<IntervalRow> rows,
                     const WriteOptions& opts) {
  std::sort(rows.begin(), rows.end(), [](const IntervalRow& a, const IntervalRow& b) {
    if (a.estimate != b.estimate) return a.estimate < b.estimate;
    return a.centre_id < b.centre_id;
  });
  Writer w(path, opts);
  w.stream() << "centre_id,estimate,lo,hi\n";
  for (const IntervalRow& r : rows) {
    w.stream() << r.centre_id << ',' << format6(r.estimate) << ',' << format6(r.interval.lo)
               << ',' << format6(r.interval.hi) << "\n";
  }
}

void write_percentiles(const std::filesystem::path& path,
                       const std::vector<PercentileRow>& rows, const WriteOptions& opts) {
  Writer w(path, opts);
  w.stream() << "centre_id,crude_pct,ebe_pct,epc\n";
  for (const PercentileRow& r : rows) {
    w.stream() << r.centre_id << ',' << format6(r.crude_pct) << ',' << format6(r.ebe_pct)
               << ',' << format6(r.epc) << "\n";
  }
}

void write_predictions(const std::filesystem::path& path,
                       const std::vector<PredictiveDistribution>& preds,
                       const std::vector<double>& epc, const WriteOptions& opts) {
  if (preds.size() != epc.size()) {
    throw ValidationError("write_predictions: epc size mismatch");
  }
  Writer w(path, opts);
  w.stream() << "centre_id,pred_mean,pred_var,years_used,epc\n";
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const PredictiveDistribution& p = preds[i];
    w.stream() << p.centre_id << ',' << format6(p.mean) << ',' << format6(p.variance) << ',';
    for (std::size_t k = 0; k < p.years_used.size(); ++k) {
      if (k > 0) w.stream() << ';';
      w.stream() << p.years_used[k];
    }
    w.stream() << ',' << format6(epc[i]) << "\n";
  }
}

void write_epc_pairs(const std::filesystem::path& path, const std::string& name_a,
                     const std::string& name_b, const std::vector<std::string>& centres,
                     const std::vector<double>& epc_a, const std::vector<double>& epc_b,
                     const WriteOptions& opts) {
  if (centres.size() != epc_a.size() || centres.size() != epc_b.size()) {
    throw ValidationError("write_epc_pairs: size mismatch");
  }
  Writer w(path, opts);
  w.stream() << "centre_id,epc_" << name_a << ",epc_" << name_b << "\n";
  for (std::size_t i = 0; i < centres.size(); ++i) {
    w.stream() << centres[i] << ',' << format6(epc_a[i]) << ',' << format6(epc_b[i]) << "\n";
  }
}

void write_truth(const std::filesystem::path& path, const SyntheticDataset& data,
                 const WriteOptions& opts) {
  Writer w(path, opts);
  w.stream() << "centre_id,year,theta\n";
  for (std::size_t i = 0; i < data.centres.size(); ++i) {
    for (std::size_t j = 0; j < data.years.size(); ++j) {
      w.stream() << data.centres[i] << ',' << data.years[j] << ','
                 << format6(data.true_effects(static_cast<Eigen::Index>(i),
                                              static_cast<Eigen::Index>(j)))
                 << "\n";
    }
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << text;
}

std::string model_report_json(const LongitudinalModel& model, const Extrapolation* ext) {
  const FitStats fs = model_fit_stats(model);
  json j;
  j["structure"] = to_string(model.structure);
  j["years"] = model.years;
  j["n_mean_params"] = model.n_mean_params;
  j["n_cov_params"] = model.n_cov_params;
  j["n_params"] = fs.n_params;
  j["log_likelihood"] = model.log_likelihood;
  j["aic"] = fs.aic;
  j["aic_classic"] = fs.aic_classic;
  j["iterations"] = model.iterations;
  j["psd_projected"] = model.psd_projected;
  j["profile_at_boundary"] = model.profile_at_boundary;
  j["mean"] = std::vector<double>(model.M.data(), model.M.data() + model.M.size());
  json t = json::array();
  for (Eigen::Index a = 0; a < model.T.rows(); ++a) {
    json row = json::array();
    for (Eigen::Index b = 0; b < model.T.cols(); ++b) row.push_back(model.T(a, b));
    t.push_back(std::move(row));
  }
  j["T"] = std::move(t);
  j["structure_params"] = model.structure_params;
  if (ext != nullptr) {
    json e;
    e["year_next"] = ext->years.back();
    e["mu_next"] = ext->mu_next;
    e["tau2_next"] = ext->tau2_next;
    e["mean_extended"] = std::vector<double>(ext->M.data(), ext->M.data() + ext->M.size());
    json te = json::array();
    for (Eigen::Index a = 0; a < ext->T.rows(); ++a) {
      json row = json::array();
      for (Eigen::Index b = 0; b < ext->T.cols(); ++b) row.push_back(ext->T(a, b));
      te.push_back(std::move(row));
    }
    e["T_extended"] = std::move(te);
    j["extrapolation"] = std::move(e);
  }
  return j.dump(2) + "\n";
}

LongitudinalModel model_from_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  try {
    LongitudinalModel model;
    model.structure = cov_structure_from_string(j.at("structure").get<std::string>());
    model.years = j.at("years").get<std::vector<int>>();
    if (model.years.empty()) throw ValidationError(path.string() + ": empty years");

    if (j.contains("structure_params")) {
      model.structure_params =
          j["structure_params"].get<std::map<std::string, double>>();
    }
    if (model.structure == CovStructure::RandomCoefficients &&
        !model.structure_params.count("time_origin")) {
      model.structure_params["time_origin"] = static_cast<double>(model.years.front() - 1);
    }

    if (model.structure == CovStructure::Unstructured) {
      const auto t = j.at("T").get<std::vector<std::vector<double>>>();
      const Eigen::Index J = static_cast<Eigen::Index>(model.years.size());
      model.T.resize(J, J);
      for (Eigen::Index a = 0; a < J; ++a) {
        for (Eigen::Index b = 0; b < J; ++b) {
          model.T(a, b) = t.at(static_cast<std::size_t>(a)).at(static_cast<std::size_t>(b));
        }
      }
    } else {
      model.T = build_structured_T(model.structure, model.structure_params, model.years);
    }

    if (j.contains("mean")) {
      const auto m = j["mean"].get<std::vector<double>>();
      if (m.size() != model.years.size()) {
        throw ValidationError(path.string() + ": mean length does not match years");
      }
      model.M = Eigen::Map<const Eigen::VectorXd>(m.data(), static_cast<Eigen::Index>(m.size()));
    } else if (model.structure == CovStructure::RandomCoefficients) {
      const double alpha = model.structure_params.at("alpha");
      const double beta = model.structure_params.at("beta");
      const double origin = model.structure_params.at("time_origin");
      model.M.resize(static_cast<Eigen::Index>(model.years.size()));
      for (std::size_t k = 0; k < model.years.size(); ++k) {
        model.M[static_cast<Eigen::Index>(k)] = alpha + beta * (model.years[k] - origin);
      }
    } else {
      throw ValidationError(path.string() + ": missing mean vector");
    }

    const std::size_t J = model.years.size();
    switch (model.structure) {
      case CovStructure::Unstructured:
        model.n_mean_params = static_cast<int>(J);
        model.n_cov_params = static_cast<int>(J * (J + 1) / 2);
        break;
      case CovStructure::CompoundSymmetry:
      case CovStructure::Ar1:
        model.n_mean_params = static_cast<int>(J);
        model.n_cov_params = 2;
        break;
      case CovStructure::RandomCoefficients:
        model.n_mean_params = 2;
        model.n_cov_params = 3;
        break;
    }
    if (j.contains("n_mean_params")) model.n_mean_params = j["n_mean_params"].get<int>();
    if (j.contains("n_cov_params")) model.n_cov_params = j["n_cov_params"].get<int>();
    if (j.contains("log_likelihood")) {
      model.log_likelihood = j["log_likelihood"].get<double>();
    }
    return model;
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

namespace {

std::vector<int> parse_years(const std::string& value) {
  std::vector<int> years;
  if (value.find(':') != std::string::npos) {
    const auto parts = split(value, ':');
    if (parts.size() != 2) throw ValidationError("years: expected first:last");
    const int a = parse_int(parts[0], "years");
    const int b = parse_int(parts[1], "years");
    if (b < a) throw ValidationError("years: last before first");
    for (int y = a; y <= b; ++y) years.push_back(y);
  } else {
    for (const std::string& part : split(value, ',')) {
      years.push_back(parse_int(part, "years"));
    }
  }
  return years;
}

}  // namespace

ScenarioConfig read_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());

  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ValidationError(path.string() + ": expected 'key = value', got '" + t + "'");
    }
    kv[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
  }

  const auto take = [&](const std::string& key) -> std::optional<std::string> {
    auto it = kv.find(key);
    if (it == kv.end()) return std::nullopt;
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  const auto require = [&](const std::string& key) {
    auto v = take(key);
    if (!v) throw ValidationError(path.string() + ": missing key '" + key + "'");
    return *v;
  };

  ScenarioConfig cfg;
  cfg.n_centres = parse_int(require("n_centres"), "n_centres");
  cfg.years = parse_years(require("years"));
  cfg.baseline_rate = parse_double(require("rate"), "rate");

  if (auto mode = take("mode")) {
    if (*mode == "patient") {
      cfg.mode = SimMode::PatientLevel;
    } else if (*mode == "crude") {
      cfg.mode = SimMode::CrudeOnly;
    } else {
      throw ValidationError(path.string() + ": mode must be 'patient' or 'crude'");
    }
  }

  {
    const std::string pats = require("patients");
    std::istringstream ss(pats);
    std::string kind;
    double value = 0.0;
    ss >> kind >> value;
    if (ss.fail() || (kind != "fixed" && kind != "poisson")) {
      throw ValidationError(path.string() +
                            ": patients must be 'fixed <k>' or 'poisson <mean>'");
    }
    cfg.count_model =
        kind == "fixed" ? PatientCountModel::Fixed : PatientCountModel::Poisson;
    cfg.patients_per_centre_year = value;
  }

  if (auto slopes = take("slopes")) {
    for (const std::string& part : split(*slopes, ',')) {
      cfg.beta_slopes.push_back(parse_double(part, "slopes"));
    }
  }

  if (auto seed = take("seed")) {
    cfg.seed = static_cast<std::uint64_t>(parse_long(*seed, "seed"));
    cfg.has_seed = true;
  }

  if (auto structure = take("structure")) {
    LongitudinalModel prior;
    prior.structure = cov_structure_from_string(*structure);
    prior.years = cfg.years;
    const auto need = [&](const std::string& key) {
      return parse_double(require(key), key);
    };
    switch (prior.structure) {
      case CovStructure::Ar1:
        prior.structure_params = {{"tau2", need("tau2")}, {"rho", need("rho")}};
        break;
      case CovStructure::CompoundSymmetry:
        prior.structure_params = {{"tau2", need("tau2")}, {"rho_cs", need("rho_cs")}};
        break;
      case CovStructure::RandomCoefficients:
        prior.structure_params = {{"tau_a2", need("tau_a2")},
                                  {"tau_b2", need("tau_b2")},
                                  {"rho_ab", need("rho_ab")},
                                  {"alpha", need("alpha")},
                                  {"beta", need("beta")},
                                  {"time_origin",
                                   static_cast<double>(cfg.years.front() - 1)}};
        break;
      case CovStructure::Unstructured:
        throw ValidationError(path.string() + ": scenario priors must be structured");
    }
    prior.T = build_structured_T(prior.structure, prior.structure_params, prior.years);
    prior.M.resize(static_cast<Eigen::Index>(cfg.years.size()));
    if (prior.structure == CovStructure::RandomCoefficients) {
      const double alpha = prior.structure_params.at("alpha");
      const double beta = prior.structure_params.at("beta");
      const double origin = prior.structure_params.at("time_origin");
      for (std::size_t k = 0; k < cfg.years.size(); ++k) {
        prior.M[static_cast<Eigen::Index>(k)] = alpha + beta * (cfg.years[k] - origin);
      }
    } else {
      prior.M.setConstant(parse_double(require("mu"), "mu"));
    }
    cfg.prior_model = std::move(prior);
  } else {
    cfg.prior_mu = parse_double(require("mu"), "mu");
    cfg.prior_tau2 = parse_double(require("tau2"), "tau2");
  }

  if (!kv.empty()) {
    throw ValidationError(path.string() + ": unknown key '" + kv.begin()->first + "'");
  }
  return cfg;
}

}  // namespace ebmon::io

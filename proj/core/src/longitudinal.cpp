#include "ebmon/longitudinal.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "ebmon/stats.hpp"

namespace ebmon {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kLog2Pi = 1.8378770664093454836;

double ipow(double base, int exp) {
  double r = 1.0;
  for (int k = 0; k < exp; ++k) r *= base;
  return r;
}

struct CentreObs {
  std::vector<int> idx;  // observed year indices
  VectorXd theta;
  VectorXd s2;
};

std::vector<CentreObs> collect_observations(const Panel& panel) {
  std::vector<CentreObs> obs(panel.n_centres());
  for (std::size_t i = 0; i < panel.n_centres(); ++i) {
    CentreObs& o = obs[i];
    for (std::size_t j = 0; j < panel.n_years(); ++j) {
      if (panel.observed(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) {
        o.idx.push_back(static_cast<int>(j));
      }
    }
    o.theta.resize(static_cast<Eigen::Index>(o.idx.size()));
    o.s2.resize(static_cast<Eigen::Index>(o.idx.size()));
    for (std::size_t k = 0; k < o.idx.size(); ++k) {
      o.theta[static_cast<Eigen::Index>(k)] =
          panel.theta_hat(static_cast<Eigen::Index>(i), o.idx[k]);
      o.s2[static_cast<Eigen::Index>(k)] =
          panel.s2(static_cast<Eigen::Index>(i), o.idx[k]);
    }
  }
  return obs;
}

// One shared E-step pass: per-centre conditional moments of the full
// Theta_i vector plus the observed-data log-likelihood at (M, T).
struct EStats {
  double loglik = 0.0;
  VectorXd sum_m;   // sum of conditional means
  MatrixXd sum_mm;  // sum of m m' + V
};

EStats e_step(const std::vector<CentreObs>& obs, const VectorXd& M, const MatrixXd& T) {
  const Eigen::Index J = M.size();
  EStats st;
  st.sum_m = VectorXd::Zero(J);
  st.sum_mm = MatrixXd::Zero(J, J);
  for (const CentreObs& o : obs) {
    const Eigen::Index no = static_cast<Eigen::Index>(o.idx.size());
    MatrixXd A(J, no);  // T(:, idx)
    MatrixXd C(no, no);
    VectorXd r(no);
    for (Eigen::Index a = 0; a < no; ++a) {
      A.col(a) = T.col(o.idx[static_cast<std::size_t>(a)]);
      r[a] = o.theta[a] - M[o.idx[static_cast<std::size_t>(a)]];
      for (Eigen::Index b = 0; b < no; ++b) {
        C(a, b) = T(o.idx[static_cast<std::size_t>(a)], o.idx[static_cast<std::size_t>(b)]);
      }
      C(a, a) += o.s2[a];
    }
    Eigen::LDLT<MatrixXd> ldlt(C);
    const VectorXd k = ldlt.solve(r);
    const MatrixXd H = ldlt.solve(A.transpose());  // C^-1 T(idx,:)

    double logdet = 0.0;
    for (Eigen::Index a = 0; a < no; ++a) logdet += std::log(ldlt.vectorD()[a]);
    st.loglik -= 0.5 * (static_cast<double>(no) * kLog2Pi + logdet + r.dot(k));

    const VectorXd m = M + A * k;
    const MatrixXd V = T - A * H;
    st.sum_m += m;
    st.sum_mm += m * m.transpose() + V;
  }
  return st;
}

// Centered scatter sum_i [(m_i - Mnew)(m_i - Mnew)' + V_i].
MatrixXd centered_scatter(const EStats& st, const VectorXd& m_new, std::size_t n) {
  return st.sum_mm - static_cast<double>(n) * m_new * m_new.transpose();
}

// Floor negative eigenvalues at zero; reports whether a projection happened.
bool project_psd(MatrixXd& T) {
  const MatrixXd sym = 0.5 * (T + T.transpose());
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(sym);
  if (es.eigenvalues().minCoeff() >= 0.0) {
    T = sym;
    return false;
  }
  const VectorXd floored = es.eigenvalues().cwiseMax(0.0);
  T = es.eigenvectors() * floored.asDiagonal() * es.eigenvectors().transpose();
  return true;
}

std::vector<CrudeEffect> column_as_crudes(const Panel& panel) {
  std::vector<CrudeEffect> crudes;
  for (std::size_t i = 0; i < panel.n_centres(); ++i) {
    if (!panel.observed(static_cast<Eigen::Index>(i), 0)) continue;
    CrudeEffect c;
    c.centre_id = panel.centres[i];
    c.year = panel.years[0];
    c.theta_hat = panel.theta_hat(static_cast<Eigen::Index>(i), 0);
    c.s2 = panel.s2(static_cast<Eigen::Index>(i), 0);
    crudes.push_back(std::move(c));
  }
  return crudes;
}

// J = 1 collapses every structure to the univariate model; delegate so the
// numbers agree exactly with fit_prior_mle.
LongitudinalModel univariate_reduction(const Panel& panel, CovStructure structure) {
  const PriorEstimate prior = fit_prior_mle(column_as_crudes(panel));
  LongitudinalModel model;
  model.structure = structure;
  model.years = panel.years;
  model.M = VectorXd::Constant(1, prior.mu);
  model.T = MatrixXd::Constant(1, 1, prior.tau2);
  model.log_likelihood = prior.log_likelihood;
  model.n_mean_params = 1;
  model.n_cov_params = 1;
  model.iterations = prior.iterations;
  model.loglik_trace = prior.loglik_trace;
  if (structure == CovStructure::Ar1) {
    model.structure_params = {{"tau2", prior.tau2}, {"rho", 0.0}};
  } else if (structure == CovStructure::CompoundSymmetry) {
    model.structure_params = {{"tau2", prior.tau2}, {"rho_cs", 0.0}};
  }
  return model;
}

void validate_panel(const Panel& panel) {
  if (panel.n_centres() == 0) throw ValidationError("panel has no centres");
  if (panel.n_years() == 0) throw ValidationError("panel has no years");
  for (std::size_t i = 0; i < panel.n_centres(); ++i) {
    bool any = false;
    for (std::size_t j = 0; j < panel.n_years(); ++j) {
      if (panel.observed(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) {
        any = true;
        const double s2 = panel.s2(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        if (!(s2 > 0.0) || !std::isfinite(s2)) {
          throw ValidationError("panel: s2 must be finite and positive (centre " +
                                panel.centres[i] + ")");
        }
      }
    }
    if (!any) {
      throw ValidationError("panel: centre " + panel.centres[i] + " has no observed year");
    }
  }
}

void check_year_pairs(const Panel& panel) {
  const std::size_t J = panel.n_years();
  for (std::size_t a = 0; a < J; ++a) {
    for (std::size_t b = a + 1; b < J; ++b) {
      int count = 0;
      for (std::size_t i = 0; i < panel.n_centres(); ++i) {
        if (panel.observed(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a)) &&
            panel.observed(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(b))) {
          ++count;
        }
      }
      if (count < 2) {
        std::ostringstream msg;
        msg << "years " << panel.years[a] << " and " << panel.years[b]
            << " are jointly observed by only " << count
            << " centres; the covariance between them is not identifiable";
        throw ValidationError(msg.str());
      }
    }
  }
}

VectorXd column_means(const Panel& panel) {
  const Eigen::Index J = static_cast<Eigen::Index>(panel.n_years());
  VectorXd m = VectorXd::Zero(J);
  for (Eigen::Index j = 0; j < J; ++j) {
    double s = 0.0;
    int c = 0;
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(panel.n_centres()); ++i) {
      if (panel.observed(i, j)) {
        s += panel.theta_hat(i, j);
        ++c;
      }
    }
    m[j] = c > 0 ? s / c : 0.0;
  }
  return m;
}

// Per-year moment variance of the true effects, floored away from zero.
VectorXd initial_diag(const Panel& panel, const VectorXd& means) {
  const Eigen::Index J = static_cast<Eigen::Index>(panel.n_years());
  VectorXd d(J);
  for (Eigen::Index j = 0; j < J; ++j) {
    double ss = 0.0, s2m = 0.0;
    int c = 0;
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(panel.n_centres()); ++i) {
      if (panel.observed(i, j)) {
        const double r = panel.theta_hat(i, j) - means[j];
        ss += r * r;
        s2m += panel.s2(i, j);
        ++c;
      }
    }
    const double var = c > 0 ? ss / c : 0.0;
    const double noise = c > 0 ? s2m / c : 0.0;
    d[j] = std::max(var - noise, 0.001 * (noise + var) + 1e-12);
  }
  return d;
}

}  // namespace

std::string to_string(CovStructure s) {
  switch (s) {
    case CovStructure::Unstructured: return "unstructured";
    case CovStructure::CompoundSymmetry: return "compound_symmetry";
    case CovStructure::Ar1: return "ar1";
    case CovStructure::RandomCoefficients: return "random_coefficients";
  }
  return "unknown";
}

CovStructure cov_structure_from_string(const std::string& name) {
  if (name == "unstructured") return CovStructure::Unstructured;
  if (name == "compound_symmetry" || name == "cs") return CovStructure::CompoundSymmetry;
  if (name == "ar1") return CovStructure::Ar1;
  if (name == "random_coefficients" || name == "rc") return CovStructure::RandomCoefficients;
  throw ValidationError("unknown covariance structure: " + name);
}

Panel assemble_panel(const std::vector<CrudeEffect>& crudes,
                     const std::vector<int>& years,
                     std::vector<std::string>* log) {
  if (crudes.empty()) throw ValidationError("assemble_panel: no crude effects");

  std::vector<int> ys = years;
  if (ys.empty()) {
    std::set<int> seen;
    for (const CrudeEffect& c : crudes) seen.insert(c.year);
    ys.assign(seen.begin(), seen.end());
  } else {
    std::sort(ys.begin(), ys.end());
    ys.erase(std::unique(ys.begin(), ys.end()), ys.end());
  }
  if (ys.size() < 2) {
    throw ValidationError("assemble_panel: at least 2 distinct years are required");
  }

  std::map<int, int> year_index;
  for (std::size_t j = 0; j < ys.size(); ++j) year_index[ys[j]] = static_cast<int>(j);

  std::set<std::string> centre_set;
  for (const CrudeEffect& c : crudes) {
    if (year_index.count(c.year)) centre_set.insert(c.centre_id);
  }
  std::vector<std::string> kept(centre_set.begin(), centre_set.end());
  if (log != nullptr) {
    std::set<std::string> all;
    for (const CrudeEffect& c : crudes) all.insert(c.centre_id);
    for (const std::string& id : all) {
      if (!centre_set.count(id)) {
        log->push_back("assemble_panel: dropped centre " + id +
                       " with no observation in the selected years");
      }
    }
  }
  if (kept.empty()) throw ValidationError("assemble_panel: no centre has observed years");

  std::map<std::string, int> centre_index;
  for (std::size_t i = 0; i < kept.size(); ++i) centre_index[kept[i]] = static_cast<int>(i);

  Panel panel;
  panel.centres = std::move(kept);
  panel.years = std::move(ys);
  const Eigen::Index n = static_cast<Eigen::Index>(panel.centres.size());
  const Eigen::Index J = static_cast<Eigen::Index>(panel.years.size());
  panel.theta_hat = MatrixXd::Zero(n, J);
  panel.s2 = MatrixXd::Zero(n, J);
  panel.observed = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(n, J, false);

  for (const CrudeEffect& c : crudes) {
    auto yit = year_index.find(c.year);
    if (yit == year_index.end()) continue;
    const Eigen::Index i = centre_index.at(c.centre_id);
    const Eigen::Index j = yit->second;
    if (panel.observed(i, j)) {
      throw ValidationError("assemble_panel: duplicate row for centre " + c.centre_id +
                            " year " + std::to_string(c.year));
    }
    if (!std::isfinite(c.theta_hat) || !(c.s2 > 0.0)) {
      throw ValidationError("assemble_panel: centre " + c.centre_id + " year " +
                            std::to_string(c.year) + " has invalid theta_hat or s2");
    }
    panel.theta_hat(i, j) = c.theta_hat;
    panel.s2(i, j) = c.s2;
    panel.observed(i, j) = true;
  }
  return panel;
}

LongitudinalModel fit_unstructured(const Panel& panel, const LongitudinalOptions& opts) {
  validate_panel(panel);
  if (panel.n_years() == 1) return univariate_reduction(panel, CovStructure::Unstructured);
  check_year_pairs(panel);

  const std::vector<CentreObs> obs = collect_observations(panel);
  const std::size_t n = panel.n_centres();
  const Eigen::Index J = static_cast<Eigen::Index>(panel.n_years());

  VectorXd M = column_means(panel);
  MatrixXd T = initial_diag(panel, M).asDiagonal();

  LongitudinalModel model;
  model.structure = CovStructure::Unstructured;
  model.years = panel.years;
  double prev = -std::numeric_limits<double>::infinity();
  for (int iter = 0; iter <= opts.max_iterations; ++iter) {
    const EStats st = e_step(obs, M, T);
    model.loglik_trace.push_back(st.loglik);
    if (iter > 0 && std::abs(st.loglik - prev) < opts.loglik_tol) break;
    prev = st.loglik;
    if (iter == opts.max_iterations) break;
    model.iterations = iter + 1;

    M = st.sum_m / static_cast<double>(n);
    T = centered_scatter(st, M, n) / static_cast<double>(n);
    if (project_psd(T)) model.psd_projected = true;
  }
  model.M = M;
  model.T = 0.5 * (T + T.transpose());
  model.log_likelihood = model.loglik_trace.back();
  model.n_mean_params = static_cast<int>(J);
  model.n_cov_params = static_cast<int>(J * (J + 1) / 2);
  return model;
}

Eigen::MatrixXd build_structured_T(CovStructure structure,
                                   const std::map<std::string, double>& params,
                                   const std::vector<int>& years) {
  const Eigen::Index J = static_cast<Eigen::Index>(years.size());
  if (J == 0) throw ValidationError("build_structured_T: empty year list");
  const auto get = [&](const std::string& key) {
    auto it = params.find(key);
    if (it == params.end()) {
      throw ValidationError("build_structured_T: missing parameter " + key);
    }
    return it->second;
  };
  MatrixXd T(J, J);
  switch (structure) {
    case CovStructure::Ar1: {
      const double tau2 = get("tau2");
      const double rho = get("rho");
      if (tau2 < 0.0) throw ValidationError("build_structured_T: tau2 must be >= 0");
      if (std::abs(rho) >= 1.0) throw ValidationError("build_structured_T: |rho| must be < 1");
      for (Eigen::Index a = 0; a < J; ++a) {
        for (Eigen::Index b = 0; b < J; ++b) {
          T(a, b) = tau2 * ipow(rho, std::abs(years[static_cast<std::size_t>(a)] -
                                               years[static_cast<std::size_t>(b)]));
        }
      }
      return T;
    }
    case CovStructure::CompoundSymmetry: {
      const double tau2 = get("tau2");
      const double rho = get("rho_cs");
      if (tau2 < 0.0) throw ValidationError("build_structured_T: tau2 must be >= 0");
      if (rho > 1.0 || (J > 1 && rho < -1.0 / static_cast<double>(J - 1) - 1e-12)) {
        throw ValidationError("build_structured_T: rho_cs outside the PSD range");
      }
      for (Eigen::Index a = 0; a < J; ++a) {
        for (Eigen::Index b = 0; b < J; ++b) T(a, b) = tau2 * (a == b ? 1.0 : rho);
      }
      return T;
    }
    case CovStructure::RandomCoefficients: {
      const double tau_a2 = get("tau_a2");
      const double tau_b2 = get("tau_b2");
      const double rho_ab = get("rho_ab");
      const double origin = get("time_origin");
      if (tau_a2 < 0.0 || tau_b2 < 0.0 || std::abs(rho_ab) > 1.0) {
        throw ValidationError("build_structured_T: invalid coefficient covariance");
      }
      const double cov_ab = rho_ab * std::sqrt(tau_a2 * tau_b2);
      for (Eigen::Index a = 0; a < J; ++a) {
        const double ta = years[static_cast<std::size_t>(a)] - origin;
        for (Eigen::Index b = 0; b < J; ++b) {
          const double tb = years[static_cast<std::size_t>(b)] - origin;
          T(a, b) = tau_a2 + cov_ab * (ta + tb) + tau_b2 * ta * tb;
        }
      }
      return T;
    }
    case CovStructure::Unstructured:
      throw ValidationError("build_structured_T: the unstructured model has no generator");
  }
  throw ValidationError("build_structured_T: unknown structure");
}

namespace {

// Inner EM for T = tau2 * R(rho) with R fixed: unstructured per-year means,
// single variance scale. Returns the converged log-likelihood.
struct ScaledFit {
  VectorXd M;
  double tau2 = 0.0;
  double loglik = 0.0;
  int iterations = 0;
  std::vector<double> trace;
};

ScaledFit em_scaled(const std::vector<CentreObs>& obs, const MatrixXd& R,
                    VectorXd M, double tau2, double tol, int max_iter) {
  const std::size_t n = obs.size();
  const Eigen::Index J = M.size();
  const Eigen::LDLT<MatrixXd> rldlt(R);
  const MatrixXd Rinv = rldlt.solve(MatrixXd::Identity(J, J));

  ScaledFit fit;
  double prev = -std::numeric_limits<double>::infinity();
  for (int iter = 0; iter <= max_iter; ++iter) {
    const EStats st = e_step(obs, M, tau2 * R);
    fit.trace.push_back(st.loglik);
    if (iter > 0 && std::abs(st.loglik - prev) < tol) break;
    prev = st.loglik;
    if (iter == max_iter) break;
    fit.iterations = iter + 1;

    M = st.sum_m / static_cast<double>(n);
    const MatrixXd G = centered_scatter(st, M, n);
    tau2 = std::max((Rinv * G).trace() / static_cast<double>(n * J), 0.0);
  }
  fit.M = M;
  fit.tau2 = tau2;
  fit.loglik = fit.trace.back();
  return fit;
}

double golden_max_1d(double lo, double hi, double tol,
                     const std::function<double(double)>& f) {
  const double inv_phi = 0.6180339887498949;
  double a = lo, b = hi;
  double x1 = b - inv_phi * (b - a);
  double x2 = a + inv_phi * (b - a);
  double f1 = f(x1), f2 = f(x2);
  while (b - a > tol) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + inv_phi * (b - a);
      f2 = f(x2);
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - inv_phi * (b - a);
      f1 = f(x1);
    }
  }
  return 0.5 * (a + b);
}

MatrixXd correlation_matrix(CovStructure structure, double rho,
                            const std::vector<int>& years) {
  std::map<std::string, double> params;
  params["tau2"] = 1.0;
  params[structure == CovStructure::Ar1 ? "rho" : "rho_cs"] = rho;
  return build_structured_T(structure, params, years);
}

LongitudinalModel fit_profiled(const Panel& panel, CovStructure structure,
                               const LongitudinalOptions& opts) {
  const std::vector<CentreObs> obs = collect_observations(panel);
  const Eigen::Index J = static_cast<Eigen::Index>(panel.n_years());

  const VectorXd M0 = column_means(panel);
  const double tau20 = initial_diag(panel, M0).mean();

  const double lo = structure == CovStructure::Ar1
                        ? -0.999
                        : -1.0 / static_cast<double>(J - 1) + 1e-3;
  const double hi = 0.999;

  // Warm-started profile evaluations: each rho reuses the previous optimum.
  VectorXd M_warm = M0;
  double tau2_warm = tau20;
  const auto profile = [&](double rho) {
    const MatrixXd R = correlation_matrix(structure, rho, panel.years);
    const ScaledFit fit =
        em_scaled(obs, R, M_warm, tau2_warm, opts.search_tol, opts.max_iterations);
    M_warm = fit.M;
    tau2_warm = std::max(fit.tau2, 1e-12);
    return fit.loglik;
  };

  const double rho_hat = golden_max_1d(lo, hi, opts.profile_tol, profile);

  const MatrixXd R = correlation_matrix(structure, rho_hat, panel.years);
  const ScaledFit fit =
      em_scaled(obs, R, M0, tau20, opts.loglik_tol, opts.max_iterations);

  LongitudinalModel model;
  model.structure = structure;
  model.years = panel.years;
  model.M = fit.M;
  model.structure_params["tau2"] = fit.tau2;
  model.structure_params[structure == CovStructure::Ar1 ? "rho" : "rho_cs"] = rho_hat;
  model.T = build_structured_T(structure, model.structure_params, panel.years);
  model.log_likelihood = fit.loglik;
  model.iterations = fit.iterations;
  model.loglik_trace = fit.trace;
  model.n_mean_params = static_cast<int>(J);
  model.n_cov_params = 2;
  model.profile_at_boundary =
      (rho_hat - lo) < 2.0 * opts.profile_tol || (hi - rho_hat) < 2.0 * opts.profile_tol;
  return model;
}

LongitudinalModel fit_random_coefficients(const Panel& panel,
                                          const LongitudinalOptions& opts) {
  const std::vector<CentreObs> obs = collect_observations(panel);
  const std::size_t n = panel.n_centres();
  const Eigen::Index J = static_cast<Eigen::Index>(panel.n_years());
  const double origin = static_cast<double>(panel.years.front() - 1);

  MatrixXd Z(J, 2);
  for (Eigen::Index j = 0; j < J; ++j) {
    Z(j, 0) = 1.0;
    Z(j, 1) = panel.years[static_cast<std::size_t>(j)] - origin;
  }

  // Start from the per-year means regressed on time.
  const VectorXd M0 = column_means(panel);
  Eigen::Vector2d g = (Z.transpose() * Z).ldlt().solve(Z.transpose() * M0);
  const double v0 = initial_diag(panel, M0).mean();
  Eigen::Matrix2d Sigma = Eigen::Matrix2d::Zero();
  const double tspread = Z.col(1).maxCoeff() - Z.col(1).minCoeff();
  Sigma(0, 0) = v0;
  Sigma(1, 1) = v0 / (tspread * tspread + 1.0);

  LongitudinalModel model;
  model.structure = CovStructure::RandomCoefficients;
  model.years = panel.years;

  double prev = -std::numeric_limits<double>::infinity();
  for (int iter = 0; iter <= opts.max_iterations; ++iter) {
    double ll = 0.0;
    Eigen::Vector2d sum_u = Eigen::Vector2d::Zero();
    Eigen::Matrix2d sum_uu = Eigen::Matrix2d::Zero();
    for (const CentreObs& o : obs) {
      const Eigen::Index no = static_cast<Eigen::Index>(o.idx.size());
      MatrixXd Zo(no, 2);
      for (Eigen::Index a = 0; a < no; ++a) Zo.row(a) = Z.row(o.idx[static_cast<std::size_t>(a)]);
      MatrixXd C = Zo * Sigma * Zo.transpose();
      for (Eigen::Index a = 0; a < no; ++a) C(a, a) += o.s2[a];
      const VectorXd r = o.theta - Zo * g;

      Eigen::LDLT<MatrixXd> ldlt(C);
      const VectorXd k = ldlt.solve(r);
      const MatrixXd H = ldlt.solve(Zo * Sigma);  // C^-1 Zo Sigma

      double logdet = 0.0;
      for (Eigen::Index a = 0; a < no; ++a) logdet += std::log(ldlt.vectorD()[a]);
      ll -= 0.5 * (static_cast<double>(no) * kLog2Pi + logdet + r.dot(k));

      const Eigen::Vector2d u = g + (Sigma * Zo.transpose()) * k;
      const Eigen::Matrix2d U = Sigma - (Sigma * Zo.transpose()) * H;
      sum_u += u;
      sum_uu += u * u.transpose() + U;
    }
    model.loglik_trace.push_back(ll);
    if (iter > 0 && std::abs(ll - prev) < opts.loglik_tol) break;
    prev = ll;
    if (iter == opts.max_iterations) break;
    model.iterations = iter + 1;

    g = sum_u / static_cast<double>(n);
    MatrixXd S = (sum_uu - static_cast<double>(n) * g * g.transpose()) / static_cast<double>(n);
    if (project_psd(S)) model.psd_projected = true;
    Sigma = S;
  }

  const double tau_a2 = Sigma(0, 0);
  const double tau_b2 = Sigma(1, 1);
  const double denom = std::sqrt(tau_a2 * tau_b2);
  model.structure_params["alpha"] = g[0];
  model.structure_params["beta"] = g[1];
  model.structure_params["tau_a2"] = tau_a2;
  model.structure_params["tau_b2"] = tau_b2;
  model.structure_params["rho_ab"] = denom > 0.0 ? Sigma(0, 1) / denom : 0.0;
  model.structure_params["time_origin"] = origin;
  model.M = Z * g;
  model.T = build_structured_T(CovStructure::RandomCoefficients, model.structure_params,
                               panel.years);
  model.log_likelihood = model.loglik_trace.back();
  model.n_mean_params = 2;
  model.n_cov_params = 3;
  return model;
}

}  // namespace

LongitudinalModel fit_structured(const Panel& panel, CovStructure structure,
                                 const LongitudinalOptions& opts) {
  validate_panel(panel);
  if (structure == CovStructure::Unstructured) {
    throw ValidationError("fit_structured: use fit_unstructured for the saturated model");
  }
  if (panel.n_years() == 1) {
    if (structure == CovStructure::RandomCoefficients) {
      throw ValidationError("random_coefficients requires at least 2 years");
    }
    return univariate_reduction(panel, structure);
  }
  if (structure == CovStructure::RandomCoefficients) {
    return fit_random_coefficients(panel, opts);
  }
  return fit_profiled(panel, structure, opts);
}

FitStats model_fit_stats(const LongitudinalModel& model) {
  FitStats fs;
  fs.n_params = model.n_mean_params + model.n_cov_params;
  fs.log_likelihood = model.log_likelihood;
  fs.aic = model.log_likelihood - static_cast<double>(fs.n_params);
  fs.aic_classic = -2.0 * model.log_likelihood + 2.0 * static_cast<double>(fs.n_params);
  return fs;
}

Extrapolation extrapolate(const LongitudinalModel& model, MeanPolicy policy,
                          std::optional<double> manual_value) {
  if (model.structure == CovStructure::Unstructured) {
    throw ValidationError(
        "extrapolate: the unstructured covariance cannot be extended; fit a "
        "structured model (compound_symmetry, ar1 or random_coefficients)");
  }
  const std::size_t J = model.years.size();
  Extrapolation ext;
  ext.years = model.years;
  ext.years.push_back(model.years.back() + 1);
  ext.T = build_structured_T(model.structure, model.structure_params, ext.years);

  ext.M.resize(static_cast<Eigen::Index>(J + 1));
  ext.M.head(static_cast<Eigen::Index>(J)) = model.M;

  if (model.structure == CovStructure::RandomCoefficients) {
    // The linear mean is part of the model; other policies do not apply.
    const double alpha = model.structure_params.at("alpha");
    const double beta = model.structure_params.at("beta");
    const double origin = model.structure_params.at("time_origin");
    ext.M[static_cast<Eigen::Index>(J)] = alpha + beta * (ext.years.back() - origin);
  } else {
    switch (policy) {
      case MeanPolicy::Manual:
        if (!manual_value.has_value()) {
          throw ValidationError("extrapolate: manual mean policy requires a value");
        }
        ext.M[static_cast<Eigen::Index>(J)] = *manual_value;
        break;
      case MeanPolicy::CarryLast:
        ext.M[static_cast<Eigen::Index>(J)] = model.M[static_cast<Eigen::Index>(J - 1)];
        break;
      case MeanPolicy::LinearTrend: {
        if (J < 2) throw ValidationError("extrapolate: linear_trend needs >= 2 years");
        double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
        for (std::size_t j = 0; j < J; ++j) {
          const double x = model.years[j];
          const double y = model.M[static_cast<Eigen::Index>(j)];
          sx += x;
          sy += y;
          sxx += x * x;
          sxy += x * y;
        }
        const double nj = static_cast<double>(J);
        const double slope = (nj * sxy - sx * sy) / (nj * sxx - sx * sx);
        const double icept = (sy - slope * sx) / nj;
        ext.M[static_cast<Eigen::Index>(J)] = icept + slope * ext.years.back();
        break;
      }
    }
  }
  ext.mu_next = ext.M[static_cast<Eigen::Index>(J)];
  ext.tau2_next = ext.T(static_cast<Eigen::Index>(J), static_cast<Eigen::Index>(J));
  return ext;
}

PredictiveDistribution predict_next(const Extrapolation& ext,
                                    const std::string& centre_id,
                                    const std::vector<ObservedYear>& history) {
  const Eigen::Index J = static_cast<Eigen::Index>(ext.years.size()) - 1;
  PredictiveDistribution pred;
  pred.centre_id = centre_id;

  std::vector<Eigen::Index> idx;
  std::set<int> seen;
  for (const ObservedYear& h : history) {
    const auto it = std::find(ext.years.begin(), ext.years.end() - 1, h.year);
    if (it == ext.years.end() - 1) {
      throw ValidationError("predict_next: year " + std::to_string(h.year) +
                            " is not part of the fitted panel");
    }
    if (!seen.insert(h.year).second) {
      throw ValidationError("predict_next: duplicate history year " + std::to_string(h.year));
    }
    idx.push_back(it - ext.years.begin());
    pred.years_used.push_back(h.year);
  }

  if (idx.empty()) {
    pred.mean = ext.mu_next;
    pred.variance = ext.tau2_next;
    return pred;
  }

  const Eigen::Index no = static_cast<Eigen::Index>(idx.size());
  MatrixXd C(no, no);
  VectorXd cross(no), r(no);
  for (Eigen::Index a = 0; a < no; ++a) {
    for (Eigen::Index b = 0; b < no; ++b) C(a, b) = ext.T(idx[a], idx[b]);
    C(a, a) += history[static_cast<std::size_t>(a)].s2;
    cross[a] = ext.T(idx[a], J);
    r[a] = history[static_cast<std::size_t>(a)].theta_hat - ext.M[idx[a]];
  }

  Eigen::LDLT<MatrixXd> ldlt(C);
  const double dmin = ldlt.vectorD().minCoeff();
  const double dmax = ldlt.vectorD().maxCoeff();
  if (ldlt.info() != Eigen::Success || dmin <= 0.0 || dmin < 1e-14 * dmax) {
    std::ostringstream msg;
    msg << "predict_next: conditioning matrix numerically singular "
        << "(pivot ratio " << (dmax > 0.0 ? dmin / dmax : 0.0) << ")";
    throw NumericalError(msg.str());
  }

  pred.mean = ext.mu_next + cross.dot(ldlt.solve(r));
  pred.variance = std::max(ext.tau2_next - cross.dot(ldlt.solve(cross)), 0.0);
  return pred;
}

std::vector<PredictiveDistribution> predict_all(const Extrapolation& ext,
                                                const Panel& panel) {
  std::vector<PredictiveDistribution> preds;
  preds.reserve(panel.n_centres());
  for (std::size_t i = 0; i < panel.n_centres(); ++i) {
    std::vector<ObservedYear> history;
    for (std::size_t j = 0; j < panel.n_years(); ++j) {
      if (panel.observed(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) {
        history.push_back({panel.years[j],
                           panel.theta_hat(static_cast<Eigen::Index>(i),
                                           static_cast<Eigen::Index>(j)),
                           panel.s2(static_cast<Eigen::Index>(i),
                                    static_cast<Eigen::Index>(j))});
      }
    }
    preds.push_back(predict_next(ext, panel.centres[i], history));
  }
  return preds;
}

PredictiveRanking predictive_ranking(const std::vector<PredictiveDistribution>& preds,
                                     double mu_next, double tau2_next,
                                     std::vector<std::string>* log) {
  if (preds.empty()) throw ValidationError("predictive_ranking: no predictions");
  PriorEstimate prior;
  prior.mu = mu_next;
  prior.tau2 = tau2_next;

  std::vector<CrudeEffect> as_crude;
  std::vector<PosteriorSummary> posts;
  as_crude.reserve(preds.size());
  posts.reserve(preds.size());
  for (const PredictiveDistribution& p : preds) {
    CrudeEffect c;
    c.centre_id = p.centre_id;
    c.theta_hat = p.mean;
    c.s2 = std::max(p.variance, 1e-300);
    as_crude.push_back(std::move(c));

    PosteriorSummary post;
    post.centre_id = p.centre_id;
    post.ebe = p.mean;
    post.pv = p.variance;
    post.shrinkage = tau2_next > 0.0 ? 1.0 - p.variance / tau2_next : 0.0;
    posts.push_back(std::move(post));
  }

  PredictiveRanking out;
  out.rows = ranking_table(as_crude, posts, prior, log);
  std::vector<double> epcs;
  epcs.reserve(out.rows.size());
  for (const RankingRow& row : out.rows) epcs.push_back(row.epc);
  out.report = rankability(epcs);
  return out;
}

}  // namespace ebmon

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "qrl/km.hpp"
#include "qrl/types.hpp"
#include "qrl/wqr.hpp"

// Marginal quantile residual lifetime estimation: the IPCW estimating
// function, its augmented-LP reformulation, and quantile post-processing.
//
// For each observation in the risk set {Y >= t0} the LP carries two rows:
//   (i)  response log(Y - t0), covariates X, weight status * G(t0)/G(Y),
//   (ii) response A, covariates X* = [1 - status * G(t0)/G(Y)] X, weight 1,
// where A exceeds every attainable fitted value, so row (ii) residuals stay
// positive and reproduce the -tau branch of the estimating function.

namespace qrl {

struct FitDiagnostics {
  int iterations = 0;
  double duality_gap = 0.0;
  double objective = 0.0;
  std::string backend;
  std::size_t clamped_weights = 0;  // IPCW ratios capped at 1e10
};

struct FitResult {
  Eigen::VectorXd alpha_hat;
  double tau = 0.5;
  double t0 = 0.0;
  std::size_t risk_set_size = 0;
  std::size_t events_in_risk_set = 0;
  double score_sup_norm = 0.0;
  double A_used = 0.0;
  std::size_t n_clusters = 0;
  std::size_t n_observations = 0;
  FitDiagnostics solver;
};

struct FitOptions {
  WqrOptions solver;
};

namespace detail {

/// Dataset flattened into dense arrays; built once and shared by the
/// estimator and every resampling replicate.
struct FlatData {
  Eigen::MatrixXd x;                 // N x p
  std::vector<double> time;          // N
  std::vector<int> status;           // N
  std::vector<std::size_t> cluster;  // N, cluster index per observation
  std::size_t n_clusters = 0;
  KmPrep km_prep;
};

inline FlatData flatten(const ClusteredDataset& data) {
  FlatData flat;
  flat.n_clusters = data.clusters.size();
  const std::size_t n = data.n_observations();
  flat.x.resize(static_cast<Eigen::Index>(n),
                static_cast<Eigen::Index>(data.p));
  flat.time.reserve(n);
  flat.status.reserve(n);
  flat.cluster.reserve(n);
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < data.clusters.size(); ++i) {
    for (const auto& obs : data.clusters[i].observations) {
      for (std::size_t j = 0; j < data.p; ++j)
        flat.x(row, static_cast<Eigen::Index>(j)) = obs.covariates[j];
      flat.time.push_back(obs.time);
      flat.status.push_back(obs.status);
      flat.cluster.push_back(i);
      ++row;
    }
  }
  flat.km_prep = make_km_prep(data);
  return flat;
}

/// IPCW ratio G(t0)/G(y) with the documented guards: a zero plateau yields
/// weight 0, denominators are floored at 1e-10, and ratios are capped at
/// 1e10 (counted so callers can log the clamp).
inline double ipcw_ratio(double g_t0, double g_y, std::size_t* clamped) {
  if (g_y <= 0.0) return 0.0;
  double ratio = g_t0 / std::max(g_y, 1e-10);
  if (ratio > 1e10) {
    ratio = 1e10;
    if (clamped) ++*clamped;
  }
  return ratio;
}

inline double pseudo_response(const FlatData& flat, double t0) {
  double max_log = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < flat.time.size(); ++k)
    if (flat.status[k] == 1 && flat.time[k] > t0)
      max_log = std::max(max_log, std::log(flat.time[k] - t0));
  return std::isfinite(max_log) ? max_log + 100.0 : 100.0;
}

/// Augmented-LP rows; `multipliers` (per observation, empty for none) scale
/// both of an observation's rows, which is how the perturbed problem of the
/// resampling variance estimators enters.
inline WqrProblem build_augmented_flat(const FlatData& flat,
                                       const QrlSpec& spec,
                                       const KmCurve& curve,
                                       const std::vector<double>& multipliers,
                                       double pseudo_a,
                                       std::size_t* clamped) {
  const Eigen::Index p = flat.x.cols();
  const double g_t0 = survival_at(curve, spec.t0);
  WqrProblem problem;
  problem.tau = spec.tau;
  std::vector<double> responses;
  std::vector<double> weights;
  std::vector<Eigen::Index> source;   // observation index per row
  std::vector<double> design_scale;   // 1 for row (i), 1 - ratio for row (ii)
  for (std::size_t k = 0; k < flat.time.size(); ++k) {
    const double y = flat.time[k];
    if (y < spec.t0) continue;
    const double gamma = multipliers.empty() ? 1.0 : multipliers[k];
    const double ratio =
        flat.status[k] == 1 ? ipcw_ratio(g_t0, survival_at(curve, y), clamped)
                            : 0.0;
    if (y > spec.t0) {
      responses.push_back(std::log(y - spec.t0));
      weights.push_back(gamma * ratio);
      source.push_back(static_cast<Eigen::Index>(k));
      design_scale.push_back(1.0);
    }
    responses.push_back(pseudo_a);
    weights.push_back(gamma);
    source.push_back(static_cast<Eigen::Index>(k));
    design_scale.push_back(1.0 - ratio);
  }
  if (responses.empty()) throw ValidationError("empty risk set at t0");

  const Eigen::Index m = static_cast<Eigen::Index>(responses.size());
  problem.responses.resize(m);
  problem.weights.resize(m);
  problem.design.resize(m, p);
  for (Eigen::Index r = 0; r < m; ++r) {
    const auto idx = static_cast<std::size_t>(r);
    problem.responses[r] = responses[idx];
    problem.weights[r] = weights[idx];
    problem.design.row(r) = design_scale[idx] * flat.x.row(source[idx]);
  }
  return problem;
}

/// Estimating function S_N(alpha); `multipliers` (per observation) produce
/// the perturbed score of the resampling schemes. The divisor stays N.
inline Eigen::VectorXd evaluate_score_flat(const FlatData& flat,
                                           const Eigen::VectorXd& alpha,
                                           const QrlSpec& spec,
                                           const KmCurve& curve,
                                           const std::vector<double>& multipliers) {
  const Eigen::Index p = flat.x.cols();
  if (alpha.size() != p)
    throw ValidationError("evaluate_score: alpha length differs from p");
  const double g_t0 = survival_at(curve, spec.t0);
  Eigen::VectorXd score = Eigen::VectorXd::Zero(p);
  for (std::size_t k = 0; k < flat.time.size(); ++k) {
    const double y = flat.time[k];
    if (y < spec.t0) continue;
    const double gamma = multipliers.empty() ? 1.0 : multipliers[k];
    double event_term = 0.0;
    if (flat.status[k] == 1) {
      const double threshold =
          spec.t0 +
          std::exp(flat.x.row(static_cast<Eigen::Index>(k)).dot(alpha));
      if (y <= threshold)
        event_term = ipcw_ratio(g_t0, survival_at(curve, y), nullptr);
    }
    score += gamma * (event_term - spec.tau) *
             flat.x.row(static_cast<Eigen::Index>(k)).transpose();
  }
  return score / static_cast<double>(flat.time.size());
}

inline FitResult fit_qrl_flat(const FlatData& flat, const QrlSpec& spec,
                              const KmCurve& curve,
                              const RiskSetReport& report,
                              const FitOptions& options) {
  FitResult fit;
  fit.tau = spec.tau;
  fit.t0 = spec.t0;
  fit.risk_set_size = report.risk_set_size;
  fit.events_in_risk_set = report.events_in_risk_set;
  fit.n_clusters = flat.n_clusters;
  fit.n_observations = flat.time.size();
  fit.A_used = pseudo_response(flat, spec.t0);
  std::size_t clamped = 0;
  const WqrProblem problem =
      build_augmented_flat(flat, spec, curve, {}, fit.A_used, &clamped);
  WqrDiagnostics diag;
  fit.alpha_hat = solve_weighted_qr(problem, options.solver, &diag);
  fit.solver.iterations = diag.iterations;
  fit.solver.duality_gap = diag.duality_gap;
  fit.solver.objective = diag.objective;
  fit.solver.backend = diag.backend;
  fit.solver.clamped_weights = clamped;
  fit.score_sup_norm =
      evaluate_score_flat(flat, fit.alpha_hat, spec, curve, {})
          .cwiseAbs()
          .maxCoeff();
  return fit;
}

}  // namespace detail

/// Builds the augmented LP rows from a dataset and a fitted censoring curve.
inline WqrProblem build_augmented_problem(const ClusteredDataset& data,
                                          const QrlSpec& spec,
                                          const KmCurve& curve) {
  validate_spec(spec);
  const auto flat = detail::flatten(data);
  return detail::build_augmented_flat(flat, spec, curve, {},
                                      detail::pseudo_response(flat, spec.t0),
                                      nullptr);
}

/// Estimating function S_N(alpha) over the pooled sample.
inline Eigen::VectorXd evaluate_score(const ClusteredDataset& data,
                                      const Eigen::VectorXd& alpha,
                                      const QrlSpec& spec,
                                      const KmCurve& curve) {
  validate_spec(spec);
  const auto flat = detail::flatten(data);
  return detail::evaluate_score_flat(flat, alpha, spec, curve, {});
}

/// Full point-estimation pass: censoring KM, augmented LP, solve, score
/// certificate.
inline FitResult fit_qrl(const ClusteredDataset& data, const QrlSpec& spec,
                         const FitOptions& options = {}) {
  const RiskSetReport report = validate_for_fit(data, spec);
  const auto flat = detail::flatten(data);
  const KmCurve curve = detail::km_from_prep(
      flat.km_prep, std::vector<double>(flat.time.size(), 1.0));
  return detail::fit_qrl_flat(flat, spec, curve, report, options);
}

/// One grid cell of fit_quantile_grid; failed cells carry the error text
/// instead of aborting the whole grid.
struct GridCell {
  QrlSpec spec;
  std::optional<FitResult> fit;
  std::string error;
};

/// Independent fits over the (tau, t0) grid, t0-major order.
inline std::vector<GridCell> fit_quantile_grid(const ClusteredDataset& data,
                                               const std::vector<double>& taus,
                                               const std::vector<double>& t0s,
                                               const FitOptions& options = {}) {
  std::vector<GridCell> grid;
  grid.reserve(taus.size() * t0s.size());
  for (double t0 : t0s) {
    for (double tau : taus) {
      GridCell cell;
      cell.spec = QrlSpec{tau, t0};
      try {
        cell.fit = fit_qrl(data, cell.spec, options);
      } catch (const std::exception& e) {
        cell.error = e.what();
      }
      grid.push_back(std::move(cell));
    }
  }
  return grid;
}

/// Monotone rearrangement across a tau grid: the estimated quantiles are
/// sorted ascending and reassigned to the same grid.
inline std::vector<double> rearrange_quantiles(
    const std::vector<std::pair<double, double>>& theta_by_tau) {
  for (std::size_t i = 1; i < theta_by_tau.size(); ++i)
    if (!(theta_by_tau[i].first > theta_by_tau[i - 1].first))
      throw ValidationError(
          "rearrange_quantiles: tau grid must be strictly increasing");
  std::vector<double> theta;
  theta.reserve(theta_by_tau.size());
  for (const auto& [tau, value] : theta_by_tau) theta.push_back(value);
  std::sort(theta.begin(), theta.end());
  return theta;
}

/// Linear predictor x' alpha_hat, the log-scale residual-life quantile.
inline double predict_residual_quantile(const FitResult& fit,
                                        const std::vector<double>& x) {
  if (static_cast<Eigen::Index>(x.size()) != fit.alpha_hat.size())
    throw ValidationError(
        "predict_residual_quantile: covariate length differs from p");
  if (x[0] != 1.0)
    throw ValidationError(
        "predict_residual_quantile: covariate vector must start with 1");
  double value = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j)
    value += x[j] * fit.alpha_hat[static_cast<Eigen::Index>(j)];
  return value;
}

}  // namespace qrl

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "qrl/covariance.hpp"
#include "qrl/estimator.hpp"
#include "qrl/km.hpp"
#include "qrl/parallel.hpp"
#include "qrl/rng.hpp"
#include "qrl/stats.hpp"
#include "qrl/types.hpp"
#include "qrl/wqr.hpp"

namespace qrl {

struct ResampleOptions {
  std::size_t B = 500;
  std::uint64_t seed = 0;
  unsigned workers = 1;
  WqrOptions solver;
  /// Test hook: when set, replaces the Exp(1) multiplier draws; called with
  /// (replicate index, unit index).
  std::function<double(std::uint32_t, std::uint32_t)> multiplier_override;
};

/// Plug-in bandwidth for the difference-quotient density estimate, clamped
/// so tau +/- h stays inside (0.001, 0.999). Nonpositive values signal an
/// unusable quantile level; callers must treat that as failure.
inline double bandwidth_hall(double tau, std::size_t n_observations) {
  if (n_observations == 0)
    throw ValidationError("bandwidth needs a positive sample size");
  if (!(tau > 0.0 && tau < 1.0))
    throw ValidationError("bandwidth needs tau in (0, 1)");
  const double z = normal_quantile(tau);
  const double phi = normal_pdf(z);
  const double core = std::cbrt(1.5 * phi * phi / (2.0 * z * z + 1.0));
  double h = 1.57 * core / std::cbrt(static_cast<double>(n_observations));
  h = std::min(h, 0.9 * (0.999 - tau));
  h = std::min(h, 0.9 * (tau - 0.001));
  return h;
}

/// Difference-quotient conditional density with positive-part guard; spacing
/// is x' (alpha_{tau+h} - alpha_{tau-h}).
inline double interval_density(double spacing, double h) {
  const double eps = 1e-6;  // keeps the quotient away from a zero spacing
  if (spacing - eps <= 0.0) return 0.0;
  return 2.0 * h / (spacing - eps);
}

namespace detail {

inline std::vector<double> draw_multipliers(
    std::size_t count, Stream stream, const ResampleOptions& options,
    std::uint32_t replicate) {
  std::vector<double> m(count);
  for (std::size_t u = 0; u < count; ++u) {
    if (options.multiplier_override) {
      m[u] = options.multiplier_override(replicate,
                                         static_cast<std::uint32_t>(u));
      if (!(m[u] >= 0.0))
        throw ValidationError("multipliers must be nonnegative");
    } else {
      Rng rng(options.seed, replicate, stream,
              static_cast<std::uint32_t>(u));
      m[u] = rng.exponential();
    }
  }
  return m;
}

/// Shared engine of the two refitting resampling estimators: draw mean-one
/// multipliers (per cluster or per observation), perturb the censoring curve
/// and the LP weights with the same draws, refit, and take the sample
/// covariance of the replicate coefficients.
inline CovarianceEstimate resampled_covariance(const FlatData& flat,
                                               const QrlSpec& spec,
                                               const ResampleOptions& options,
                                               bool per_observation,
                                               VarianceMethod method) {
  if (options.B < 2)
    throw ValidationError("resampling variance needs B >= 2");
  const std::size_t n_obs = flat.time.size();
  const std::size_t units = per_observation ? n_obs : flat.n_clusters;
  const Stream stream = per_observation ? Stream::ifr_multipliers
                                        : Stream::fr_multipliers;
  const double pseudo_a = pseudo_response(flat, spec.t0);
  const Eigen::Index p = flat.x.cols();

  Eigen::MatrixXd draws(static_cast<Eigen::Index>(options.B), p);
  std::vector<char> ok(options.B, 0);
  parallel_for(options.B, options.workers, [&](std::size_t b) {
    const auto rep = static_cast<std::uint32_t>(b);
    std::vector<double> obs_mult = draw_multipliers(units, stream, options, rep);
    if (!per_observation)
      obs_mult = expand_cluster_multipliers(flat.km_prep, obs_mult);
    try {
      const KmCurve curve = km_from_prep(flat.km_prep, obs_mult);
      const WqrProblem problem = build_augmented_flat(
          flat, spec, curve, obs_mult, pseudo_a, nullptr);
      draws.row(static_cast<Eigen::Index>(b)) =
          solve_weighted_qr(problem, options.solver, nullptr).transpose();
      ok[b] = 1;
    } catch (const SolverError&) {
    } catch (const EstimationError&) {
    } catch (const ValidationError&) {
    }
  });

  std::size_t good = 0;
  for (char c : ok) good += static_cast<std::size_t>(c);
  const std::size_t failures = options.B - good;
  if (failures * 10 > options.B)
    throw EstimationError("resampling variance failed: " +
                          std::to_string(failures) + " of " +
                          std::to_string(options.B) + " replicates failed");
  if (good < 2)
    throw EstimationError(
        "resampling variance failed: fewer than two usable replicates");

  Eigen::MatrixXd kept(static_cast<Eigen::Index>(good), p);
  Eigen::Index row = 0;
  for (std::size_t b = 0; b < options.B; ++b)
    if (ok[b]) kept.row(row++) = draws.row(static_cast<Eigen::Index>(b));

  CovarianceEstimate out;
  out.matrix = sample_covariance(kept);
  out.method = method;
  out.B = options.B;
  out.failed_replicates = failures;
  return out;
}

inline RiskSetReport risk_set_report(const FlatData& flat, double t0) {
  RiskSetReport report;
  for (std::size_t k = 0; k < flat.time.size(); ++k) {
    if (flat.time[k] < t0) continue;
    ++report.risk_set_size;
    if (flat.status[k] == 1) ++report.events_in_risk_set;
  }
  return report;
}

struct CfsInfluence {
  Eigen::MatrixXd psi;  // n_clusters x p, per-cluster weighted score terms
  Eigen::MatrixXd eta;  // n_clusters x p, censoring-estimation corrections
};

inline CfsInfluence cfs_influence(const FlatData& flat, const QrlSpec& spec,
                                  const Eigen::VectorXd& alpha_hat,
                                  const KmCurve& curve) {
  const std::size_t n_obs = flat.time.size();
  const Eigen::Index p = flat.x.cols();
  const double g_t0 = survival_at(curve, spec.t0);

  // per-cluster score terms psi_i
  const std::size_t n_clusters = flat.n_clusters;
  Eigen::MatrixXd psi = Eigen::MatrixXd::Zero(
      static_cast<Eigen::Index>(n_clusters), p);
  for (std::size_t k = 0; k < n_obs; ++k) {
    const double y = flat.time[k];
    if (y < spec.t0) continue;
    const auto row = flat.x.row(static_cast<Eigen::Index>(k));
    double event_term = 0.0;
    if (flat.status[k] == 1 &&
        y <= spec.t0 + std::exp(row.dot(alpha_hat)))
      event_term = ipcw_ratio(g_t0, survival_at(curve, y), nullptr);
    psi.row(static_cast<Eigen::Index>(flat.cluster[k])) +=
        (event_term - spec.tau) * row;
  }

  // censoring-estimation terms eta_i. With
  //   count(t)  = #{(r,s): Y_rs >= t}                       (pooled),
  //   K(v)      = sum over censored u with Y_u <= v of count(Y_u)^-2,
  //   P(v)      = sum of active-event weights x*ratio over Y_q >= v,
  //   PK(v)     = sum of those weights times K(Y_q) over Y_q < v,
  // each observation l contributes
  //   1{censored, Y_l >= t0} P(Y_l)/count(Y_l) - PK(Y_l) - K(Y_l) P(Y_l)
  // to its cluster's eta.
  std::vector<double> sorted_times(flat.time);
  std::sort(sorted_times.begin(), sorted_times.end());

  std::vector<double> censored_times;
  for (std::size_t k = 0; k < n_obs; ++k)
    if (flat.status[k] == 0) censored_times.push_back(flat.time[k]);
  std::sort(censored_times.begin(), censored_times.end());
  std::vector<double> censored_prefix(censored_times.size() + 1, 0.0);
  for (std::size_t c = 0; c < censored_times.size(); ++c) {
    const auto it = std::lower_bound(sorted_times.begin(), sorted_times.end(),
                                     censored_times[c]);
    const double count = static_cast<double>(
        sorted_times.end() - it);
    censored_prefix[c + 1] = censored_prefix[c] + 1.0 / (count * count);
  }
  const auto cumulative_k = [&](double v) {
    const auto it = std::upper_bound(censored_times.begin(),
                                     censored_times.end(), v);
    return censored_prefix[static_cast<std::size_t>(
        it - censored_times.begin())];
  };

  struct Active {
    double time;
    Eigen::VectorXd weight;
  };
  std::vector<Active> actives;
  for (std::size_t k = 0; k < n_obs; ++k) {
    const double y = flat.time[k];
    if (flat.status[k] != 1 || y < spec.t0) continue;
    const auto row = flat.x.row(static_cast<Eigen::Index>(k));
    if (y > spec.t0 + std::exp(row.dot(alpha_hat))) continue;
    const double ratio = ipcw_ratio(g_t0, survival_at(curve, y), nullptr);
    if (ratio == 0.0) continue;
    actives.push_back({y, ratio * row.transpose()});
  }
  std::sort(actives.begin(), actives.end(),
            [](const Active& a, const Active& b) { return a.time < b.time; });
  const std::size_t n_active = actives.size();
  std::vector<double> active_times(n_active);
  for (std::size_t q = 0; q < n_active; ++q)
    active_times[q] = actives[q].time;
  Eigen::MatrixXd suffix_weight = Eigen::MatrixXd::Zero(
      static_cast<Eigen::Index>(n_active + 1), p);
  for (std::size_t q = n_active; q-- > 0;)
    suffix_weight.row(static_cast<Eigen::Index>(q)) =
        suffix_weight.row(static_cast<Eigen::Index>(q + 1)) +
        actives[q].weight.transpose();
  Eigen::MatrixXd prefix_weight_k = Eigen::MatrixXd::Zero(
      static_cast<Eigen::Index>(n_active + 1), p);
  for (std::size_t q = 0; q < n_active; ++q)
    prefix_weight_k.row(static_cast<Eigen::Index>(q + 1)) =
        prefix_weight_k.row(static_cast<Eigen::Index>(q)) +
        cumulative_k(actives[q].time) * actives[q].weight.transpose();

  Eigen::MatrixXd eta = Eigen::MatrixXd::Zero(
      static_cast<Eigen::Index>(n_clusters), p);
  for (std::size_t l = 0; l < n_obs; ++l) {
    const double y = flat.time[l];
    const auto cluster = static_cast<Eigen::Index>(flat.cluster[l]);
    const auto a = static_cast<Eigen::Index>(
        std::lower_bound(active_times.begin(), active_times.end(), y) -
        active_times.begin());
    const Eigen::RowVectorXd p_at = suffix_weight.row(a);
    if (flat.status[l] == 0 && y >= spec.t0) {
      const auto it = std::lower_bound(sorted_times.begin(),
                                       sorted_times.end(), y);
      const double count = static_cast<double>(sorted_times.end() - it);
      eta.row(cluster) += p_at / count;
    }
    eta.row(cluster) -= prefix_weight_k.row(a) + cumulative_k(y) * p_at;
  }

  return {std::move(psi), std::move(eta)};
}

inline CovarianceEstimate variance_cfs_flat(const FlatData& flat,
                                            const QrlSpec& spec,
                                            const Eigen::VectorXd& alpha_hat,
                                            const WqrOptions& solver) {
  const std::size_t n_obs = flat.time.size();
  const Eigen::Index p = flat.x.cols();
  if (alpha_hat.size() != p)
    throw ValidationError("coefficient length differs from design width");
  const KmCurve curve =
      km_from_prep(flat.km_prep, std::vector<double>(n_obs, 1.0));
  const double g_t0 = survival_at(curve, spec.t0);

  const double h = bandwidth_hall(spec.tau, n_obs);
  if (!(h > 0.0))
    throw EstimationError(
        "density estimation failed: quantile level too extreme for the "
        "plug-in bandwidth");

  // flanking fits at tau +/- h reuse the same censoring curve
  const RiskSetReport report = risk_set_report(flat, spec.t0);
  FitOptions side_options;
  side_options.solver = solver;
  Eigen::VectorXd above, below;
  try {
    above = fit_qrl_flat(flat, QrlSpec{spec.tau + h, spec.t0}, curve, report,
                         side_options)
                .alpha_hat;
    below = fit_qrl_flat(flat, QrlSpec{spec.tau - h, spec.t0}, curve, report,
                         side_options)
                .alpha_hat;
  } catch (const std::exception& e) {
    throw EstimationError(std::string("density estimation failed: ") +
                          e.what());
  }
  const Eigen::VectorXd gap = above - below;

  Eigen::MatrixXd slope = Eigen::MatrixXd::Zero(p, p);
  bool any_density = false;
  for (std::size_t k = 0; k < n_obs; ++k) {
    if (flat.time[k] < spec.t0) continue;
    const auto row = flat.x.row(static_cast<Eigen::Index>(k));
    const double f = interval_density(row.dot(gap), h);
    if (f > 0.0) any_density = true;
    slope.noalias() += g_t0 * f * row.transpose() * row;
  }
  slope /= static_cast<double>(n_obs);
  if (!any_density)
    throw EstimationError(
        "density estimation failed: estimated conditional density is zero "
        "on the risk set");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(symmetrize(slope));
  const double lam_min = eig.eigenvalues().minCoeff();
  const double lam_max = eig.eigenvalues().maxCoeff();
  if (!(lam_min > 0.0) || lam_max / lam_min > 1e12)
    throw EstimationError(
        "sandwich variance failed: slope matrix is singular (smallest "
        "eigenvalue " +
        std::to_string(lam_min) + ")");
  const Eigen::MatrixXd slope_inv =
      eig.eigenvectors() *
      eig.eigenvalues().cwiseInverse().asDiagonal() *
      eig.eigenvectors().transpose();

  const CfsInfluence influence = cfs_influence(flat, spec, alpha_hat, curve);
  Eigen::MatrixXd middle = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index i = 0; i < influence.psi.rows(); ++i) {
    const Eigen::VectorXd s =
        (influence.psi.row(i) + influence.eta.row(i)).transpose();
    middle.noalias() += s * s.transpose();
  }
  middle /= static_cast<double>(n_obs);

  CovarianceEstimate out;
  out.matrix = symmetrize(slope_inv * middle * slope_inv) /
               static_cast<double>(n_obs);
  out.method = VarianceMethod::cfs;
  out.B = 0;
  out.bandwidth = h;
  return out;
}

inline CovarianceEstimate variance_rbs_flat(const FlatData& flat,
                                            const QrlSpec& spec,
                                            const Eigen::VectorXd& alpha_hat,
                                            const ResampleOptions& options) {
  if (options.B < 2)
    throw ValidationError("resampling variance needs B >= 2");
  const std::size_t n_obs = flat.time.size();
  const Eigen::Index p = flat.x.cols();
  if (alpha_hat.size() != p)
    throw ValidationError("coefficient length differs from design width");
  const double root_n = std::sqrt(static_cast<double>(n_obs));
  const KmCurve curve =
      km_from_prep(flat.km_prep, std::vector<double>(n_obs, 1.0));

  // step 1: perturbed scores at alpha_hat estimate the middle matrix
  Eigen::MatrixXd perturbed(static_cast<Eigen::Index>(options.B), p);
  parallel_for(options.B, options.workers, [&](std::size_t b) {
    const auto rep = static_cast<std::uint32_t>(b);
    std::vector<double> cluster_mult = draw_multipliers(
        flat.n_clusters, Stream::rbs_multipliers, options, rep);
    const std::vector<double> obs_mult =
        expand_cluster_multipliers(flat.km_prep, cluster_mult);
    const KmCurve perturbed_curve = km_from_prep(flat.km_prep, obs_mult);
    perturbed.row(static_cast<Eigen::Index>(b)) =
        root_n *
        evaluate_score_flat(flat, alpha_hat, spec, perturbed_curve, obs_mult)
            .transpose();
  });
  const Eigen::MatrixXd middle = sample_covariance(perturbed);

  // step 2: draws from N(0, middle^-1), eigenvalues floored at 1e-10
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(middle);
  Eigen::VectorXd inv_sqrt = eig.eigenvalues();
  for (Eigen::Index j = 0; j < inv_sqrt.size(); ++j)
    inv_sqrt[j] = 1.0 / std::sqrt(std::max(inv_sqrt[j], 1e-10));
  const Eigen::MatrixXd transform = eig.eigenvectors() *
                                    inv_sqrt.asDiagonal() *
                                    eig.eigenvectors().transpose();

  // step 3: plain scores at shifted coefficients recover the sandwich
  Eigen::MatrixXd shifted(static_cast<Eigen::Index>(options.B), p);
  parallel_for(options.B, options.workers, [&](std::size_t b) {
    Rng rng(options.seed, static_cast<std::uint32_t>(b),
            Stream::rbs_gaussian, 0);
    Eigen::VectorXd g(p);
    for (Eigen::Index j = 0; j < p; ++j) g[j] = rng.normal();
    const Eigen::VectorXd z = transform * g;
    const Eigen::VectorXd alpha_b = alpha_hat + z / root_n;
    shifted.row(static_cast<Eigen::Index>(b)) =
        root_n *
        evaluate_score_flat(flat, alpha_b, spec, curve, {}).transpose();
  });
  const Eigen::MatrixXd outer = sample_covariance(shifted);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig_outer(outer);
  const double lam_min = eig_outer.eigenvalues().minCoeff();
  const double lam_max = eig_outer.eigenvalues().maxCoeff();
  if (!(lam_min > 0.0) || lam_max / lam_min > 1e12)
    throw EstimationError(
        "resampling-based sandwich failed: score covariance is singular "
        "(smallest eigenvalue " +
        std::to_string(lam_min) + ", largest " + std::to_string(lam_max) +
        ")");
  const Eigen::MatrixXd v_hat =
      eig_outer.eigenvectors() *
      eig_outer.eigenvalues().cwiseInverse().asDiagonal() *
      eig_outer.eigenvectors().transpose();

  CovarianceEstimate out;
  out.matrix = symmetrize(v_hat) / static_cast<double>(n_obs);
  out.method = VarianceMethod::rbs;
  out.B = options.B;
  return out;
}

}  // namespace detail

/// Full resampling: per-cluster multipliers perturb the censoring curve and
/// the LP weights, and every replicate is refit.
inline CovarianceEstimate variance_fr(const ClusteredDataset& data,
                                      const QrlSpec& spec,
                                      const ResampleOptions& options = {}) {
  validate_for_fit(data, spec);
  const auto flat = detail::flatten(data);
  return detail::resampled_covariance(flat, spec, options, false,
                                      VarianceMethod::fr);
}

/// Variant of variance_fr that perturbs per observation instead of per
/// cluster, which ignores the within-cluster dependence.
inline CovarianceEstimate variance_ifr(const ClusteredDataset& data,
                                       const QrlSpec& spec,
                                       const ResampleOptions& options = {}) {
  validate_for_fit(data, spec);
  const auto flat = detail::flatten(data);
  return detail::resampled_covariance(flat, spec, options, true,
                                      VarianceMethod::ifr);
}

/// Closed-form sandwich: difference-quotient density in the slope matrix and
/// per-cluster score plus censoring-correction terms in the middle matrix.
inline CovarianceEstimate variance_cfs(const ClusteredDataset& data,
                                       const QrlSpec& spec,
                                       const FitResult& fit,
                                       const ResampleOptions& options = {}) {
  validate_for_fit(data, spec);
  const auto flat = detail::flatten(data);
  return detail::variance_cfs_flat(flat, spec, fit.alpha_hat, options.solver);
}

/// Resampling-based sandwich: perturbed scores estimate the middle matrix,
/// scores at normally shifted coefficients recover the slope, no refits.
inline CovarianceEstimate variance_rbs(const ClusteredDataset& data,
                                       const QrlSpec& spec,
                                       const FitResult& fit,
                                       const ResampleOptions& options = {}) {
  validate_for_fit(data, spec);
  const auto flat = detail::flatten(data);
  return detail::variance_rbs_flat(flat, spec, fit.alpha_hat, options);
}

inline CovarianceEstimate estimate_covariance(const ClusteredDataset& data,
                                              const QrlSpec& spec,
                                              const FitResult& fit,
                                              VarianceMethod method,
                                              const ResampleOptions& options =
                                                  {}) {
  switch (method) {
    case VarianceMethod::fr: return variance_fr(data, spec, options);
    case VarianceMethod::ifr: return variance_ifr(data, spec, options);
    case VarianceMethod::cfs: return variance_cfs(data, spec, fit, options);
    case VarianceMethod::rbs: return variance_rbs(data, spec, fit, options);
  }
  throw std::logic_error("unreachable variance method");
}

}  // namespace qrl

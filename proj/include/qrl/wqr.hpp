#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "qrl/types.hpp"

// Weighted quantile-regression LP kernel: minimize
//   sum_k weights[k] * rho_tau(responses[k] - design.row(k) * alpha)
// by a Frisch-Newton primal-dual interior point method, with a
// bounded-variable simplex fallback for small problems.

namespace qrl {

struct WqrProblem {
  Eigen::VectorXd responses;  // length M
  Eigen::MatrixXd design;     // M x p
  Eigen::VectorXd weights;    // length M, nonnegative
  double tau = 0.5;
};

enum class WqrBackend { automatic, interior_point, simplex };

struct WqrOptions {
  WqrBackend backend = WqrBackend::automatic;
  int max_iterations = 200;   // interior-point cap
  double tolerance = 1e-8;    // relative duality-gap tolerance
};

struct WqrDiagnostics {
  int iterations = 0;
  double duality_gap = 0.0;
  double objective = 0.0;
  std::string backend;
};

inline double check_loss(double u, double tau) {
  return u * (tau - (u < 0.0 ? 1.0 : 0.0));
}

/// Objective of the weighted quantile LP at a candidate coefficient vector.
inline double wqr_objective(const WqrProblem& problem,
                            const Eigen::VectorXd& alpha) {
  double total = 0.0;
  for (Eigen::Index k = 0; k < problem.responses.size(); ++k) {
    const double r = problem.responses[k] - problem.design.row(k).dot(alpha);
    total += problem.weights[k] * check_loss(r, problem.tau);
  }
  return total;
}

/// Per-coefficient subgradient certificate at alpha:
/// lhs_j = |sum_k w_k x_kj (tau - 1{y_k < fit_k})| must not exceed
/// bound_j = sum over numerically-zero residual rows of w_k |x_kj| plus a
/// 1e-6 relative slack.
struct SubgradientCertificate {
  Eigen::VectorXd lhs;
  Eigen::VectorXd bound;
  bool ok = false;
};

inline SubgradientCertificate subgradient_certificate(
    const WqrProblem& problem, const Eigen::VectorXd& alpha) {
  const Eigen::Index p = problem.design.cols();
  SubgradientCertificate cert;
  cert.lhs = Eigen::VectorXd::Zero(p);
  cert.bound = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd total_scale = Eigen::VectorXd::Zero(p);
  for (Eigen::Index k = 0; k < problem.responses.size(); ++k) {
    const double w = problem.weights[k];
    if (w == 0.0) continue;
    const double fit = problem.design.row(k).dot(alpha);
    const double r = problem.responses[k] - fit;
    const double grad = problem.tau - (problem.responses[k] < fit ? 1.0 : 0.0);
    const bool zero_resid = std::fabs(r) <= 1e-6 * (1.0 + std::fabs(problem.responses[k]));
    for (Eigen::Index j = 0; j < p; ++j) {
      const double wx = w * std::fabs(problem.design(k, j));
      cert.lhs[j] += w * problem.design(k, j) * grad;
      if (zero_resid) cert.bound[j] += wx;
      total_scale[j] += wx;
    }
  }
  cert.lhs = cert.lhs.cwiseAbs();
  cert.bound += 1e-6 * total_scale;
  cert.ok = (cert.lhs.array() <= cert.bound.array()).all();
  return cert;
}

namespace detail {

// Active subproblem after filtering: rows with positive weight and a nonzero
// design row, pre-scaled by their weights (w * rho(u) == rho(w * u)).
struct ScaledWqr {
  Eigen::MatrixXd design;     // Ma x p, weight-scaled
  Eigen::VectorXd responses;  // Ma, weight-scaled
  double offset = 0.0;        // objective mass of zero-design positive-weight rows
};

inline ScaledWqr scale_and_filter(const WqrProblem& problem) {
  const Eigen::Index m = problem.responses.size();
  const Eigen::Index p = problem.design.cols();
  if (problem.design.rows() != m || problem.weights.size() != m)
    throw ValidationError("wqr: responses/design/weights sizes disagree");
  if (!(problem.tau > 0.0 && problem.tau < 1.0))
    throw ValidationError("wqr: tau must lie strictly inside (0,1)");
  if (p == 0 || m == 0) throw ValidationError("wqr: empty problem");

  Eigen::Index positive = 0;
  std::vector<Eigen::Index> active;
  active.reserve(m);
  ScaledWqr out;
  for (Eigen::Index k = 0; k < m; ++k) {
    const double w = problem.weights[k];
    if (!(w >= 0.0) || !std::isfinite(w))
      throw ValidationError("wqr: weights must be finite and nonnegative");
    if (w == 0.0) continue;
    ++positive;
    if (problem.design.row(k).cwiseAbs().maxCoeff() == 0.0) {
      out.offset += w * check_loss(problem.responses[k], problem.tau);
      continue;
    }
    active.push_back(k);
  }
  if (positive < p)
    throw SolverError("wqr: fewer than p rows with positive weight");

  out.design.resize(static_cast<Eigen::Index>(active.size()), p);
  out.responses.resize(static_cast<Eigen::Index>(active.size()));
  for (std::size_t idx = 0; idx < active.size(); ++idx) {
    const Eigen::Index k = active[idx];
    const double w = problem.weights[k];
    out.design.row(static_cast<Eigen::Index>(idx)) = w * problem.design.row(k);
    out.responses[static_cast<Eigen::Index>(idx)] = w * problem.responses[k];
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(out.design);
  if (qr.rank() < p)
    throw SolverError(
        "wqr: design rank-deficient on positively weighted rows");
  return out;
}

inline double scaled_objective(const ScaledWqr& sp, double tau,
                               const Eigen::VectorXd& alpha) {
  double total = sp.offset;
  for (Eigen::Index k = 0; k < sp.responses.size(); ++k)
    total += check_loss(sp.responses[k] - sp.design.row(k).dot(alpha), tau);
  return total;
}

/// Crossover step: interpolate the p rows with the smallest scaled residuals
/// and keep the result when it does not worsen the objective. Converts the
/// interior point's face-center iterate into an exact vertex.
inline Eigen::VectorXd vertex_polish(const ScaledWqr& sp, double tau,
                                     const Eigen::VectorXd& b) {
  const Eigen::Index ma = sp.responses.size();
  const Eigen::Index p = sp.design.cols();
  if (ma < p) return b;
  const Eigen::VectorXd r = sp.responses - sp.design * b;
  std::vector<Eigen::Index> order(ma);
  for (Eigen::Index k = 0; k < ma; ++k) order[static_cast<std::size_t>(k)] = k;
  std::partial_sort(order.begin(), order.begin() + p, order.end(),
                    [&](Eigen::Index i, Eigen::Index j) {
                      return std::fabs(r[i]) / (1.0 + std::fabs(sp.responses[i])) <
                             std::fabs(r[j]) / (1.0 + std::fabs(sp.responses[j]));
                    });
  Eigen::MatrixXd basis(p, p);
  Eigen::VectorXd rhs(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    basis.row(j) = sp.design.row(order[static_cast<std::size_t>(j)]);
    rhs[j] = sp.responses[order[static_cast<std::size_t>(j)]];
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(basis);
  if (!lu.isInvertible()) return b;
  const Eigen::VectorXd candidate = lu.solve(rhs);
  const double obj_b = scaled_objective(sp, tau, b);
  const double obj_c = scaled_objective(sp, tau, candidate);
  return obj_c <= obj_b + 1e-9 * (1.0 + std::fabs(obj_b)) ? candidate : b;
}

/// Frisch-Newton predictor-corrector interior point on the bounded dual
///   max y~' a  s.t.  X~' a = (1-tau) X~' 1,  a in [0,1]^Ma.
/// Primal iterate b is the coefficient vector; complementary pairs (z, a)
/// and (w, s = 1 - a) carry the residual split w - z = y~ - X~ b.
inline Eigen::VectorXd interior_point(const ScaledWqr& sp, double tau,
                                      const WqrOptions& options,
                                      WqrDiagnostics* diag) {
  const Eigen::Index ma = sp.responses.size();
  const Eigen::Index p = sp.design.cols();
  const double beta = 0.99995;

  Eigen::VectorXd a = Eigen::VectorXd::Constant(ma, 1.0 - tau);
  Eigen::VectorXd s = Eigen::VectorXd::Constant(ma, tau);
  Eigen::VectorXd b =
      sp.design.colPivHouseholderQr().solve(sp.responses);
  Eigen::VectorXd r = sp.responses - sp.design * b;
  const double eps0 = std::max(0.1 * r.cwiseAbs().mean(), 1e-6);
  Eigen::VectorXd w = r.cwiseMax(0.0).array() + eps0;
  Eigen::VectorXd z = w - r;

  double gap = z.dot(a) + w.dot(s);
  int it = 0;
  for (; it < options.max_iterations; ++it) {
    const double objective = [&] {
      double total = sp.offset;
      for (Eigen::Index k = 0; k < ma; ++k)
        total += check_loss(sp.responses[k] - sp.design.row(k).dot(b), tau);
      return total;
    }();
    gap = z.dot(a) + w.dot(s);
    if (diag) {
      diag->iterations = it;
      diag->duality_gap = gap;
      diag->objective = objective;
    }
    if (gap <= options.tolerance * (1.0 + std::fabs(objective))) {
      return vertex_polish(sp, tau, b);
    }

    Eigen::VectorXd q_inv(ma);
    for (Eigen::Index k = 0; k < ma; ++k) {
      const double q = std::max(z[k] / a[k] + w[k] / s[k], 1e-14);
      q_inv[k] = 1.0 / q;
    }

    Eigen::MatrixXd normal = sp.design.transpose() *
                             q_inv.asDiagonal() * sp.design;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(normal);
    if (ldlt.info() != Eigen::Success) {
      normal.diagonal().array() += 1e-12 * normal.diagonal().maxCoeff();
      ldlt.compute(normal);
      if (ldlt.info() != Eigen::Success)
        throw SolverError("wqr interior point: Newton system factorization failed");
    }

    auto newton_step = [&](const Eigen::VectorXd& xi, Eigen::VectorXd& db,
                           Eigen::VectorXd& da) {
      db = ldlt.solve(sp.design.transpose() * (q_inv.asDiagonal() * xi));
      da = q_inv.asDiagonal() * (xi - sp.design * db);
    };

    // Affine (predictor) direction.
    Eigen::VectorXd xi = w - z;
    Eigen::VectorXd db_aff, da_aff;
    newton_step(xi, db_aff, da_aff);
    Eigen::VectorXd dz_aff = -z.array() - (z.array() / a.array()) * da_aff.array();
    Eigen::VectorXd dw_aff = -w.array() + (w.array() / s.array()) * da_aff.array();

    auto max_step = [&](const Eigen::VectorXd& v, const Eigen::VectorXd& dv) {
      double t = std::numeric_limits<double>::infinity();
      for (Eigen::Index k = 0; k < v.size(); ++k)
        if (dv[k] < 0.0) t = std::min(t, -v[k] / dv[k]);
      return t;
    };
    const double tp_aff = std::min(
        1.0, beta * std::min(max_step(a, da_aff), max_step(s, -da_aff)));
    const double td_aff = std::min(
        1.0, beta * std::min(max_step(z, dz_aff), max_step(w, dw_aff)));

    const double gap_aff =
        (z + td_aff * dz_aff).dot(a + tp_aff * da_aff) +
        (w + td_aff * dw_aff).dot(s - tp_aff * da_aff);
    const double ratio = std::max(gap_aff, 0.0) / gap;
    const double mu = ratio * ratio * ratio * gap / (2.0 * static_cast<double>(ma));

    // Corrector direction with Mehrotra second-order terms.
    for (Eigen::Index k = 0; k < ma; ++k) {
      xi[k] = w[k] - z[k] + (mu - dz_aff[k] * da_aff[k]) / a[k] -
              (mu + dw_aff[k] * da_aff[k]) / s[k];
    }
    Eigen::VectorXd db, da;
    newton_step(xi, db, da);
    Eigen::VectorXd dz(ma), dw(ma);
    for (Eigen::Index k = 0; k < ma; ++k) {
      dz[k] = (mu - dz_aff[k] * da_aff[k]) / a[k] - z[k] -
              (z[k] / a[k]) * da[k];
      dw[k] = (mu + dw_aff[k] * da_aff[k]) / s[k] - w[k] +
              (w[k] / s[k]) * da[k];
    }
    const double tp =
        std::min(1.0, beta * std::min(max_step(a, da), max_step(s, -da)));
    const double td =
        std::min(1.0, beta * std::min(max_step(z, dz), max_step(w, dw)));

    a += tp * da;
    s -= tp * da;
    z += td * dz;
    w += td * dw;
    b += td * db;
  }
  throw SolverError("wqr interior point: no convergence after " +
                    std::to_string(options.max_iterations) +
                    " iterations (duality gap " + std::to_string(gap) + ")");
}

/// Bounded-variable revised simplex on the same dual LP, phase 1 with
/// artificial columns. Bland's rule throughout; returns the simplex
/// multipliers of the optimal basis, which interpolate p rows and equal the
/// primal coefficient vector.
inline Eigen::VectorXd simplex(const ScaledWqr& sp, double tau) {
  const Eigen::Index ma = sp.responses.size();
  const Eigen::Index p = sp.design.cols();
  const Eigen::Index n_cols = ma + p;  // real columns then artificials

  const Eigen::VectorXd rhs =
      (1.0 - tau) * (sp.design.transpose() * Eigen::VectorXd::Ones(ma));
  Eigen::VectorXd art_sign(p);
  for (Eigen::Index j = 0; j < p; ++j)
    art_sign[j] = rhs[j] >= 0.0 ? 1.0 : -1.0;

  // Column accessor: real column j is design row j transposed; artificial
  // column ma+j is art_sign[j] * e_j.
  auto column = [&](Eigen::Index j) -> Eigen::VectorXd {
    if (j < ma) return sp.design.row(j).transpose();
    Eigen::VectorXd e = Eigen::VectorXd::Zero(p);
    e[j - ma] = art_sign[j - ma];
    return e;
  };
  auto upper = [&](Eigen::Index j) {
    return j < ma ? 1.0 : std::numeric_limits<double>::infinity();
  };

  std::vector<Eigen::Index> basis(p);
  std::vector<char> at_upper(n_cols, 0);
  std::vector<char> in_basis(n_cols, 0);
  std::vector<char> blocked(n_cols, 0);  // artificials barred in phase 2
  for (Eigen::Index j = 0; j < p; ++j) {
    basis[j] = ma + j;
    in_basis[ma + j] = 1;
  }

  const double cost_scale = 1.0 + sp.responses.cwiseAbs().maxCoeff();
  const double tol = 1e-9 * cost_scale;

  Eigen::MatrixXd b_mat(p, p);
  Eigen::PartialPivLU<Eigen::MatrixXd> lu;
  Eigen::VectorXd x_basic(p);

  auto refactor = [&] {
    for (Eigen::Index j = 0; j < p; ++j) b_mat.col(j) = column(basis[j]);
    lu.compute(b_mat);
    Eigen::VectorXd adjusted = rhs;
    for (Eigen::Index j = 0; j < n_cols; ++j)
      if (at_upper[j] && !in_basis[j]) adjusted -= column(j);
    x_basic = lu.solve(adjusted);
  };

  auto run_phase = [&](const Eigen::VectorXd& cost) -> double {
    for (long iteration = 0; iteration < 100000; ++iteration) {
      refactor();
      Eigen::VectorXd cost_b(p);
      for (Eigen::Index j = 0; j < p; ++j) cost_b[j] = cost[basis[j]];
      const Eigen::VectorXd y = lu.transpose().solve(cost_b);

      Eigen::Index enter = -1;
      double direction = 0.0;
      for (Eigen::Index j = 0; j < n_cols; ++j) {
        if (in_basis[j] || blocked[j]) continue;
        const double reduced = cost[j] - y.dot(column(j));
        if (!at_upper[j] && reduced > tol) {
          enter = j;
          direction = 1.0;
          break;  // Bland: lowest eligible index
        }
        if (at_upper[j] && reduced < -tol) {
          enter = j;
          direction = -1.0;
          break;
        }
      }
      if (enter < 0) {
        double value = 0.0;
        for (Eigen::Index j = 0; j < p; ++j) value += cost[basis[j]] * x_basic[j];
        for (Eigen::Index j = 0; j < n_cols; ++j)
          if (at_upper[j] && !in_basis[j]) value += cost[j];
        return value;
      }

      const Eigen::VectorXd d = lu.solve(column(enter));
      // Entering variable moves by t in `direction`; basic j changes by
      // -direction * d[j] * t. The step is limited by the entering column's
      // own bound range and by each basic variable's bounds.
      double t_max = upper(enter);
      Eigen::Index leave_pos = -1;
      bool leave_to_upper = false;
      for (Eigen::Index j = 0; j < p; ++j) {
        const double delta = -direction * d[j];
        double room;
        bool hits_upper;
        if (delta < -1e-11) {
          room = x_basic[j] / (-delta);
          hits_upper = false;
        } else if (delta > 1e-11 && upper(basis[j]) !=
                                        std::numeric_limits<double>::infinity()) {
          room = (upper(basis[j]) - x_basic[j]) / delta;
          hits_upper = true;
        } else {
          continue;
        }
        if (room < 0.0) room = 0.0;
        const bool strictly_smaller = room < t_max - 1e-12;
        const bool tie = !strictly_smaller && room < t_max + 1e-12;
        if (strictly_smaller ||
            (tie && leave_pos >= 0 && basis[j] < basis[leave_pos])) {
          t_max = std::min(t_max, room);
          leave_pos = j;
          leave_to_upper = hits_upper;
        } else if (tie && leave_pos < 0) {
          // Ties the entering column's own range; prefer the basis change
          // only when it is genuinely binding.
          t_max = std::min(t_max, room);
          leave_pos = j;
          leave_to_upper = hits_upper;
        }
      }
      if (t_max == std::numeric_limits<double>::infinity())
        throw SolverError("wqr simplex: unbounded phase objective");

      if (leave_pos < 0 || t_max >= upper(enter) - 1e-12) {
        // Bound flip: entering variable crosses to its other bound.
        at_upper[enter] = at_upper[enter] ? 0 : 1;
        continue;
      }
      const Eigen::Index leaving = basis[leave_pos];
      basis[leave_pos] = enter;
      in_basis[enter] = 1;
      in_basis[leaving] = 0;
      at_upper[enter] = 0;
      at_upper[leaving] = leave_to_upper ? 1 : 0;
    }
    throw SolverError("wqr simplex: iteration cap reached");
  };

  // Phase 1: drive artificial mass to zero.
  Eigen::VectorXd phase1_cost = Eigen::VectorXd::Zero(n_cols);
  for (Eigen::Index j = ma; j < n_cols; ++j) phase1_cost[j] = -1.0;
  const double phase1 = run_phase(phase1_cost);
  if (phase1 < -1e-7 * (1.0 + rhs.cwiseAbs().maxCoeff()))
    throw SolverError("wqr simplex: phase 1 failed to reach feasibility");

  // Drive any residual artificial out of the basis; a row with no eligible
  // pivot would mean a rank-deficient design, which was screened earlier.
  refactor();
  for (Eigen::Index pos = 0; pos < p; ++pos) {
    if (basis[pos] < ma) continue;
    bool replaced = false;
    for (Eigen::Index j = 0; j < ma && !replaced; ++j) {
      if (in_basis[j]) continue;
      const Eigen::VectorXd d = lu.solve(column(j));
      if (std::fabs(d[pos]) > 1e-9) {
        const Eigen::Index leaving = basis[pos];
        basis[pos] = j;
        in_basis[j] = 1;
        in_basis[leaving] = 0;
        at_upper[j] = 0;
        refactor();
        replaced = true;
      }
    }
    if (!replaced && std::fabs(x_basic[pos]) > 1e-8)
      throw SolverError("wqr simplex: artificial stuck in basis");
  }
  for (Eigen::Index j = ma; j < n_cols; ++j)
    if (!in_basis[j]) blocked[j] = 1;

  // Phase 2: maximize the dual objective over the real columns.
  Eigen::VectorXd phase2_cost = Eigen::VectorXd::Zero(n_cols);
  for (Eigen::Index j = 0; j < ma; ++j) phase2_cost[j] = sp.responses[j];
  run_phase(phase2_cost);

  refactor();
  Eigen::VectorXd cost_b(p);
  for (Eigen::Index j = 0; j < p; ++j)
    cost_b[j] = basis[j] < ma ? sp.responses[basis[j]] : 0.0;
  return lu.transpose().solve(cost_b);
}

}  // namespace detail

/// Minimizes the weighted check loss; returns the coefficient vector.
/// Interior point by default with a simplex fallback for small problems
/// (fewer than 500 active rows) if the interior point fails to converge.
inline Eigen::VectorXd solve_weighted_qr(const WqrProblem& problem,
                                         const WqrOptions& options = {},
                                         WqrDiagnostics* diagnostics = nullptr) {
  const auto scaled = detail::scale_and_filter(problem);
  auto finish = [&](const Eigen::VectorXd& alpha, const char* backend) {
    if (diagnostics) {
      diagnostics->backend = backend;
      diagnostics->objective = wqr_objective(problem, alpha);
    }
    return alpha;
  };
  if (options.backend == WqrBackend::simplex)
    return finish(detail::simplex(scaled, problem.tau), "simplex");
  if (options.backend == WqrBackend::interior_point)
    return finish(detail::interior_point(scaled, problem.tau, options, diagnostics),
                  "interior-point");
  try {
    return finish(detail::interior_point(scaled, problem.tau, options, diagnostics),
                  "interior-point");
  } catch (const SolverError&) {
    if (scaled.responses.size() >= 500) throw;
    return finish(detail::simplex(scaled, problem.tau), "simplex");
  }
}

}  // namespace qrl

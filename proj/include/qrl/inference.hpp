#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <string>
#include <vector>

#include "qrl/covariance.hpp"
#include "qrl/stats.hpp"
#include "qrl/types.hpp"

namespace qrl {

struct WaldResult {
  double statistic = 0.0;
  std::size_t df = 0;
  double p_value = 1.0;
  std::vector<std::size_t> tested_indices;
};

struct ConfidenceInterval {
  double estimate = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double level = 0.95;
};

/// Chi-square test of H0: alpha[indices] == null_values, using the supplied
/// covariance of alpha_hat. Indices must be distinct and in range.
inline WaldResult wald_test(const Eigen::VectorXd& alpha_hat,
                            const CovarianceEstimate& cov,
                            const Eigen::VectorXd& null_values,
                            const std::vector<std::size_t>& indices) {
  const Eigen::Index p = alpha_hat.size();
  if (cov.matrix.rows() != p || cov.matrix.cols() != p)
    throw ValidationError("covariance dimension does not match coefficients");
  if (indices.empty()) throw ValidationError("wald test needs at least one index");
  if (static_cast<Eigen::Index>(null_values.size()) !=
      static_cast<Eigen::Index>(indices.size()))
    throw ValidationError("null vector length does not match tested indices");
  for (std::size_t a = 0; a < indices.size(); ++a) {
    if (indices[a] >= static_cast<std::size_t>(p))
      throw ValidationError("wald test index out of range");
    for (std::size_t b = a + 1; b < indices.size(); ++b)
      if (indices[a] == indices[b])
        throw ValidationError("wald test indices must be distinct");
  }

  const Eigen::Index q = static_cast<Eigen::Index>(indices.size());
  Eigen::VectorXd diff(q);
  Eigen::MatrixXd sub(q, q);
  for (Eigen::Index a = 0; a < q; ++a) {
    diff[a] = alpha_hat[static_cast<Eigen::Index>(indices[a])] - null_values[a];
    for (Eigen::Index b = 0; b < q; ++b)
      sub(a, b) = cov.matrix(static_cast<Eigen::Index>(indices[a]),
                             static_cast<Eigen::Index>(indices[b]));
  }

  Eigen::FullPivLU<Eigen::MatrixXd> lu(sub);
  if (!lu.isInvertible())
    throw EstimationError(
        "wald test failed: covariance submatrix is singular");
  double stat = diff.dot(lu.solve(diff));
  if (stat < 0.0) stat = 0.0;  // guard round-off on near-singular submatrices

  WaldResult out;
  out.statistic = stat;
  out.df = indices.size();
  out.p_value = chi_square_sf(stat, static_cast<double>(out.df));
  out.tested_indices = indices;
  return out;
}

/// Normal-theory CIs for each coefficient at the given two-sided level.
inline std::vector<ConfidenceInterval> coefficient_cis(
    const Eigen::VectorXd& alpha_hat, const CovarianceEstimate& cov,
    double level = 0.95) {
  if (!(level > 0.0 && level < 1.0))
    throw ValidationError("confidence level must lie in (0, 1)");
  const Eigen::Index p = alpha_hat.size();
  if (cov.matrix.rows() != p || cov.matrix.cols() != p)
    throw ValidationError("covariance dimension does not match coefficients");
  const double z = normal_quantile(0.5 + level / 2.0);
  std::vector<ConfidenceInterval> out(static_cast<std::size_t>(p));
  for (Eigen::Index j = 0; j < p; ++j) {
    const double v = cov.matrix(j, j);
    if (v < 0.0)
      throw EstimationError("covariance has a negative diagonal entry");
    const double half = z * std::sqrt(v);
    out[static_cast<std::size_t>(j)] = ConfidenceInterval{
        alpha_hat[j], alpha_hat[j] - half, alpha_hat[j] + half, level};
  }
  return out;
}

/// "**" for p < 0.05, "*" for p < 0.10, "" otherwise.
inline std::string significance_stars(double p_value) {
  if (p_value < 0.05) return "**";
  if (p_value < 0.10) return "*";
  return "";
}

}  // namespace qrl

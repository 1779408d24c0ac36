#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <string>

#include "qrl/types.hpp"

namespace qrl {

enum class VarianceMethod { fr, cfs, rbs, ifr };

inline const char* variance_method_name(VarianceMethod method) {
  switch (method) {
    case VarianceMethod::fr: return "fr";
    case VarianceMethod::cfs: return "cfs";
    case VarianceMethod::rbs: return "rbs";
    case VarianceMethod::ifr: return "ifr";
  }
  return "?";
}

inline VarianceMethod variance_method_from_name(const std::string& name) {
  if (name == "fr") return VarianceMethod::fr;
  if (name == "cfs") return VarianceMethod::cfs;
  if (name == "rbs") return VarianceMethod::rbs;
  if (name == "ifr") return VarianceMethod::ifr;
  throw ValidationError("unknown variance method '" + name + "'");
}

/// Covariance of alpha_hat on the estimation scale (V/N).
struct CovarianceEstimate {
  Eigen::MatrixXd matrix;
  VarianceMethod method = VarianceMethod::fr;
  std::size_t B = 0;
  std::size_t failed_replicates = 0;
  double bandwidth = 0.0;  // closed-form sandwich only

  Eigen::VectorXd standard_errors() const {
    Eigen::VectorXd se(matrix.rows());
    for (Eigen::Index j = 0; j < matrix.rows(); ++j) {
      const double v = matrix(j, j);
      if (v < 0.0)
        throw EstimationError("covariance has a negative diagonal entry");
      se[j] = std::sqrt(v);
    }
    return se;
  }
};

namespace detail {

inline Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& m) {
  return 0.5 * (m + m.transpose());
}

/// Sample covariance with B-1 divisor over the rows of `draws`.
inline Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& draws) {
  const Eigen::Index b = draws.rows();
  if (b < 2)
    throw EstimationError("sample covariance needs at least two draws");
  const Eigen::RowVectorXd mean = draws.colwise().mean();
  const Eigen::MatrixXd centered = draws.rowwise() - mean;
  return symmetrize(centered.transpose() * centered /
                    static_cast<double>(b - 1));
}

}  // namespace detail

}  // namespace qrl

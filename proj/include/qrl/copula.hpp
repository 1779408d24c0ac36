#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <cstdint>

#include "qrl/rng.hpp"
#include "qrl/stats.hpp"
#include "qrl/types.hpp"

namespace qrl {

enum class CopulaFamily { clayton, frank, gaussian, independence };

inline const char* copula_family_name(CopulaFamily family) {
  switch (family) {
    case CopulaFamily::clayton: return "clayton";
    case CopulaFamily::frank: return "frank";
    case CopulaFamily::gaussian: return "gaussian";
    case CopulaFamily::independence: return "independence";
  }
  return "?";
}

/// For clayton/frank the dependence level is kendall_tau; gaussian takes an
/// explicit correlation matrix and ignores kendall_tau.
struct CopulaSpec {
  CopulaFamily family = CopulaFamily::clayton;
  double kendall_tau = 0.0;
  Eigen::MatrixXd correlation;
};

inline Eigen::MatrixXd ar1_correlation(std::size_t dim, double rho) {
  if (!(rho > -1.0 && rho < 1.0))
    throw ValidationError("AR(1) correlation must lie in (-1, 1)");
  const Eigen::Index d = static_cast<Eigen::Index>(dim);
  Eigen::MatrixXd r(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j)
      r(i, j) = std::pow(rho, std::abs(static_cast<double>(i - j)));
  return r;
}

namespace detail {

/// D1(theta) = (1/theta) * integral_0^theta t/(e^t - 1) dt, theta > 0.
inline double debye_one(double theta) {
  constexpr double pi = 3.14159265358979323846;
  if (theta >= 40.0) return pi * pi / 6.0 / theta;  // tail below 1e-16
  auto integrand = [](double t) {
    if (t < 1e-12) return 1.0 - t / 2.0;
    return t * std::exp(-t) / (-std::expm1(-t));
  };
  const int n = 4096;  // even panel count, composite Simpson
  const double h = theta / n;
  double sum = integrand(0.0) + integrand(theta);
  for (int k = 1; k < n; ++k)
    sum += integrand(k * h) * (k % 2 == 1 ? 4.0 : 2.0);
  return sum * h / 3.0 / theta;
}

inline double frank_tau_of_theta(double theta) {
  // odd in theta; only called with theta > 0
  return 1.0 - 4.0 / theta * (1.0 - debye_one(theta));
}

}  // namespace detail

/// Inverts tau(theta) = 1 - (4/theta)(1 - D1(theta)) by bisection.
inline double frank_theta_from_tau(double tau) {
  if (!(tau > -1.0 && tau < 1.0))
    throw ValidationError("Frank dependence requires kendall tau in (-1, 1)");
  if (tau == 0.0) return 0.0;
  const double target = std::abs(tau);
  double lo = 1e-10;
  double hi = 1.0;
  while (detail::frank_tau_of_theta(hi) < target) {
    hi *= 2.0;
    if (hi > 1e9)
      throw EstimationError("Frank dependence level too close to 1");
  }
  for (int it = 0; it < 200 && hi - lo > 1e-10 * std::max(1.0, lo); ++it) {
    const double mid = 0.5 * (lo + hi);
    if (detail::frank_tau_of_theta(mid) < target)
      lo = mid;
    else
      hi = mid;
  }
  const double theta = 0.5 * (lo + hi);
  return tau > 0.0 ? theta : -theta;
}

/// Draws rows of dependent U(0,1) vectors. Construction precomputes the
/// dependence parameter (and Cholesky factor for the gaussian family) so a
/// sampler can be shared across replicates; each draw consumes one Rng.
class CopulaSampler {
 public:
  CopulaSampler(const CopulaSpec& spec, std::size_t dim)
      : family_(spec.family), dim_(dim) {
    if (dim == 0) throw ValidationError("copula dimension must be positive");
    switch (spec.family) {
      case CopulaFamily::clayton: {
        if (!(spec.kendall_tau >= 0.0 && spec.kendall_tau < 1.0))
          throw ValidationError(
              "Clayton dependence requires kendall tau in [0, 1)");
        theta_ = 2.0 * spec.kendall_tau / (1.0 - spec.kendall_tau);
        independent_ = theta_ == 0.0;
        break;
      }
      case CopulaFamily::frank: {
        theta_ = frank_theta_from_tau(spec.kendall_tau);
        independent_ = theta_ == 0.0;
        if (!independent_ && dim > 2 && theta_ < 0.0)
          throw ValidationError(
              "Frank frailty sampling needs nonnegative dependence for "
              "dimension above two");
        break;
      }
      case CopulaFamily::gaussian: {
        const Eigen::Index d = static_cast<Eigen::Index>(dim);
        if (spec.correlation.rows() != d || spec.correlation.cols() != d)
          throw ValidationError(
              "gaussian copula needs a correlation matrix matching the "
              "dimension");
        if (!spec.correlation.isApprox(spec.correlation.transpose(), 1e-12))
          throw ValidationError("correlation matrix must be symmetric");
        for (Eigen::Index i = 0; i < d; ++i)
          if (std::abs(spec.correlation(i, i) - 1.0) > 1e-12)
            throw ValidationError("correlation matrix needs a unit diagonal");
        Eigen::LLT<Eigen::MatrixXd> llt(spec.correlation);
        if (llt.info() != Eigen::Success)
          throw ValidationError(
              "correlation matrix is not positive definite");
        chol_ = llt.matrixL();
        independent_ = false;
        break;
      }
      case CopulaFamily::independence: {
        independent_ = true;
        break;
      }
    }
  }

  std::size_t dim() const { return dim_; }

  Eigen::VectorXd draw(Rng& rng) const {
    Eigen::VectorXd u(static_cast<Eigen::Index>(dim_));
    if (independent_) {
      for (Eigen::Index j = 0; j < u.size(); ++j) u[j] = rng.uniform();
      return u;
    }
    switch (family_) {
      case CopulaFamily::clayton: {
        const double w = rng.gamma(1.0 / theta_);
        for (Eigen::Index j = 0; j < u.size(); ++j) {
          const double e = rng.exponential();
          u[j] = clamp_open(std::exp(-std::log1p(e / w) / theta_));
        }
        return u;
      }
      case CopulaFamily::frank: {
        if (dim_ == 2) {
          // conditional-distribution inversion
          const double a = rng.uniform();
          const double w = rng.uniform();
          const double eu = std::exp(-theta_ * a);
          const double v =
              -std::log1p(w * std::expm1(-theta_) / ((1.0 - w) * eu + w)) /
              theta_;
          u[0] = clamp_open(a);
          u[1] = clamp_open(v);
          return u;
        }
        // logarithmic-series frailty, theta > 0 only
        const double w = rng.log_series(theta_);
        for (Eigen::Index j = 0; j < u.size(); ++j) {
          const double e = rng.exponential();
          u[j] = clamp_open(
              -std::log1p(std::expm1(-theta_) * std::exp(-e / w)) / theta_);
        }
        return u;
      }
      case CopulaFamily::gaussian: {
        Eigen::VectorXd g(u.size());
        for (Eigen::Index j = 0; j < g.size(); ++j) g[j] = rng.normal();
        const Eigen::VectorXd z = chol_ * g;
        for (Eigen::Index j = 0; j < u.size(); ++j)
          u[j] = clamp_open(normal_cdf(z[j]));
        return u;
      }
      case CopulaFamily::independence:
        break;  // handled by the early return
    }
    throw std::logic_error("unreachable copula family");
  }

 private:
  static double clamp_open(double x) {
    const double eps = 1e-15;
    if (x < eps) return eps;
    if (x > 1.0 - eps) return 1.0 - eps;
    return x;
  }

  CopulaFamily family_;
  std::size_t dim_;
  double theta_ = 0.0;
  bool independent_ = true;
  Eigen::MatrixXd chol_;
};

/// count x dim matrix of dependent uniforms; row r uses its own keyed stream
/// so the result does not depend on evaluation order.
inline Eigen::MatrixXd sample_copula(const CopulaSpec& spec, std::size_t dim,
                                     std::size_t count, std::uint64_t seed,
                                     std::uint32_t replicate = 0) {
  const CopulaSampler sampler(spec, dim);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(count),
                      static_cast<Eigen::Index>(dim));
  for (std::size_t r = 0; r < count; ++r) {
    Rng rng(seed, replicate, Stream::copula, static_cast<std::uint32_t>(r));
    out.row(static_cast<Eigen::Index>(r)) = sampler.draw(rng).transpose();
  }
  return out;
}

}  // namespace qrl

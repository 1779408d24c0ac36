#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "qrl/estimator.hpp"
#include "qrl/km.hpp"
#include "qrl/variance.hpp"
#include "support/test_helpers.hpp"

using qrl::CovarianceEstimate;
using qrl::QrlSpec;
using qrl::ResampleOptions;
using qrl::VarianceMethod;
using qrl::testing::random_clustered;
using qrl::testing::uncensored_clustered;

namespace {

double min_eigenvalue(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
  return eig.eigenvalues().minCoeff();
}

}  // namespace

TEST_CASE("plug-in bandwidth matches its closed form", "[variance]") {
  REQUIRE(qrl::bandwidth_hall(0.5, 1000) == Catch::Approx(0.0974).margin(1e-3));

  // exact expression at the median: z = 0, phi = 1/sqrt(2 pi)
  const double core = std::cbrt(1.5 / (2.0 * M_PI));
  REQUIRE(qrl::bandwidth_hall(0.5, 1000) ==
          Catch::Approx(1.57 * core / std::cbrt(1000.0)).margin(1e-12));

  // n^{-1/3} scaling: eight times the sample halves the bandwidth
  REQUIRE(qrl::bandwidth_hall(0.5, 1000) /
              qrl::bandwidth_hall(0.5, 8000) ==
          Catch::Approx(2.0).margin(1e-9));

  // clamped negative near the ends of (0, 1)
  REQUIRE(qrl::bandwidth_hall(0.9995, 1000) <= 0.0);
  REQUIRE(qrl::bandwidth_hall(0.0005, 1000) <= 0.0);

  REQUIRE_THROWS_AS(qrl::bandwidth_hall(0.5, 0), qrl::ValidationError);
  REQUIRE_THROWS_AS(qrl::bandwidth_hall(0.0, 10), qrl::ValidationError);
  REQUIRE_THROWS_AS(qrl::bandwidth_hall(1.0, 10), qrl::ValidationError);
}

TEST_CASE("difference-quotient density vanishes for degenerate spacing",
          "[variance]") {
  REQUIRE(qrl::interval_density(0.0, 0.05) == 0.0);
  REQUIRE(qrl::interval_density(-1.0, 0.05) == 0.0);
  REQUIRE(qrl::interval_density(1e-7, 0.05) == 0.0);
  REQUIRE(qrl::interval_density(1e-6, 0.05) == 0.0);
  REQUIRE(qrl::interval_density(0.5, 0.05) ==
          Catch::Approx(0.1 / (0.5 - 1e-6)).margin(1e-15));
}

TEST_CASE("unit multipliers in every replicate give exactly zero covariance",
          "[variance]") {
  const auto data = random_clustered(25, 3, 314);
  const QrlSpec spec{0.5, 0.0};

  ResampleOptions options;
  options.B = 2;
  options.multiplier_override = [](std::uint32_t, std::uint32_t) {
    return 1.0;
  };
  const auto est = qrl::variance_fr(data, spec, options);
  REQUIRE(est.matrix.cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(est.failed_replicates == 0);

  // more replicates stay degenerate up to summation rounding
  options.B = 16;
  const auto wide = qrl::variance_fr(data, spec, options);
  REQUIRE(wide.matrix.cwiseAbs().maxCoeff() <= 1e-28);
}

TEST_CASE("cluster and observation resampling coincide on singleton clusters",
          "[variance]") {
  const auto data = random_clustered(40, 1, 2718);
  const QrlSpec spec{0.5, 0.0};

  ResampleOptions options;
  options.B = 25;
  options.multiplier_override = [](std::uint32_t b, std::uint32_t u) {
    return 0.25 + static_cast<double>((b * 2654435761u + u * 40503u) % 997) /
                      400.0;
  };
  const auto fr = qrl::variance_fr(data, spec, options);
  const auto ifr = qrl::variance_ifr(data, spec, options);
  REQUIRE((fr.matrix - ifr.matrix).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("censoring correction term vanishes without censoring",
          "[variance]") {
  const auto data = uncensored_clustered(30, 3, 99);
  const QrlSpec spec{0.5, 0.0};
  const auto fit = qrl::fit_qrl(data, spec);
  const auto flat = qrl::detail::flatten(data);
  const auto curve = qrl::fit_censoring_survival(data);

  const auto influence =
      qrl::detail::cfs_influence(flat, spec, fit.alpha_hat, curve);
  REQUIRE(influence.psi.rows() == 30);
  REQUIRE(influence.eta.rows() == 30);
  REQUIRE(influence.eta.isZero(0.0));
  REQUIRE(influence.psi.cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("refitting resamplers are reproducible and seed-sensitive",
          "[variance]") {
  const auto data = random_clustered(30, 3, 555);
  const QrlSpec spec{0.5, 0.5};

  ResampleOptions options;
  options.B = 40;
  options.seed = 7;
  const auto a = qrl::variance_fr(data, spec, options);
  const auto b = qrl::variance_fr(data, spec, options);
  REQUIRE((a.matrix - b.matrix).cwiseAbs().maxCoeff() == 0.0);

  options.seed = 8;
  const auto c = qrl::variance_fr(data, spec, options);
  REQUIRE((a.matrix - c.matrix).cwiseAbs().maxCoeff() > 0.0);

  // worker count must not change the estimate
  options.workers = 3;
  const auto d = qrl::variance_fr(data, spec, options);
  options.workers = 1;
  const auto e = qrl::variance_fr(data, spec, options);
  REQUIRE((d.matrix - e.matrix).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("score-perturbation sandwich is reproducible and seed-sensitive",
          "[variance]") {
  const auto data = random_clustered(35, 3, 808);
  const QrlSpec spec{0.5, 0.0};
  const auto fit = qrl::fit_qrl(data, spec);

  ResampleOptions options;
  options.B = 60;
  options.seed = 11;
  const auto a = qrl::variance_rbs(data, spec, fit, options);
  const auto b = qrl::variance_rbs(data, spec, fit, options);
  REQUIRE((a.matrix - b.matrix).cwiseAbs().maxCoeff() == 0.0);

  options.seed = 12;
  const auto c = qrl::variance_rbs(data, spec, fit, options);
  REQUIRE((a.matrix - c.matrix).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("resampling rejects unusable configurations", "[variance]") {
  const auto data = random_clustered(20, 3, 4);
  const QrlSpec spec{0.5, 0.0};
  const auto fit = qrl::fit_qrl(data, spec);

  ResampleOptions one;
  one.B = 1;
  REQUIRE_THROWS_MATCHES(
      qrl::variance_fr(data, spec, one), qrl::ValidationError,
      Catch::Matchers::MessageMatches(
          Catch::Matchers::ContainsSubstring("needs B >= 2")));
  REQUIRE_THROWS_AS(qrl::variance_rbs(data, spec, fit, one),
                    qrl::ValidationError);

  ResampleOptions zeroed;
  zeroed.B = 10;
  zeroed.multiplier_override = [](std::uint32_t, std::uint32_t) {
    return 0.0;
  };
  REQUIRE_THROWS_MATCHES(
      qrl::variance_fr(data, spec, zeroed), qrl::EstimationError,
      Catch::Matchers::MessageMatches(
          Catch::Matchers::ContainsSubstring("replicates failed")));

  ResampleOptions negative;
  negative.B = 10;
  negative.multiplier_override = [](std::uint32_t, std::uint32_t) {
    return -1.0;
  };
  REQUIRE_THROWS_MATCHES(
      qrl::variance_fr(data, spec, negative), qrl::ValidationError,
      Catch::Matchers::MessageMatches(
          Catch::Matchers::ContainsSubstring("nonnegative")));
}

TEST_CASE("closed-form sandwich reports shape, symmetry, and bandwidth",
          "[variance]") {
  const auto data = random_clustered(60, 3, 123);
  const QrlSpec spec{0.5, 0.0};
  const auto fit = qrl::fit_qrl(data, spec);

  const auto est = qrl::variance_cfs(data, spec, fit);
  REQUIRE(est.method == VarianceMethod::cfs);
  REQUIRE(est.B == 0);
  REQUIRE(est.bandwidth ==
          Catch::Approx(qrl::bandwidth_hall(0.5, data.n_observations()))
              .margin(1e-12));
  REQUIRE((est.matrix - est.matrix.transpose()).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(min_eigenvalue(est.matrix) >= -1e-8);
  for (Eigen::Index j = 0; j < est.matrix.rows(); ++j)
    REQUIRE(est.matrix(j, j) > 0.0);
}

TEST_CASE("extreme quantile levels fail the density step loudly",
          "[variance]") {
  const auto data = random_clustered(60, 3, 123);
  const QrlSpec spec{0.9995, 0.0};
  const auto fit = qrl::fit_qrl(data, QrlSpec{0.5, 0.0});
  REQUIRE_THROWS_MATCHES(
      qrl::variance_cfs(data, spec, fit), qrl::EstimationError,
      Catch::Matchers::MessageMatches(
          Catch::Matchers::ContainsSubstring("quantile level too extreme")));
}

TEST_CASE("the dispatcher tags each estimate with its method", "[variance]") {
  const auto data = random_clustered(40, 3, 31);
  const QrlSpec spec{0.5, 0.0};
  const auto fit = qrl::fit_qrl(data, spec);

  ResampleOptions options;
  options.B = 30;
  options.seed = 17;
  for (auto method : {VarianceMethod::fr, VarianceMethod::cfs,
                      VarianceMethod::rbs, VarianceMethod::ifr}) {
    const auto est = qrl::estimate_covariance(data, spec, fit, method, options);
    REQUIRE(est.method == method);
    REQUIRE(est.matrix.rows() == 2);
    REQUIRE(est.matrix.cols() == 2);
    REQUIRE(min_eigenvalue(est.matrix) >= -1e-8);
    if (method == VarianceMethod::cfs) {
      REQUIRE(est.B == 0);
      REQUIRE(est.bandwidth > 0.0);
    } else {
      REQUIRE(est.B == 30);
    }
  }
}

TEST_CASE("the four estimators give coherent standard errors", "[variance]") {
  const auto data = random_clustered(50, 3, 2024);
  const QrlSpec spec{0.5, 0.0};
  const auto fit = qrl::fit_qrl(data, spec);

  ResampleOptions options;
  options.B = 60;
  options.seed = 5;
  std::vector<Eigen::VectorXd> ses;
  for (auto method : {VarianceMethod::fr, VarianceMethod::cfs,
                      VarianceMethod::rbs, VarianceMethod::ifr})
    ses.push_back(
        qrl::estimate_covariance(data, spec, fit, method, options)
            .standard_errors());

  for (Eigen::Index j = 0; j < 2; ++j) {
    double lo = ses[0][j], hi = ses[0][j];
    for (const auto& se : ses) {
      REQUIRE(se[j] > 0.0);
      lo = std::min(lo, se[j]);
      hi = std::max(hi, se[j]);
    }
    INFO("coefficient " << j << " se range [" << lo << ", " << hi << "]");
    REQUIRE(hi / lo < 4.0);
  }
}

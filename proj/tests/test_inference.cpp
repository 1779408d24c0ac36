#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <random>

#include "qrl/covariance.hpp"
#include "qrl/inference.hpp"

using qrl::CovarianceEstimate;
using qrl::coefficient_cis;
using qrl::wald_test;

namespace {

CovarianceEstimate make_cov(const Eigen::MatrixXd& m) {
  CovarianceEstimate cov;
  cov.matrix = m;
  cov.method = qrl::VarianceMethod::fr;
  return cov;
}

}  // namespace

TEST_CASE("wald statistic is zero at the null and matches hand computations",
          "[inference]") {
  Eigen::VectorXd alpha(2);
  alpha << 1.0, 0.2;
  const auto cov = make_cov(Eigen::Vector2d(0.04, 0.01).asDiagonal());

  const auto at_null = wald_test(alpha, cov, alpha, {0, 1});
  REQUIRE(at_null.statistic == 0.0);
  REQUIRE(at_null.p_value == 1.0);
  REQUIRE(at_null.df == 2);

  // one coefficient, d = 0.2, variance 0.01: W = 0.04/0.01 = 4
  const auto single =
      wald_test(alpha, cov, Eigen::VectorXd::Zero(1), {1});
  REQUIRE(single.statistic == Catch::Approx(4.0).margin(1e-12));
  REQUIRE(single.df == 1);
  REQUIRE(single.p_value == Catch::Approx(0.0455).margin(1e-3));
  REQUIRE(single.tested_indices == std::vector<std::size_t>{1});
}

TEST_CASE("joint wald statistic ignores index order", "[inference]") {
  Eigen::VectorXd alpha(3);
  alpha << 0.5, -0.3, 1.2;
  Eigen::MatrixXd m(3, 3);
  m << 0.05, 0.01, 0.00, 0.01, 0.04, 0.01, 0.00, 0.01, 0.06;
  const auto cov = make_cov(m);
  Eigen::VectorXd null_fwd(2), null_rev(2);
  null_fwd << 0.0, 1.0;
  null_rev << 1.0, 0.0;

  const auto fwd = wald_test(alpha, cov, null_fwd, {1, 2});
  const auto rev = wald_test(alpha, cov, null_rev, {2, 1});
  REQUIRE(fwd.statistic == Catch::Approx(rev.statistic).margin(1e-12));
  REQUIRE(fwd.p_value == rev.p_value);
}

TEST_CASE("wald statistic is invariant under linear reparameterization",
          "[inference]") {
  std::mt19937_64 gen(3);
  std::normal_distribution<double> norm(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd d(2);
    d << norm(gen), norm(gen);
    Eigen::MatrixXd root(2, 2);
    root << norm(gen), norm(gen), norm(gen), norm(gen);
    const Eigen::MatrixXd v =
        root * root.transpose() + 0.5 * Eigen::MatrixXd::Identity(2, 2);

    Eigen::MatrixXd t(2, 2);
    do {
      t << norm(gen), norm(gen), norm(gen), norm(gen);
    } while (std::abs(t.determinant()) < 0.1);

    const auto base =
        wald_test(d, make_cov(v), Eigen::VectorXd::Zero(2), {0, 1});
    const auto mapped = wald_test(Eigen::VectorXd(t * d),
                                  make_cov(t * v * t.transpose()),
                                  Eigen::VectorXd::Zero(2), {0, 1});
    REQUIRE(mapped.statistic ==
            Catch::Approx(base.statistic).epsilon(1e-8));
  }
}

TEST_CASE("wald test validates its inputs", "[inference]") {
  Eigen::VectorXd alpha(2);
  alpha << 1.0, 2.0;
  const auto cov = make_cov(Eigen::MatrixXd::Identity(2, 2));
  const Eigen::VectorXd null1 = Eigen::VectorXd::Zero(1);

  REQUIRE_THROWS_AS(wald_test(alpha, cov, null1, {}), qrl::ValidationError);
  REQUIRE_THROWS_AS(wald_test(alpha, cov, null1, {5}), qrl::ValidationError);
  REQUIRE_THROWS_AS(
      wald_test(alpha, cov, Eigen::VectorXd::Zero(2), {1, 1}),
      qrl::ValidationError);
  REQUIRE_THROWS_AS(wald_test(alpha, cov, null1, {0, 1}),
                    qrl::ValidationError);
  REQUIRE_THROWS_AS(
      wald_test(alpha, make_cov(Eigen::MatrixXd::Identity(3, 3)), null1, {0}),
      qrl::ValidationError);

  const auto singular = make_cov(Eigen::MatrixXd::Zero(2, 2));
  REQUIRE_THROWS_AS(wald_test(alpha, singular, null1, {0}),
                    qrl::EstimationError);
}

TEST_CASE("confidence intervals use the normal quantile of the level",
          "[inference]") {
  Eigen::VectorXd alpha(2);
  alpha << 1.0, -2.0;
  const auto cov = make_cov(Eigen::Vector2d(0.01, 0.0).asDiagonal());

  const auto cis = coefficient_cis(alpha, cov, 0.95);
  REQUIRE(cis.size() == 2);
  REQUIRE(cis[0].estimate == 1.0);
  REQUIRE(cis[0].lower == Catch::Approx(1.0 - 1.959963985 * 0.1).margin(1e-6));
  REQUIRE(cis[0].upper == Catch::Approx(1.0 + 1.959963985 * 0.1).margin(1e-6));
  // zero variance collapses the interval to the point estimate
  REQUIRE(cis[1].lower == -2.0);
  REQUIRE(cis[1].upper == -2.0);

  const auto wide = coefficient_cis(alpha, cov, 0.99);
  REQUIRE(wide[0].lower < cis[0].lower);
  REQUIRE(wide[0].upper > cis[0].upper);

  REQUIRE_THROWS_AS(coefficient_cis(alpha, cov, 1.0), qrl::ValidationError);

  auto negative = cov;
  negative.matrix(0, 0) = -0.5;
  REQUIRE_THROWS_AS(coefficient_cis(alpha, negative), qrl::EstimationError);
}

TEST_CASE("significance stars follow the 0.05 and 0.10 cutoffs",
          "[inference]") {
  REQUIRE(qrl::significance_stars(0.01) == "**");
  REQUIRE(qrl::significance_stars(0.049) == "**");
  REQUIRE(qrl::significance_stars(0.05) == "*");
  REQUIRE(qrl::significance_stars(0.099) == "*");
  REQUIRE(qrl::significance_stars(0.10) == "");
  REQUIRE(qrl::significance_stars(0.5) == "");
}

TEST_CASE("p-value always equals the chi-square survival of the statistic",
          "[inference]") {
  std::mt19937_64 gen(8);
  std::normal_distribution<double> norm(0.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::VectorXd alpha(2);
    alpha << norm(gen), norm(gen);
    Eigen::MatrixXd root(2, 2);
    root << norm(gen), norm(gen), norm(gen), norm(gen);
    const auto cov = make_cov(
        Eigen::MatrixXd(root * root.transpose() +
                        0.25 * Eigen::MatrixXd::Identity(2, 2)));
    const auto result =
        wald_test(alpha, cov, Eigen::VectorXd::Zero(2), {0, 1});
    REQUIRE(result.p_value ==
            qrl::chi_square_sf(result.statistic,
                               static_cast<double>(result.df)));
    REQUIRE(result.statistic >= 0.0);
    REQUIRE(result.p_value >= 0.0);
    REQUIRE(result.p_value <= 1.0);
  }
}

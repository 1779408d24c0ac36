#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <string>
#include <vector>

#include "json.hpp"
#include "qrl/covariance.hpp"
#include "qrl/estimator.hpp"
#include "qrl/inference.hpp"
#include "qrl/types.hpp"

namespace qrl {

inline nlohmann::json fit_to_json(const FitResult& fit) {
  nlohmann::json j;
  j["tau"] = fit.tau;
  j["t0"] = fit.t0;
  j["alpha"] = std::vector<double>(fit.alpha_hat.data(),
                                   fit.alpha_hat.data() + fit.alpha_hat.size());
  j["score_sup_norm"] = fit.score_sup_norm;
  j["risk_set_size"] = fit.risk_set_size;
  j["A_used"] = fit.A_used;
  j["n"] = fit.n_clusters;
  j["N"] = fit.n_observations;
  return j;
}

inline FitResult fit_from_json(const nlohmann::json& j) {
  FitResult fit;
  try {
    fit.tau = j.at("tau").get<double>();
    fit.t0 = j.at("t0").get<double>();
    const auto alpha = j.at("alpha").get<std::vector<double>>();
    fit.alpha_hat = Eigen::Map<const Eigen::VectorXd>(
        alpha.data(), static_cast<Eigen::Index>(alpha.size()));
    fit.score_sup_norm = j.at("score_sup_norm").get<double>();
    fit.risk_set_size = j.at("risk_set_size").get<std::size_t>();
    fit.A_used = j.at("A_used").get<double>();
    fit.n_clusters = j.at("n").get<std::size_t>();
    fit.n_observations = j.at("N").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed fit document: ") + e.what());
  }
  return fit;
}

inline nlohmann::json covariance_to_json(const CovarianceEstimate& est) {
  nlohmann::json j;
  j["method"] = variance_method_name(est.method);
  j["B"] = est.B;
  std::vector<std::vector<double>> cov(
      static_cast<std::size_t>(est.matrix.rows()));
  for (Eigen::Index r = 0; r < est.matrix.rows(); ++r) {
    cov[static_cast<std::size_t>(r)].resize(
        static_cast<std::size_t>(est.matrix.cols()));
    for (Eigen::Index c = 0; c < est.matrix.cols(); ++c)
      cov[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] =
          est.matrix(r, c);
  }
  j["cov"] = cov;
  const Eigen::VectorXd se = est.standard_errors();
  j["se"] = std::vector<double>(se.data(), se.data() + se.size());
  j["failures"] = est.failed_replicates;
  return j;
}

inline nlohmann::json ci_to_json(const ConfidenceInterval& ci) {
  nlohmann::json j;
  j["estimate"] = ci.estimate;
  j["lower"] = ci.lower;
  j["upper"] = ci.upper;
  j["level"] = ci.level;
  return j;
}

inline nlohmann::json wald_to_json(const WaldResult& wald) {
  nlohmann::json j;
  j["statistic"] = wald.statistic;
  j["df"] = wald.df;
  j["p_value"] = wald.p_value;
  j["stars"] = significance_stars(wald.p_value);
  j["indices"] = wald.tested_indices;
  return j;
}

}  // namespace qrl

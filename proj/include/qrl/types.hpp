#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace qrl {

/// Input data or configuration violates a documented contract.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An LP solve failed to converge or the problem is degenerate.
class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An estimation-level computation (variance, density, inversion) failed.
class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One subject record: observed time Y = min(T, C), event indicator,
/// covariate row with the intercept in slot 0.
struct Observation {
  std::string cluster_id;
  double time = 0.0;               // Y, strictly positive
  int status = 0;                  // 1 = event observed, 0 = censored
  std::vector<double> covariates;  // length p, covariates[0] == 1
};

struct Cluster {
  std::string id;
  std::vector<Observation> observations;
};

/// Clustered right-censored sample. Treated as immutable after construction;
/// all library entry points take it by const reference.
struct ClusteredDataset {
  std::vector<Cluster> clusters;
  std::vector<std::string> covariate_names;  // length p, [0] == "(intercept)"
  std::size_t p = 0;

  std::size_t n_clusters() const { return clusters.size(); }

  std::size_t n_observations() const {
    std::size_t total = 0;
    for (const auto& c : clusters) total += c.observations.size();
    return total;
  }
};

/// Target of estimation: quantile level and the residual-life horizon.
struct QrlSpec {
  double tau = 0.5;
  double t0 = 0.0;
};

struct RiskSetReport {
  std::size_t risk_set_size = 0;
  std::size_t events_in_risk_set = 0;
};

inline void validate_spec(const QrlSpec& spec) {
  if (!(spec.tau > 0.0 && spec.tau < 1.0))
    throw ValidationError("tau must lie strictly inside (0,1)");
  if (!(spec.t0 >= 0.0))
    throw ValidationError("t0 must be nonnegative");
}

/// Full invariant sweep over a dataset; throws ValidationError naming the
/// offending cluster/observation. Builders and the CSV loader call this.
inline void validate_dataset(const ClusteredDataset& data) {
  if (data.clusters.empty()) throw ValidationError("dataset has no clusters");
  if (data.p == 0) throw ValidationError("covariate dimension is zero");
  if (data.covariate_names.size() != data.p)
    throw ValidationError("covariate name list does not match dimension p");
  for (const auto& cluster : data.clusters) {
    if (cluster.observations.empty())
      throw ValidationError("cluster '" + cluster.id + "' is empty");
    for (const auto& obs : cluster.observations) {
      if (!(obs.time > 0.0) || !std::isfinite(obs.time))
        throw ValidationError("cluster '" + cluster.id +
                              "': time must be strictly positive and finite");
      if (obs.status != 0 && obs.status != 1)
        throw ValidationError("cluster '" + cluster.id +
                              "': status outside {0,1}");
      if (obs.covariates.size() != data.p)
        throw ValidationError("cluster '" + cluster.id +
                              "': covariate length differs from p");
      if (obs.covariates[0] != 1.0)
        throw ValidationError("cluster '" + cluster.id +
                              "': intercept element must equal 1");
      for (double v : obs.covariates)
        if (!std::isfinite(v))
          throw ValidationError("cluster '" + cluster.id +
                                "': non-finite covariate value");
    }
  }
}

/// Counts the risk set {Y >= t0} and the observed events inside it; refuses
/// the fit when there are fewer events than parameters.
inline RiskSetReport validate_for_fit(const ClusteredDataset& data,
                                      const QrlSpec& spec) {
  validate_spec(spec);
  RiskSetReport report;
  for (const auto& cluster : data.clusters) {
    for (const auto& obs : cluster.observations) {
      if (obs.time >= spec.t0) {
        ++report.risk_set_size;
        if (obs.status == 1) ++report.events_in_risk_set;
      }
    }
  }
  if (report.risk_set_size == 0)
    throw ValidationError("empty risk set at t0");
  if (report.events_in_risk_set < data.p)
    throw ValidationError("fewer events in the risk set than parameters");
  return report;
}

}  // namespace qrl

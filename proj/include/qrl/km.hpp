#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <vector>

#include "qrl/types.hpp"

// Product-limit estimation of the censoring survival function G (the
// Kaplan-Meier estimator applied to the flipped indicator 1 - status) and its
// multiplier-perturbed variant G*.

namespace qrl {

/// Right-continuous step function: `values[k]` is the survival probability
/// just after `jump_times[k]`; survival before the first jump is 1.
struct KmCurve {
  std::vector<double> jump_times;  // strictly increasing
  std::vector<double> values;      // non-increasing, within [0,1)
};

/// Evaluates the curve at t, including a jump located exactly at t; beyond
/// the last jump the final plateau extends indefinitely.
inline double survival_at(const KmCurve& curve, double t) {
  if (!(t >= 0.0)) throw ValidationError("survival_at: t must be nonnegative");
  const auto it = std::upper_bound(curve.jump_times.begin(),
                                   curve.jump_times.end(), t);
  if (it == curve.jump_times.begin()) return 1.0;
  return curve.values[static_cast<std::size_t>(it - curve.jump_times.begin()) -
                      1];
}

namespace detail {

/// Sort order and tie groups for a dataset's observed times, cached so the
/// perturbed curve can be rebuilt in O(N) per multiplier draw.
struct KmPrep {
  std::vector<double> time;            // per observation, flattened
  std::vector<int> status;             // per observation
  std::vector<std::size_t> cluster;    // cluster index per observation
  std::vector<std::size_t> order;      // observation indices, time ascending
  std::vector<std::size_t> group_end;  // exclusive end in `order` per tie group
  std::size_t n_clusters = 0;
};

inline KmPrep make_km_prep(const ClusteredDataset& data) {
  KmPrep prep;
  prep.n_clusters = data.clusters.size();
  for (std::size_t i = 0; i < data.clusters.size(); ++i) {
    for (const auto& obs : data.clusters[i].observations) {
      prep.time.push_back(obs.time);
      prep.status.push_back(obs.status);
      prep.cluster.push_back(i);
    }
  }
  prep.order.resize(prep.time.size());
  std::iota(prep.order.begin(), prep.order.end(), std::size_t{0});
  std::stable_sort(prep.order.begin(), prep.order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return prep.time[a] < prep.time[b];
                   });
  for (std::size_t k = 0; k < prep.order.size();) {
    std::size_t e = k + 1;
    while (e < prep.order.size() &&
           prep.time[prep.order[e]] == prep.time[prep.order[k]])
      ++e;
    prep.group_end.push_back(e);
    k = e;
  }
  return prep;
}

/// Weighted product-limit pass. At a tied time the at-risk mass includes
/// every observation at that time; only censored mass contributes a jump.
inline KmCurve km_from_prep(const KmPrep& prep,
                            const std::vector<double>& obs_weights) {
  KmCurve curve;
  double at_risk = 0.0;
  for (std::size_t idx : prep.order) at_risk += obs_weights[idx];
  double survival = 1.0;
  std::size_t begin = 0;
  for (std::size_t group_end : prep.group_end) {
    double group_mass = 0.0;
    double censored_mass = 0.0;
    for (std::size_t k = begin; k < group_end; ++k) {
      const std::size_t idx = prep.order[k];
      group_mass += obs_weights[idx];
      if (prep.status[idx] == 0) censored_mass += obs_weights[idx];
    }
    if (censored_mass > 0.0 && at_risk > 0.0) {
      double factor = 1.0 - censored_mass / at_risk;
      if (factor < 0.0) factor = 0.0;
      survival *= factor;
      curve.jump_times.push_back(prep.time[prep.order[begin]]);
      curve.values.push_back(survival);
    }
    at_risk -= group_mass;
    begin = group_end;
  }
  return curve;
}

inline std::vector<double> expand_cluster_multipliers(
    const KmPrep& prep, const std::vector<double>& multipliers) {
  std::vector<double> weights(prep.time.size());
  for (std::size_t i = 0; i < weights.size(); ++i)
    weights[i] = multipliers[prep.cluster[i]];
  return weights;
}

}  // namespace detail

/// Kaplan-Meier estimate of the censoring survival function over the pooled
/// sample (jumps at censored times only).
inline KmCurve fit_censoring_survival(const ClusteredDataset& data) {
  const auto prep = detail::make_km_prep(data);
  return detail::km_from_prep(prep,
                              std::vector<double>(prep.time.size(), 1.0));
}

/// Perturbed variant G*: each observation's contribution to the counting and
/// at-risk processes is scaled by its cluster's multiplier.
inline KmCurve fit_censoring_survival(const ClusteredDataset& data,
                                      const std::vector<double>& multipliers) {
  const auto prep = detail::make_km_prep(data);
  if (multipliers.size() != prep.n_clusters)
    throw ValidationError(
        "fit_censoring_survival: one multiplier per cluster required");
  for (double g : multipliers)
    if (!(g > 0.0))
      throw ValidationError(
          "fit_censoring_survival: multipliers must be positive");
  return detail::km_from_prep(
      prep, detail::expand_cluster_multipliers(prep, multipliers));
}

}  // namespace qrl

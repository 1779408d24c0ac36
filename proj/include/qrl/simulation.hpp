#pragma once

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "qrl/copula.hpp"
#include "qrl/estimator.hpp"
#include "qrl/km.hpp"
#include "qrl/parallel.hpp"
#include "qrl/rng.hpp"
#include "qrl/stats.hpp"
#include "qrl/types.hpp"
#include "qrl/variance.hpp"

namespace qrl {

/// One of the eight benchmark data-generating designs. Presets fill the
/// family, dependence level and regression constants; n, m, grids, the
/// dependence level and the censoring bound can be overridden afterwards.
struct ScenarioSpec {
  int id = 1;
  std::size_t n = 200;  // clusters
  std::size_t m = 3;    // observations per cluster
  std::vector<double> taus{0.5};
  std::vector<double> t0s{0.0};
  CopulaFamily copula = CopulaFamily::clayton;
  double kendall_tau = 0.5;
  double ar1_rho = 0.7;           // gaussian-family correlation decay
  double lambda = 0.69;           // rate of the exponential error scale
  std::vector<double> beta;       // intercept first
  double sigma = 0.5;             // scenario 3 error scale
  double t_m = 1.0;               // scenario 3 time shift
  double a = 0.1;                 // scenario 4 heteroscedasticity level
  double censoring_bound = 20.0;  // +infinity disables censoring
};

inline ScenarioSpec scenario_preset(int id) {
  ScenarioSpec s;
  s.id = id;
  switch (id) {
    case 1:
    case 2:
      s.beta = {1.0, 1.0};
      break;
    case 3:
      s.beta = {1.0, 0.0};
      break;
    case 4:
      s.lambda = 2.0;
      s.beta = {1.0, 2.0};
      break;
    case 5:
      s.copula = CopulaFamily::frank;
      s.beta = {1.0, 1.0};
      break;
    case 6:
      s.copula = CopulaFamily::gaussian;
      s.lambda = 1.0;
      s.beta = {1.0, 1.0};
      break;
    case 7:
      s.copula = CopulaFamily::gaussian;
      s.beta = {0.5, 1.0};
      break;
    case 8:
      s.beta = {0.6, 0.6, 0.8, 0.4};
      break;
    default:
      throw ValidationError("scenario id must be between 1 and 8");
  }
  return s;
}

inline std::size_t scenario_p(int id) { return id == 8 ? 4 : 2; }

inline void validate_scenario(const ScenarioSpec& spec) {
  if (spec.id < 1 || spec.id > 8)
    throw ValidationError("scenario id must be between 1 and 8");
  if (spec.n < 2) throw ValidationError("scenario needs at least 2 clusters");
  if (spec.m < 1)
    throw ValidationError("scenario needs a positive cluster size");
  if (spec.taus.empty() || spec.t0s.empty())
    throw ValidationError("scenario needs nonempty tau and t0 grids");
  for (double tau : spec.taus)
    if (!(tau > 0.0 && tau < 1.0))
      throw ValidationError("tau values must lie in (0, 1)");
  for (double t0 : spec.t0s)
    if (!(t0 >= 0.0) || !std::isfinite(t0))
      throw ValidationError("t0 values must be finite and nonnegative");
  if (!(spec.lambda > 0.0))
    throw ValidationError("error rate lambda must be positive");
  if (spec.beta.size() != scenario_p(spec.id))
    throw ValidationError("scenario coefficient count mismatch");
  if (!(spec.sigma > 0.0)) throw ValidationError("sigma must be positive");
  if (!(spec.t_m >= 0.0)) throw ValidationError("t_m must be nonnegative");
  if (!(spec.a >= 0.0 && spec.a < 1.0))
    throw ValidationError("heteroscedasticity level a must lie in [0, 1)");
  if (!(spec.censoring_bound > 0.0))
    throw ValidationError("censoring bound must be positive");
}

namespace detail {

inline CopulaSpec scenario_copula_spec(const ScenarioSpec& spec) {
  CopulaSpec cs;
  cs.family = spec.copula;
  cs.kendall_tau = spec.kendall_tau;
  if (spec.copula == CopulaFamily::gaussian)
    cs.correlation = ar1_correlation(spec.m, spec.ar1_rho);
  else if (spec.kendall_tau == 0.0)
    cs.family = CopulaFamily::independence;
  return cs;
}

}  // namespace detail

struct GeneratedData {
  ClusteredDataset data;
  double censoring_rate = 0.0;
};

/// Draws one dataset. Streams are keyed per (seed, replicate, purpose,
/// cluster); cluster-level covariates are drawn before observation-level
/// ones, so outputs are identical for any evaluation order.
inline GeneratedData generate_scenario(const ScenarioSpec& spec,
                                       std::uint64_t seed,
                                       std::uint32_t replicate = 0) {
  validate_scenario(spec);
  const CopulaSampler sampler(detail::scenario_copula_spec(spec), spec.m);
  const std::size_t p = scenario_p(spec.id);

  GeneratedData out;
  out.data.p = p;
  out.data.covariate_names = {"(intercept)", "x1"};
  if (spec.id == 8) {
    out.data.covariate_names.push_back("x2");
    out.data.covariate_names.push_back("x3");
  }
  out.data.clusters.reserve(spec.n);

  std::size_t censored = 0;
  for (std::size_t i = 0; i < spec.n; ++i) {
    const auto unit = static_cast<std::uint32_t>(i);
    Rng cov_rng(seed, replicate, Stream::covariates, unit);
    Rng cop_rng(seed, replicate, Stream::copula, unit);
    Rng cen_rng(seed, replicate, Stream::censoring, unit);

    // cluster-level covariates
    double x_cluster = 0.0;
    double x2_cluster = 0.0;
    switch (spec.id) {
      case 2:
      case 3:
      case 5:
      case 6:
        x_cluster = cov_rng.uniform();
        break;
      case 4:
      case 7:
        x_cluster = cov_rng.bernoulli(0.5) ? 1.0 : 0.0;
        break;
      case 8:
        x_cluster = cov_rng.bernoulli(0.5) ? 1.0 : 0.0;
        x2_cluster = cov_rng.uniform();
        break;
      default:
        break;  // scenario 1 is observation-level only
    }

    const Eigen::VectorXd u = sampler.draw(cop_rng);

    Cluster cluster;
    cluster.id = std::to_string(i + 1);
    cluster.observations.reserve(spec.m);
    for (std::size_t j = 0; j < spec.m; ++j) {
      Observation obs;
      obs.cluster_id = cluster.id;
      obs.covariates.assign(p, 1.0);
      double linear = spec.beta[0];
      double x = x_cluster;
      if (spec.id == 1) x = cov_rng.uniform();
      obs.covariates[1] = x;
      linear += spec.beta[1] * x;
      if (spec.id == 8) {
        const double x3 = cov_rng.normal();
        obs.covariates[2] = x2_cluster;
        obs.covariates[3] = x3;
        linear += spec.beta[2] * x2_cluster + spec.beta[3] * x3;
      }

      const double uj = u[static_cast<Eigen::Index>(j)];
      double t = 0.0;
      switch (spec.id) {
        case 3: {
          // log(T - t_m) = linear + sigma * logistic error
          const double eps = std::log(uj / (1.0 - uj));
          t = spec.t_m + std::exp(linear + spec.sigma * eps);
          break;
        }
        case 4: {
          // exp(error) ~ Exp(lambda); exponent shrinks with x
          const double e = -std::log1p(-uj) / spec.lambda;
          t = std::exp(linear) * std::pow(e, 1.0 - spec.a * x);
          break;
        }
        case 7: {
          // normal error with standard deviation 0.8
          t = std::exp(linear + 0.8 * normal_quantile(uj));
          break;
        }
        default: {
          const double e = -std::log1p(-uj) / spec.lambda;
          t = std::exp(linear) * e;
          break;
        }
      }

      double c = std::numeric_limits<double>::infinity();
      if (std::isfinite(spec.censoring_bound))
        c = spec.censoring_bound * cen_rng.uniform();
      obs.time = std::min(t, c);
      obs.status = t <= c ? 1 : 0;
      if (obs.status == 0) ++censored;
      cluster.observations.push_back(obs);
    }
    out.data.clusters.push_back(cluster);
  }
  out.censoring_rate =
      static_cast<double>(censored) / static_cast<double>(spec.n * spec.m);
  return out;
}

/// Closed-form coefficients of the residual-quantile model implied by each
/// generating design, exactly as displayed.
inline Eigen::VectorXd true_coefficients(const ScenarioSpec& spec, double tau,
                                         double t0) {
  validate_scenario(spec);
  if (!(tau > 0.0 && tau < 1.0))
    throw ValidationError("tau must lie in (0, 1)");
  if (!(t0 >= 0.0) || !std::isfinite(t0))
    throw ValidationError("t0 must be finite and nonnegative");
  const std::size_t p = scenario_p(spec.id);
  Eigen::VectorXd alpha(static_cast<Eigen::Index>(p));
  const double log_q = std::log(-std::log1p(-tau) / spec.lambda);

  switch (spec.id) {
    case 1:
    case 2:
    case 5:
    case 6:
    case 8: {
      alpha[0] = log_q + spec.beta[0];
      for (std::size_t j = 1; j < p; ++j)
        alpha[static_cast<Eigen::Index>(j)] = spec.beta[j];
      return alpha;
    }
    case 3: {
      const double b0 = spec.beta[0];
      const double logit = std::log(tau / (1.0 - tau));
      double value;
      if (t0 <= spec.t_m) {
        value = std::exp(spec.sigma * logit + b0) - t0 + spec.t_m;
      } else {
        const double base =
            (tau + std::exp(-b0 / spec.sigma) *
                       std::pow(t0 - spec.t_m, 1.0 / spec.sigma)) /
            (1.0 - tau);
        value = std::pow(base, spec.sigma) * std::exp(b0) - t0 + spec.t_m;
      }
      alpha[0] = std::log(value);
      alpha[1] = 0.0;
      return alpha;
    }
    case 4: {
      alpha[0] = log_q + spec.beta[0];
      if (t0 == 0.0) {
        alpha[1] = -spec.a * log_q + spec.beta[1];
      } else {
        const double one_a = 1.0 - spec.a;
        const double inner =
            1.0 - std::log1p(-tau) / spec.lambda *
                      std::pow(t0, -1.0 / one_a) *
                      std::exp((spec.beta[0] + spec.beta[1]) / one_a);
        const double numer = t0 * std::pow(inner, one_a) - t0;
        const double denom =
            -std::log1p(-tau) / spec.lambda * std::exp(spec.beta[0]);
        alpha[1] = std::log(numer / denom);
      }
      return alpha;
    }
    case 7: {
      const double b0 = spec.beta[0];
      const double b1 = spec.beta[1];
      const auto cdf08 = [](double z) { return normal_cdf(z / 0.8); };
      const auto quantile08 = [](double q) {
        return 0.8 * normal_quantile(q);
      };
      if (t0 == 0.0) {
        alpha[0] = b0 + quantile08(tau);
        alpha[1] = b1;
      } else {
        const auto branch = [&](double shift) {
          const double q =
              (1.0 - tau) * cdf08(std::log(t0) - shift) + tau;
          return -t0 + std::exp(shift + quantile08(q));
        };
        alpha[0] = std::log(branch(b0));
        alpha[1] = std::log(branch(b0 + b1) / branch(b0));
      }
      return alpha;
    }
    default:
      throw ValidationError("scenario id must be between 1 and 8");
  }
}

struct MethodCellSummary {
  VarianceMethod method = VarianceMethod::fr;
  Eigen::VectorXd ase;      // mean standard error per coefficient
  Eigen::VectorXd cp;       // 95% CI coverage of the truth
  Eigen::VectorXd reject0;  // rejection rate of H0: alpha_j = 0 at 5%
  std::size_t failures = 0;
  double mean_runtime = 0.0;  // seconds per replicate, excluded from
                              // deterministic exports by default
};

struct CellSummary {
  double tau = 0.5;
  double t0 = 0.0;
  Eigen::VectorXd truth;
  Eigen::VectorXd bias;
  Eigen::VectorXd mcsd;
  std::size_t fit_failures = 0;
  bool flagged = false;
  std::vector<MethodCellSummary> methods;
};

struct SummaryTable {
  int scenario_id = 1;
  std::size_t n = 0;
  std::size_t m = 0;
  std::size_t reps = 0;
  std::size_t B = 0;
  std::uint64_t seed = 0;
  double mean_censoring_rate = 0.0;
  std::vector<std::string> coefficient_names;  // alpha0, alpha1, ...
  std::vector<CellSummary> cells;              // t0-major, tau-minor
};

/// Full evaluation loop: per replicate, generate, fit every grid cell, and
/// run every requested variance method; aggregate bias/MCSD/ASE/CP and the
/// 5%-level rejection rate of each zero-coefficient hypothesis. Replicates
/// run in parallel; per-replicate results land in slots and are reduced in
/// index order, so the table is identical for any worker count.
inline SummaryTable run_monte_carlo(const ScenarioSpec& spec,
                                    std::size_t reps,
                                    const std::vector<VarianceMethod>& methods,
                                    std::size_t B, std::uint64_t seed,
                                    unsigned workers = 1) {
  validate_scenario(spec);
  if (reps < 2) throw ValidationError("monte carlo needs reps >= 2");
  const std::size_t p = scenario_p(spec.id);
  const std::size_t n_cells = spec.t0s.size() * spec.taus.size();

  struct MethodRecord {
    bool ok = false;
    Eigen::VectorXd se;
    double runtime = 0.0;
  };
  struct CellRecord {
    bool fit_ok = false;
    Eigen::VectorXd alpha;
    std::vector<MethodRecord> methods;
  };
  struct ReplicateRecord {
    double censoring_rate = 0.0;
    std::vector<CellRecord> cells;
  };
  std::vector<ReplicateRecord> records(reps);

  parallel_for(reps, workers, [&](std::size_t r) {
    ReplicateRecord& rec = records[r];
    rec.cells.resize(n_cells);
    const auto rep = static_cast<std::uint32_t>(r);
    const GeneratedData gen = generate_scenario(spec, seed, rep);
    rec.censoring_rate = gen.censoring_rate;
    const detail::FlatData flat = detail::flatten(gen.data);

    std::size_t cell_index = 0;
    for (double t0 : spec.t0s) {
      for (double tau : spec.taus) {
        CellRecord& cell = rec.cells[cell_index];
        cell.methods.resize(methods.size());
        const QrlSpec cell_spec{tau, t0};
        FitResult fit;
        try {
          fit = detail::fit_qrl_flat(
              flat, cell_spec,
              detail::km_from_prep(flat.km_prep,
                                   std::vector<double>(flat.time.size(), 1.0)),
              detail::risk_set_report(flat, t0), FitOptions{});
          cell.fit_ok = true;
          cell.alpha = fit.alpha_hat;
        } catch (const std::exception&) {
          cell.fit_ok = false;
        }
        for (std::size_t mi = 0; mi < methods.size() && cell.fit_ok; ++mi) {
          MethodRecord& mrec = cell.methods[mi];
          const auto method_ordinal =
              static_cast<std::uint32_t>(methods[mi]);
          ResampleOptions ro;
          ro.B = B;
          ro.seed = derive_seed(
              seed, rep,
              static_cast<std::uint32_t>(cell_index) * 8u + method_ordinal);
          const auto start = std::chrono::steady_clock::now();
          try {
            CovarianceEstimate est;
            switch (methods[mi]) {
              case VarianceMethod::fr:
                est = detail::resampled_covariance(flat, cell_spec, ro, false,
                                                   VarianceMethod::fr);
                break;
              case VarianceMethod::ifr:
                est = detail::resampled_covariance(flat, cell_spec, ro, true,
                                                   VarianceMethod::ifr);
                break;
              case VarianceMethod::cfs:
                est = detail::variance_cfs_flat(flat, cell_spec,
                                                fit.alpha_hat, ro.solver);
                break;
              case VarianceMethod::rbs:
                est = detail::variance_rbs_flat(flat, cell_spec,
                                                fit.alpha_hat, ro);
                break;
            }
            mrec.se = est.standard_errors();
            mrec.ok = true;
          } catch (const std::exception&) {
            mrec.ok = false;
          }
          mrec.runtime = std::chrono::duration<double>(
                             std::chrono::steady_clock::now() - start)
                             .count();
        }
        ++cell_index;
      }
    }
  });

  SummaryTable table;
  table.scenario_id = spec.id;
  table.n = spec.n;
  table.m = spec.m;
  table.reps = reps;
  table.B = B;
  table.seed = seed;
  for (std::size_t j = 0; j < p; ++j)
    table.coefficient_names.push_back("alpha" + std::to_string(j));
  for (const auto& rec : records)
    table.mean_censoring_rate += rec.censoring_rate;
  table.mean_censoring_rate /= static_cast<double>(reps);

  const double z95 = normal_quantile(0.975);
  std::size_t cell_index = 0;
  for (double t0 : spec.t0s) {
    for (double tau : spec.taus) {
      CellSummary cell;
      cell.tau = tau;
      cell.t0 = t0;
      cell.truth = true_coefficients(spec, tau, t0);

      std::vector<const CellRecord*> fitted;
      for (const auto& rec : records)
        if (rec.cells[cell_index].fit_ok)
          fitted.push_back(&rec.cells[cell_index]);
      cell.fit_failures = reps - fitted.size();

      const auto pi = static_cast<Eigen::Index>(p);
      cell.bias = Eigen::VectorXd::Zero(pi);
      cell.mcsd = Eigen::VectorXd::Zero(pi);
      if (fitted.size() >= 2) {
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(pi);
        for (const auto* c : fitted) mean += c->alpha;
        mean /= static_cast<double>(fitted.size());
        Eigen::VectorXd ss = Eigen::VectorXd::Zero(pi);
        for (const auto* c : fitted)
          ss += (c->alpha - mean).cwiseAbs2();
        cell.bias = mean - cell.truth;
        cell.mcsd = (ss / static_cast<double>(fitted.size() - 1)).cwiseSqrt();
      }

      for (std::size_t mi = 0; mi < methods.size(); ++mi) {
        MethodCellSummary ms;
        ms.method = methods[mi];
        ms.ase = Eigen::VectorXd::Zero(pi);
        ms.cp = Eigen::VectorXd::Zero(pi);
        ms.reject0 = Eigen::VectorXd::Zero(pi);
        std::size_t ok_count = 0;
        double runtime_sum = 0.0;
        std::size_t runtime_count = 0;
        for (const auto* c : fitted) {
          const MethodRecord& mrec = c->methods[mi];
          runtime_sum += mrec.runtime;
          ++runtime_count;
          if (!mrec.ok) continue;
          ++ok_count;
          ms.ase += mrec.se;
          for (Eigen::Index j = 0; j < pi; ++j) {
            const double se = mrec.se[j];
            if (std::abs(c->alpha[j] - cell.truth[j]) <= z95 * se)
              ms.cp[j] += 1.0;
            if (se > 0.0) {
              const double w = (c->alpha[j] / se) * (c->alpha[j] / se);
              if (chi_square_sf(w, 1.0) < 0.05) ms.reject0[j] += 1.0;
            }
          }
        }
        ms.failures = reps - ok_count;
        if (ok_count > 0) {
          ms.ase /= static_cast<double>(ok_count);
          ms.cp /= static_cast<double>(ok_count);
          ms.reject0 /= static_cast<double>(ok_count);
        }
        if (runtime_count > 0)
          ms.mean_runtime = runtime_sum / static_cast<double>(runtime_count);
        if (ms.failures * 10 > reps) cell.flagged = true;
        cell.methods.push_back(ms);
      }
      if (cell.fit_failures * 10 > reps) cell.flagged = true;
      table.cells.push_back(cell);
      ++cell_index;
    }
  }
  return table;
}

namespace detail {

inline std::string format_stat(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace detail

/// Metadata comment line, then one row per (coefficient, t0, tau) with the
/// per-method ASE/CP columns. Runtime columns are opt-in because wall-clock
/// values would break the byte-identical-output contract.
inline void write_summary_csv(const SummaryTable& table, std::ostream& out,
                              bool include_runtime = false) {
  out << "# scenario=" << table.scenario_id << " n=" << table.n
      << " m=" << table.m << " reps=" << table.reps << " B=" << table.B
      << " seed=" << table.seed
      << " censoring=" << detail::format_stat(table.mean_censoring_rate)
      << "\n";
  for (const auto& cell : table.cells)
    if (cell.flagged)
      out << "# flagged: tau=" << detail::format_stat(cell.tau)
          << " t0=" << detail::format_stat(cell.t0)
          << " (over 10% of replicates failed)\n";

  out << "coef,t0,tau,bias,mcsd";
  const std::vector<MethodCellSummary>* methods =
      table.cells.empty() ? nullptr : &table.cells.front().methods;
  if (methods)
    for (const auto& ms : *methods) {
      const char* name = variance_method_name(ms.method);
      out << ",ase_" << name << ",cp_" << name << ",reject0_" << name
          << ",failures_" << name;
      if (include_runtime) out << ",runtime_" << name;
    }
  out << "\n";

  for (const auto& cell : table.cells) {
    for (std::size_t j = 0; j < table.coefficient_names.size(); ++j) {
      const auto ji = static_cast<Eigen::Index>(j);
      out << table.coefficient_names[j] << ','
          << detail::format_stat(cell.t0) << ','
          << detail::format_stat(cell.tau) << ','
          << detail::format_stat(cell.bias[ji]) << ','
          << detail::format_stat(cell.mcsd[ji]);
      for (const auto& ms : cell.methods) {
        out << ',' << detail::format_stat(ms.ase[ji]) << ','
            << detail::format_stat(ms.cp[ji]) << ','
            << detail::format_stat(ms.reject0[ji]) << ',' << ms.failures;
        if (include_runtime)
          out << ',' << detail::format_stat(ms.mean_runtime);
      }
      out << "\n";
    }
  }
}

inline void write_summary_csv(const SummaryTable& table,
                              const std::string& path,
                              bool include_runtime = false) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot open output file: " + path);
  write_summary_csv(table, out, include_runtime);
}

}  // namespace qrl

#pragma once

#include <sys/wait.h>
#include <unistd.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "qrl/types.hpp"
#include "qrl/wqr.hpp"

namespace qrl::testing {

// Rows arrive in file order; clusters are grouped by first appearance,
// mirroring the CSV loader.
inline ClusteredDataset make_dataset(
    const std::vector<std::string>& ids, const std::vector<double>& times,
    const std::vector<int>& statuses,
    const std::vector<std::vector<double>>& covariate_tails = {}) {
  ClusteredDataset data;
  const std::size_t tail_len =
      covariate_tails.empty() ? 0 : covariate_tails.front().size();
  data.p = 1 + tail_len;
  data.covariate_names.push_back("(intercept)");
  for (std::size_t j = 0; j < tail_len; ++j)
    data.covariate_names.push_back("x" + std::to_string(j + 1));
  for (std::size_t i = 0; i < times.size(); ++i) {
    Observation obs;
    obs.cluster_id = ids[i];
    obs.time = times[i];
    obs.status = statuses[i];
    obs.covariates.push_back(1.0);
    if (!covariate_tails.empty())
      for (double v : covariate_tails[i]) obs.covariates.push_back(v);
    auto it = std::find_if(data.clusters.begin(), data.clusters.end(),
                           [&](const Cluster& c) { return c.id == ids[i]; });
    if (it == data.clusters.end())
      data.clusters.push_back(Cluster{ids[i], {obs}});
    else
      it->observations.push_back(obs);
  }
  return data;
}

// Clustered log-scale AFT data with uniform censoring. Deliberately built on
// std::mt19937_64 rather than the library generator so fits and variance
// estimates are exercised on data the library did not produce itself.
inline ClusteredDataset random_clustered(std::size_t n_clusters,
                                         std::size_t cluster_size,
                                         std::uint64_t seed,
                                         double censor_bound = 20.0,
                                         double beta1 = 1.0) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> norm(0.0, 1.0);
  std::vector<std::string> ids;
  std::vector<double> times;
  std::vector<int> statuses;
  std::vector<std::vector<double>> tails;
  for (std::size_t i = 0; i < n_clusters; ++i) {
    const double shared = norm(gen);
    for (std::size_t j = 0; j < cluster_size; ++j) {
      const double x = unif(gen);
      const double noise = 0.8 * shared + 0.6 * norm(gen);
      const double t = std::exp(1.0 + beta1 * x + 0.5 * noise);
      const double c = censor_bound * (1.0 - unif(gen));  // strictly positive
      ids.push_back(std::to_string(i + 1));
      times.push_back(std::min(t, c));
      statuses.push_back(t <= c ? 1 : 0);
      tails.push_back({x});
    }
  }
  return make_dataset(ids, times, statuses, tails);
}

inline ClusteredDataset uncensored_clustered(std::size_t n_clusters,
                                             std::size_t cluster_size,
                                             std::uint64_t seed,
                                             double beta1 = 1.0) {
  return random_clustered(n_clusters, cluster_size, seed,
                          std::numeric_limits<double>::infinity(), beta1);
}

// The weighted check-loss LP attains its minimum at a vertex interpolating p
// rows whenever the positive-weight design has full column rank; enumerating
// every 1- or 2-row interpolation therefore visits an optimal point.
inline double brute_force_wqr_objective(const WqrProblem& problem) {
  const Eigen::Index m = problem.responses.size();
  const Eigen::Index p = problem.design.cols();
  if (p > 2) throw std::invalid_argument("oracle supports p <= 2 only");
  double best = std::numeric_limits<double>::infinity();
  if (p == 1) {
    for (Eigen::Index k = 0; k < m; ++k) {
      if (problem.design(k, 0) == 0.0) continue;
      Eigen::VectorXd alpha(1);
      alpha[0] = problem.responses[k] / problem.design(k, 0);
      best = std::min(best, wqr_objective(problem, alpha));
    }
  } else {
    for (Eigen::Index a = 0; a < m; ++a) {
      for (Eigen::Index b = a + 1; b < m; ++b) {
        Eigen::Matrix2d d;
        d.row(0) = problem.design.row(a);
        d.row(1) = problem.design.row(b);
        if (std::abs(d.determinant()) < 1e-12) continue;
        const Eigen::Vector2d r(problem.responses[a], problem.responses[b]);
        const Eigen::Vector2d alpha = d.fullPivLu().solve(r);
        best = std::min(best, wqr_objective(problem, Eigen::VectorXd(alpha)));
      }
    }
  }
  return best;
}

// Random problems sized for the vertex-enumeration oracle: M <= 12, p <= 2,
// an intercept column, a sprinkling of zero weights, tau away from {0,1}.
inline WqrProblem random_small_problem(std::mt19937_64& gen) {
  std::uniform_int_distribution<int> p_dist(1, 2);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> norm(0.0, 1.0);
  for (;;) {
    const int p = p_dist(gen);
    std::uniform_int_distribution<int> m_dist(p + 1, 12);
    const int m = m_dist(gen);
    WqrProblem problem;
    problem.tau = 0.05 + 0.9 * unif(gen);
    problem.responses.resize(m);
    problem.design.resize(m, p);
    problem.weights.resize(m);
    for (int k = 0; k < m; ++k) {
      problem.responses[k] = 2.0 * norm(gen);
      problem.design(k, 0) = 1.0;
      if (p == 2) problem.design(k, 1) = norm(gen);
      problem.weights[k] = unif(gen) < 0.15 ? 0.0 : std::exp(0.5 * norm(gen));
    }
    // the solver precondition: full column rank on positive-weight rows
    std::vector<int> positive;
    for (int k = 0; k < m; ++k)
      if (problem.weights[k] > 0.0) positive.push_back(k);
    if (positive.size() < static_cast<std::size_t>(p)) continue;
    if (p == 2) {
      double lo = std::numeric_limits<double>::infinity();
      double hi = -lo;
      for (int k : positive) {
        lo = std::min(lo, problem.design(k, 1));
        hi = std::max(hi, problem.design(k, 1));
      }
      if (hi - lo < 1e-6) continue;
    }
    return problem;
  }
}

inline double empirical_kendall(const Eigen::MatrixXd& u, Eigen::Index col_a,
                                Eigen::Index col_b) {
  const Eigen::Index n = u.rows();
  long long net = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double s = (u(i, col_a) - u(j, col_a)) * (u(i, col_b) - u(j, col_b));
      if (s > 0.0)
        ++net;
      else if (s < 0.0)
        --net;
    }
  }
  return static_cast<double>(net) /
         (0.5 * static_cast<double>(n) * static_cast<double>(n - 1));
}

inline double ks_statistic_uniform(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  double stat = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double hi = (static_cast<double>(i) + 1.0) / n - values[i];
    const double lo = values[i] - static_cast<double>(i) / n;
    stat = std::max(stat, std::max(hi, lo));
  }
  return stat;
}

// 0.1% asymptotic critical value c(alpha) = sqrt(-ln(alpha/2)/2) = 1.9495
inline bool ks_uniform_ok(const std::vector<double>& values) {
  return ks_statistic_uniform(values) <=
         1.9495 / std::sqrt(static_cast<double>(values.size()));
}

class TempDir {
 public:
  TempDir() {
    std::string templ =
        (std::filesystem::temp_directory_path() / "qrl-test-XXXXXX").string();
    std::vector<char> buf(templ.begin(), templ.end());
    buf.push_back('\0');
    if (mkdtemp(buf.data()) == nullptr)
      throw std::runtime_error("mkdtemp failed");
    path_ = buf.data();
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  std::string file(const std::string& name) const {
    return (std::filesystem::path(path_) / name).string();
  }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

inline void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << content;
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct CommandResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

inline CommandResult run_command(const std::string& command,
                                 const TempDir& dir, const std::string& tag) {
  const std::string out_path = dir.file(tag + ".stdout");
  const std::string err_path = dir.file(tag + ".stderr");
  const std::string full =
      command + " >" + out_path + " 2>" + err_path;
  const int raw = std::system(full.c_str());
  CommandResult result;
  if (raw != -1 && WIFEXITED(raw)) result.exit_code = WEXITSTATUS(raw);
  result.out = read_text(out_path);
  result.err = read_text(err_path);
  return result;
}

inline std::string cli_binary_from_env() {
  const char* env = std::getenv("QRL_CLI_BIN");
  if (env == nullptr || *env == '\0')
    throw std::runtime_error(
        "QRL_CLI_BIN is not set; run through ctest or export it manually");
  return env;
}

}  // namespace qrl::testing

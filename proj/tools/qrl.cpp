// Command-line front end: fit residual-quantile models on CSV data, predict
// from saved fits, and run the simulation harness.

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "qrl/qrl.hpp"

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> parse_double_list(const std::string& text,
                                      const std::string& flag) {
  std::vector<double> out;
  for (const auto& item : split_list(text)) {
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(item.c_str(), &end);
    if (errno != 0 || end == item.c_str() || *end != '\0')
      throw UsageError("invalid number '" + item + "' in " + flag);
    out.push_back(v);
  }
  if (out.empty()) throw UsageError(flag + " needs at least one value");
  return out;
}

std::vector<qrl::VarianceMethod> parse_methods(const std::string& text) {
  std::vector<qrl::VarianceMethod> out;
  for (const auto& item : split_list(text)) {
    try {
      out.push_back(qrl::variance_method_from_name(item));
    } catch (const qrl::ValidationError& e) {
      throw UsageError(e.what());
    }
  }
  return out;
}

qrl::CsvSchema parse_schema(const std::string& text) {
  qrl::CsvSchema schema;
  for (const auto& item : split_list(text)) {
    const auto eq = item.find('=');
    if (eq == std::string::npos)
      throw UsageError("--schema entries must look like key=column");
    const std::string key = item.substr(0, eq);
    const std::string value = item.substr(eq + 1);
    if (key == "cluster")
      schema.cluster = value;
    else if (key == "time")
      schema.time = value;
    else if (key == "status")
      schema.status = value;
    else
      throw UsageError("unknown --schema key '" + key + "'");
  }
  return schema;
}

unsigned resolve_threads(int flag_value) {
  if (flag_value > 0) return static_cast<unsigned>(flag_value);
  if (const char* env = std::getenv("QRL_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<unsigned>(v);
  }
  return qrl::default_workers();
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& seed,
                           bool strict) {
  if (seed) return *seed;
  if (strict)
    throw UsageError("randomized runs require an explicit --seed when "
                     "--strict is set");
  std::random_device device;
  const std::uint64_t generated =
      (static_cast<std::uint64_t>(device()) << 32) ^ device();
  std::cerr << "generated seed: " << generated << "\n";
  return generated;
}

void write_file_atomically(const std::string& path,
                           const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw qrl::ValidationError("cannot open output file: " + tmp);
    out << content;
    if (!out) throw qrl::ValidationError("failed writing: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw qrl::ValidationError("cannot rename " + tmp + " to " + path +
                               ": " + std::strerror(errno));
}

int run_fit(const std::string& data_path, const std::string& schema_text,
            const std::string& covariates_text, const std::string& tau_text,
            const std::string& t0_text, const std::string& variance_text,
            std::size_t B, const std::optional<std::uint64_t>& seed_flag,
            bool strict, double level, int threads,
            const std::string& out_path) {
  qrl::CsvSchema schema = parse_schema(schema_text);
  if (!covariates_text.empty()) schema.covariates = split_list(covariates_text);
  const std::vector<double> taus = parse_double_list(tau_text, "--tau");
  const std::vector<double> t0s = parse_double_list(t0_text, "--t0");
  const std::vector<qrl::VarianceMethod> methods =
      variance_text.empty() ? std::vector<qrl::VarianceMethod>{}
                            : parse_methods(variance_text);

  std::optional<std::uint64_t> seed;
  if (!methods.empty()) seed = resolve_seed(seed_flag, strict);

  const qrl::ClusteredDataset data = qrl::load_dataset(data_path, schema);

  nlohmann::json doc;
  doc["covariates"] = data.covariate_names;
  if (seed) doc["seed"] = *seed;
  doc["cells"] = nlohmann::json::array();

  const unsigned workers = resolve_threads(threads);
  std::size_t cell_index = 0;
  for (double t0 : t0s) {
    for (double tau : taus) {
      const qrl::QrlSpec spec{tau, t0};
      const qrl::FitResult fit = qrl::fit_qrl(data, spec);
      nlohmann::json cell = qrl::fit_to_json(fit);
      cell["variance"] = nlohmann::json::array();
      for (const qrl::VarianceMethod method : methods) {
        qrl::ResampleOptions options;
        options.B = B;
        options.workers = workers;
        options.seed = qrl::derive_seed(
            *seed, static_cast<std::uint32_t>(cell_index),
            static_cast<std::uint32_t>(method));
        const qrl::CovarianceEstimate est =
            qrl::estimate_covariance(data, spec, fit, method, options);
        nlohmann::json var = qrl::covariance_to_json(est);
        var["ci"] = nlohmann::json::array();
        for (const auto& ci :
             qrl::coefficient_cis(fit.alpha_hat, est, level))
          var["ci"].push_back(qrl::ci_to_json(ci));
        var["wald"] = nlohmann::json::array();
        for (std::size_t j = 0; j < data.p; ++j) {
          const qrl::WaldResult wald = qrl::wald_test(
              fit.alpha_hat, est, Eigen::VectorXd::Zero(1), {j});
          var["wald"].push_back(qrl::wald_to_json(wald));
        }
        cell["variance"].push_back(var);
      }
      doc["cells"].push_back(cell);
      ++cell_index;
    }
  }

  write_file_atomically(out_path, doc.dump(2) + "\n");
  return 0;
}

struct ProfileTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

ProfileTable load_profiles(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw qrl::ValidationError("cannot open profiles file: " + path);
  std::string line;
  if (!std::getline(in, line))
    throw qrl::ValidationError("profiles file is empty: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  ProfileTable table;
  table.columns = split_list(line);
  if (table.columns.empty())
    throw qrl::ValidationError("profiles file needs a header row");
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> row;
    for (const auto& item : split_list(line)) {
      char* end = nullptr;
      errno = 0;
      const double v = std::strtod(item.c_str(), &end);
      if (errno != 0 || end == item.c_str() || *end != '\0')
        throw qrl::ValidationError("profiles line " +
                                   std::to_string(line_no) +
                                   ": non-numeric value '" + item + "'");
      row.push_back(v);
    }
    if (row.size() != table.columns.size())
      throw qrl::ValidationError("profiles line " + std::to_string(line_no) +
                                 ": expected " +
                                 std::to_string(table.columns.size()) +
                                 " values");
    table.rows.push_back(row);
  }
  if (table.rows.empty())
    throw qrl::ValidationError("profiles file has no data rows");
  return table;
}

int run_predict(const std::string& fit_path, const std::string& profiles_path,
                bool rearrange, bool time_scale, const std::string& out_path) {
  std::ifstream in(fit_path);
  if (!in) throw qrl::ValidationError("cannot open fit file: " + fit_path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw qrl::ValidationError(std::string("malformed fit document: ") +
                               e.what());
  }
  if (!doc.contains("covariates") || !doc.contains("cells"))
    throw qrl::ValidationError(
        "fit document needs 'covariates' and 'cells' entries");
  const auto covariates = doc["covariates"].get<std::vector<std::string>>();
  std::vector<qrl::FitResult> cells;
  for (const auto& cell : doc["cells"])
    cells.push_back(qrl::fit_from_json(cell));
  if (cells.empty())
    throw qrl::ValidationError("fit document has no cells");

  const ProfileTable profiles = load_profiles(profiles_path);
  // map each non-intercept covariate to a profile column
  std::vector<std::size_t> source(covariates.size(), 0);
  for (std::size_t j = 1; j < covariates.size(); ++j) {
    bool found = false;
    for (std::size_t c = 0; c < profiles.columns.size(); ++c) {
      if (profiles.columns[c] == covariates[j]) {
        source[j] = c;
        found = true;
        break;
      }
    }
    if (!found)
      throw qrl::ValidationError("profiles file is missing column '" +
                                 covariates[j] + "'");
  }

  std::ostringstream out;
  out << "profile,t0,tau,theta";
  if (rearrange) out << ",theta_rearranged";
  if (time_scale) {
    out << ",remaining_time";
    if (rearrange) out << ",remaining_time_rearranged";
  }
  out << "\n";

  char buf[40];
  const auto fmt = [&buf](double v) {
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return std::string(buf);
  };

  for (std::size_t r = 0; r < profiles.rows.size(); ++r) {
    std::vector<double> x(covariates.size(), 1.0);
    for (std::size_t j = 1; j < covariates.size(); ++j)
      x[j] = profiles.rows[r][source[j]];

    // group cells by t0 in first-appearance order
    std::vector<double> t0_order;
    for (const auto& cell : cells) {
      bool seen = false;
      for (double t0 : t0_order) seen = seen || t0 == cell.t0;
      if (!seen) t0_order.push_back(cell.t0);
    }
    for (double t0 : t0_order) {
      std::vector<std::pair<double, double>> curve;  // (tau, theta)
      std::vector<const qrl::FitResult*> group;
      for (const auto& cell : cells)
        if (cell.t0 == t0) group.push_back(&cell);
      std::sort(group.begin(), group.end(),
                [](const qrl::FitResult* a, const qrl::FitResult* b) {
                  return a->tau < b->tau;
                });
      for (const auto* cell : group)
        curve.emplace_back(cell->tau,
                           qrl::predict_residual_quantile(*cell, x));
      std::vector<double> rearranged;
      if (rearrange) rearranged = qrl::rearrange_quantiles(curve);
      for (std::size_t k = 0; k < curve.size(); ++k) {
        out << (r + 1) << ',' << fmt(t0) << ',' << fmt(curve[k].first) << ','
            << fmt(curve[k].second);
        if (rearrange) out << ',' << fmt(rearranged[k]);
        if (time_scale) {
          out << ',' << fmt(std::exp(curve[k].second));
          if (rearrange) out << ',' << fmt(std::exp(rearranged[k]));
        }
        out << "\n";
      }
    }
  }

  write_file_atomically(out_path, out.str());
  return 0;
}

int run_simulate(int scenario, std::size_t n, std::size_t m,
                 std::size_t reps, const std::string& tau_text,
                 const std::string& t0_text, const std::string& variance_text,
                 std::size_t B, const std::optional<std::uint64_t>& seed_flag,
                 bool strict, const std::optional<double>& kendall,
                 double censor_bound, double a, int threads, bool runtime,
                 const std::string& out_path) {
  qrl::ScenarioSpec spec = qrl::scenario_preset(scenario);
  spec.n = n;
  spec.m = m;
  spec.taus = parse_double_list(tau_text, "--tau");
  spec.t0s = parse_double_list(t0_text, "--t0");
  if (kendall) spec.kendall_tau = *kendall;
  spec.censoring_bound = censor_bound;
  spec.a = a;
  const std::vector<qrl::VarianceMethod> methods =
      variance_text.empty() ? std::vector<qrl::VarianceMethod>{}
                            : parse_methods(variance_text);
  const std::uint64_t seed = resolve_seed(seed_flag, strict);
  const unsigned workers = resolve_threads(threads);

  const qrl::SummaryTable table =
      qrl::run_monte_carlo(spec, reps, methods, B, seed, workers);
  std::ostringstream out;
  qrl::write_summary_csv(table, out, runtime);
  write_file_atomically(out_path, out.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"quantile residual lifetime regression toolkit"};
  app.require_subcommand(1);

  // fit
  auto* fit = app.add_subcommand("fit", "fit models on clustered CSV data");
  std::string fit_data, fit_schema, fit_covariates, fit_tau = "0.5",
                                                    fit_t0 = "0";
  std::string fit_variance, fit_out;
  std::size_t fit_B = 500;
  std::optional<std::uint64_t> fit_seed;
  bool fit_strict = false;
  double fit_level = 0.95;
  int fit_threads = 0;
  fit->add_option("--data", fit_data, "input CSV path")->required();
  fit->add_option("--schema", fit_schema,
                  "column names, e.g. cluster=id,time=t,status=d");
  fit->add_option("--covariates", fit_covariates,
                  "comma list of covariate columns (default: all others)");
  fit->add_option("--tau", fit_tau, "comma list of quantile levels");
  fit->add_option("--t0", fit_t0, "comma list of residual time points");
  fit->add_option("--variance", fit_variance,
                  "comma list of fr,cfs,rbs,ifr");
  fit->add_option("--B", fit_B, "resampling replicates");
  fit->add_option("--seed", fit_seed, "master seed");
  fit->add_flag("--strict", fit_strict, "require explicit seed");
  fit->add_option("--level", fit_level, "confidence level");
  fit->add_option("--threads", fit_threads,
                  "worker threads (default: QRL_THREADS or hardware)");
  fit->add_option("--out", fit_out, "output JSON path")->required();

  // predict
  auto* predict =
      app.add_subcommand("predict", "evaluate a saved fit on profiles");
  std::string pred_fit, pred_profiles, pred_out;
  bool pred_rearrange = false, pred_time = false;
  predict->add_option("--fit", pred_fit, "fit JSON path")->required();
  predict->add_option("--profiles", pred_profiles, "profiles CSV path")
      ->required();
  predict->add_flag("--rearrange", pred_rearrange,
                    "monotone rearrangement across the tau grid");
  predict->add_flag("--time-scale", pred_time,
                    "also report exp(theta) remaining-time quantiles");
  predict->add_option("--out", pred_out, "output CSV path")->required();

  // simulate
  auto* simulate =
      app.add_subcommand("simulate", "run the Monte Carlo harness");
  int sim_scenario = 1;
  std::size_t sim_n = 200, sim_m = 3, sim_reps = 200, sim_B = 500;
  std::string sim_tau = "0.5", sim_t0 = "0", sim_variance, sim_out;
  std::optional<std::uint64_t> sim_seed;
  bool sim_strict = false, sim_runtime = false;
  std::optional<double> sim_kendall;
  double sim_bound = 20.0, sim_a = 0.1;
  int sim_threads = 0;
  simulate->add_option("--scenario", sim_scenario, "scenario id 1-8")
      ->required();
  simulate->add_option("--n", sim_n, "cluster count");
  simulate->add_option("--m", sim_m, "cluster size");
  simulate->add_option("--reps", sim_reps, "Monte Carlo replicates");
  simulate->add_option("--tau", sim_tau, "comma list of quantile levels");
  simulate->add_option("--t0", sim_t0, "comma list of residual time points");
  simulate->add_option("--variance", sim_variance,
                       "comma list of fr,cfs,rbs,ifr");
  simulate->add_option("--B", sim_B, "resampling replicates");
  simulate->add_option("--seed", sim_seed, "master seed");
  simulate->add_flag("--strict", sim_strict, "require explicit seed");
  simulate->add_option("--kendall", sim_kendall,
                       "Kendall tau override (scenario default otherwise)");
  simulate->add_option("--censor-bound", sim_bound,
                       "upper bound of the uniform censoring time");
  simulate->add_option("--a", sim_a, "scenario 4 heteroscedasticity level");
  simulate->add_option("--workers,--threads", sim_threads,
                       "worker threads (default: QRL_THREADS or hardware)");
  simulate->add_flag("--runtime", sim_runtime,
                     "include per-method runtime columns");
  simulate->add_option("--out", sim_out, "output CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << std::flush;
    return 2;
  }

  try {
    if (fit->parsed())
      return run_fit(fit_data, fit_schema, fit_covariates, fit_tau, fit_t0,
                     fit_variance, fit_B, fit_seed, fit_strict, fit_level,
                     fit_threads, fit_out);
    if (predict->parsed())
      return run_predict(pred_fit, pred_profiles, pred_rearrange, pred_time,
                         pred_out);
    if (simulate->parsed())
      return run_simulate(sim_scenario, sim_n, sim_m, sim_reps, sim_tau,
                          sim_t0, sim_variance, sim_B, sim_seed, sim_strict,
                          sim_kendall, sim_bound, sim_a, sim_threads,
                          sim_runtime, sim_out);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n\n"
              << app.help() << std::flush;
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

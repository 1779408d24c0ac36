#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "qrl/types.hpp"

// CSV ingestion: UTF-8, comma-separated, header row required, no missing
// values. The intercept column is prepended by the loader and must not
// appear in the file.

namespace qrl {

/// Maps canonical roles onto file column names. When `covariates` is unset,
/// every column other than the three named ones is used, in file order.
struct CsvSchema {
  std::string cluster = "cluster";
  std::string time = "time";
  std::string status = "status";
  std::optional<std::vector<std::string>> covariates;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream stream(line);
  while (std::getline(stream, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline double parse_number(const std::string& cell, std::size_t line_no,
                           const std::string& column) {
  const char* begin = cell.c_str();
  char* end = nullptr;
  const double value = std::strtod(begin, &end);
  if (end == begin || *end != '\0')
    throw ValidationError("line " + std::to_string(line_no) + ": column '" +
                          column + "': non-numeric value '" + cell + "'");
  return value;
}

}  // namespace detail

/// Loads a clustered dataset, grouping rows by cluster id (clusters ordered
/// by first appearance, file order preserved within each cluster).
inline ClusteredDataset load_dataset(const std::string& path,
                                     const CsvSchema& schema = {}) {
  std::ifstream file(path);
  if (!file) throw ValidationError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(file, line)) throw ValidationError("'" + path + "': empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_csv_line(line);

  auto find_column = [&](const std::string& name) {
    for (std::size_t j = 0; j < header.size(); ++j)
      if (header[j] == name) return j;
    throw ValidationError("'" + path + "': missing column '" + name + "'");
  };
  const std::size_t col_cluster = find_column(schema.cluster);
  const std::size_t col_time = find_column(schema.time);
  const std::size_t col_status = find_column(schema.status);

  std::vector<std::size_t> cov_cols;
  std::vector<std::string> cov_names;
  if (schema.covariates) {
    for (const auto& name : *schema.covariates) {
      cov_cols.push_back(find_column(name));
      cov_names.push_back(name);
    }
  } else {
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (j == col_cluster || j == col_time || j == col_status) continue;
      cov_cols.push_back(j);
      cov_names.push_back(header[j]);
    }
  }

  ClusteredDataset data;
  data.p = 1 + cov_cols.size();
  data.covariate_names.push_back("(intercept)");
  for (const auto& name : cov_names) data.covariate_names.push_back(name);

  std::map<std::string, std::size_t> cluster_index;
  std::size_t line_no = 1;
  std::size_t rows = 0;
  while (std::getline(file, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw ValidationError("'" + path + "': line " + std::to_string(line_no) +
                            ": expected " + std::to_string(header.size()) +
                            " cells, found " + std::to_string(cells.size()));
    Observation obs;
    obs.cluster_id = cells[col_cluster];
    obs.time = detail::parse_number(cells[col_time], line_no, schema.time);
    if (!(obs.time > 0.0))
      throw ValidationError("line " + std::to_string(line_no) + ": column '" +
                            schema.time + "': time must be strictly positive");
    const double status =
        detail::parse_number(cells[col_status], line_no, schema.status);
    if (status != 0.0 && status != 1.0)
      throw ValidationError("line " + std::to_string(line_no) + ": column '" +
                            schema.status + "': value outside {0,1}");
    obs.status = static_cast<int>(status);
    obs.covariates.reserve(data.p);
    obs.covariates.push_back(1.0);
    for (std::size_t k = 0; k < cov_cols.size(); ++k)
      obs.covariates.push_back(
          detail::parse_number(cells[cov_cols[k]], line_no, cov_names[k]));

    auto found = cluster_index.find(obs.cluster_id);
    if (found == cluster_index.end()) {
      found = cluster_index.emplace(obs.cluster_id, data.clusters.size()).first;
      data.clusters.push_back(Cluster{obs.cluster_id, {}});
    }
    data.clusters[found->second].observations.push_back(std::move(obs));
    ++rows;
  }
  if (rows == 0) throw ValidationError("'" + path + "': no data rows");
  validate_dataset(data);
  return data;
}

/// Writes a dataset back to CSV with full double precision; loading the
/// result reproduces the dataset exactly.
inline void save_dataset(const ClusteredDataset& data, const std::string& path) {
  std::ofstream file(path);
  if (!file) throw ValidationError("cannot write '" + path + "'");
  file << "cluster,time,status";
  for (std::size_t j = 1; j < data.covariate_names.size(); ++j)
    file << ',' << data.covariate_names[j];
  file << '\n';
  char buf[40];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    file << buf;
  };
  for (const auto& cluster : data.clusters) {
    for (const auto& obs : cluster.observations) {
      file << cluster.id << ',';
      put(obs.time);
      file << ',' << obs.status;
      for (std::size_t j = 1; j < obs.covariates.size(); ++j) {
        file << ',';
        put(obs.covariates[j]);
      }
      file << '\n';
    }
  }
}

}  // namespace qrl

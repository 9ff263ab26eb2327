#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"
#include "rng.hpp"
#include "types.hpp"

namespace rvrs {

struct Dataset {
  Matrix features;  // N x D
  Vector targets;   // label (0/1) or real response
};

namespace detail {

inline bool is_separator(char c) { return c == ',' || c == ';' || c == ' ' || c == '\t' || c == '\r'; }

inline std::vector<double> parse_row(std::string_view line, std::size_t line_no, const std::string& source) {
  std::vector<double> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && is_separator(line[i])) ++i;
    if (i == line.size()) break;
    std::size_t j = i;
    while (j < line.size() && !is_separator(line[j])) ++j;
    double v = 0.0;
    const auto* first = line.data() + i;
    const auto* last = line.data() + j;
    if (*first == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last || !std::isfinite(v)) {
      throw DataError(source + ":" + std::to_string(line_no) + ": malformed field '" +
                      std::string(line.substr(i, j - i)) + "'");
    }
    out.push_back(v);
    i = j;
  }
  return out;
}

}  // namespace detail

/// Delimited numeric text (comma, semicolon, tab or space), no header, last column is the target.
/// Blank lines are skipped; anything else that fails to parse is an error.
inline Dataset parse_delimited(std::istream& in, const std::string& source = "<stream>") {
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto row = detail::parse_row(line, line_no, source);
    if (row.empty()) continue;
    if (row.size() < 2) throw DataError(source + ":" + std::to_string(line_no) + ": need at least two columns");
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw DataError(source + ":" + std::to_string(line_no) + ": expected " + std::to_string(rows.front().size()) +
                      " columns, got " + std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError(source + ": no data rows");
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto d = static_cast<Eigen::Index>(rows.front().size()) - 1;
  Dataset ds{Matrix(n, d), Vector(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) ds.features(i, j) = rows[i][j];
    ds.targets[i] = rows[i][d];
  }
  return ds;
}

inline Dataset load_delimited(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file '" + path + "'");
  return parse_delimited(in, path);
}

// Zero mean, unit variance per column; constant columns are only centered.
inline void standardize_columns(Matrix& x) {
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    auto col = x.col(j);
    const double mean = col.mean();
    col.array() -= mean;
    const double sd = std::sqrt(col.squaredNorm() / static_cast<double>(col.size()));
    if (sd > 0.0) col /= sd;
  }
}

inline void check_binary_labels(const Vector& y) {
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (y[i] != 0.0 && y[i] != 1.0) throw DataError("labels must be 0 or 1");
  }
}

/// Logistic data: standard-Normal features, weights ~ N(0, weight_sd^2 / D), Bernoulli labels.
inline Dataset synthetic_logistic(Eigen::Index n, Eigen::Index d, Rng& rng, double weight_sd = 3.0) {
  Vector w(d);
  for (Eigen::Index j = 0; j < d; ++j) w[j] = rng.normal() * weight_sd / std::sqrt(static_cast<double>(d));
  Dataset ds{Matrix(n, d), Vector(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) ds.features(i, j) = rng.normal();
    const double p = 1.0 / (1.0 + std::exp(-ds.features.row(i).dot(w)));
    ds.targets[i] = rng.uniform() < p ? 1.0 : 0.0;
  }
  return ds;
}

/// Linear regression with Normal noise plus extra Normal noise on a fraction of points.
inline Dataset synthetic_heavy_tailed_regression(Eigen::Index n, Eigen::Index d, Rng& rng, double noise_sd = 0.5,
                                                 double extra_noise_sd = 3.0, double extra_fraction = 0.25) {
  Vector w(d);
  for (Eigen::Index j = 0; j < d; ++j) w[j] = rng.normal();
  const double bias = rng.normal();
  Dataset ds{Matrix(n, d), Vector(n)};
  const auto n_extra = static_cast<Eigen::Index>(std::llround(extra_fraction * static_cast<double>(n)));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) ds.features(i, j) = rng.normal();
    double y = ds.features.row(i).dot(w) + bias + noise_sd * rng.normal();
    if (i < n_extra) y += extra_noise_sd * rng.normal();
    ds.targets[i] = y;
  }
  return ds;
}

}  // namespace rvrs

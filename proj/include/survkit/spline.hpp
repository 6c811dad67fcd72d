#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "survkit/error.hpp"

namespace survkit {

/// Type-7 (linear interpolation) sample quantile.
inline double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw DataError("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

/// Knots at the 5/35/65/95% quantiles of the observed values.
inline std::vector<double> default_spline_knots(std::span<const double> values) {
  std::vector<double> v(values.begin(), values.end());
  std::vector<double> knots;
  for (double p : {0.05, 0.35, 0.65, 0.95}) knots.push_back(quantile(v, p));
  if (std::adjacent_find(knots.begin(), knots.end(), [](double a, double b) { return !(a < b); }) != knots.end())
    throw DataError("default spline knots are not distinct; supply knots explicitly");
  return knots;
}

inline void check_knots(std::span<const double> knots) {
  if (knots.size() < 3) throw ConfigError("restricted cubic splines need at least 3 knots");
  for (std::size_t i = 1; i < knots.size(); ++i)
    if (!(knots[i - 1] < knots[i])) throw ConfigError("spline knots must be strictly ascending");
}

/// Restricted cubic spline basis at one point: k knots give k-1 values, the
/// first being x itself. Each nonlinear column is scaled by (t_k - t_1)^2.
inline std::vector<double> spline_row(double x, std::span<const double> knots) {
  const std::size_t k = knots.size();
  const double t_last = knots[k - 1];
  const double t_prev = knots[k - 2];
  const double scale = (t_last - knots[0]) * (t_last - knots[0]);
  const auto cube = [](double u) { return u > 0 ? u * u * u : 0.0; };
  std::vector<double> row;
  row.reserve(k - 1);
  row.push_back(x);
  for (std::size_t j = 0; j + 2 < k; ++j) {
    const double tj = knots[j];
    const double v = cube(x - tj) - cube(x - t_prev) * (t_last - tj) / (t_last - t_prev) +
                     cube(x - t_last) * (t_prev - tj) / (t_last - t_prev);
    row.push_back(v / scale);
  }
  return row;
}

/// Basis matrix with one row per value of x.
inline Eigen::MatrixXd spline_basis(std::span<const double> x, std::span<const double> knots) {
  check_knots(knots);
  Eigen::MatrixXd basis(static_cast<Eigen::Index>(x.size()), static_cast<Eigen::Index>(knots.size() - 1));
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto row = spline_row(x[i], knots);
    for (std::size_t j = 0; j < row.size(); ++j) basis(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row[j];
  }
  return basis;
}

}  // namespace survkit

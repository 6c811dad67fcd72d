#pragma once

// Piecewise-exponential (Poisson) rate modelling: Lexis splitting of follow-up
// over several time axes into cells of events and person-time, and log-linear
// rate regression by iteratively reweighted least squares.

#include <algorithm>
#include <cmath>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "survkit/cohort.hpp"
#include "survkit/text.hpp"

namespace survkit {

/// One time scale: the analysis axis shifted by a per-subject offset, cut into
/// half-open intervals [c_j, c_{j+1}). Use +inf as the last cutpoint to leave
/// the final interval open.
struct TimeAxis {
  std::string name;
  std::vector<double> cutpoints;
  /// Offset added to the analysis time; empty means the analysis axis itself.
  std::map<std::string, double> offsets;

  std::string interval_label(std::size_t j) const {
    return fmt::format("[{},{})", text::sig6(cutpoints[j]), text::sig6(cutpoints[j + 1]));
  }
};

struct RateCell {
  std::vector<int> intervals;  // one index per axis
  std::vector<double> pattern; // covariate pattern values
  double events = 0.0;
  double person_time = 0.0;
};

struct RateTable {
  std::vector<TimeAxis> axes;  // offsets are not retained on import
  std::vector<std::string> pattern_columns;
  std::vector<RateCell> cells;  // ordered by (intervals, pattern)

  double total_events() const {
    double s = 0;
    for (const auto& c : cells) s += c.events;
    return s;
  }
  double total_person_time() const {
    double s = 0;
    for (const auto& c : cells) s += c.person_time;
    return s;
  }
};

/// Splits every episode simultaneously along all axes and aggregates events and
/// person-time by (axis intervals, covariate pattern). The event of an episode
/// is counted in the cell holding the end of its follow-up.
inline RateTable tabulate_person_time(const CohortTable& cohort, std::vector<TimeAxis> axes,
                                      std::vector<std::string> pattern_columns,
                                      std::optional<int> cause = std::nullopt) {
  if (axes.empty()) throw ConfigError("at least one time axis is needed");
  for (const auto& axis : axes) {
    if (axis.cutpoints.size() < 2) throw ConfigError("axis '" + axis.name + "' needs at least two cutpoints");
    for (std::size_t j = 1; j < axis.cutpoints.size(); ++j)
      if (!(axis.cutpoints[j - 1] < axis.cutpoints[j]))
        throw ConfigError("cutpoints of axis '" + axis.name + "' must be strictly ascending");
  }
  std::vector<std::size_t> columns;
  for (const auto& name : pattern_columns) columns.push_back(cohort.covariate_index(name));

  std::map<std::pair<std::vector<int>, std::vector<double>>, std::pair<double, double>> cells;
  for (const auto& e : cohort.episodes()) {
    std::vector<double> offset(axes.size(), 0.0);
    for (std::size_t a = 0; a < axes.size(); ++a) {
      if (axes[a].offsets.empty()) continue;
      auto it = axes[a].offsets.find(e.subject_id);
      if (it == axes[a].offsets.end())
        throw DataError(fmt::format("axis '{}' has no offset for subject {}", axes[a].name, e.subject_id));
      offset[a] = it->second;
    }
    // breakpoints on the analysis axis where any axis crosses a cutpoint
    std::vector<double> points{e.tstart, e.tstop};
    for (std::size_t a = 0; a < axes.size(); ++a) {
      const auto& c = axes[a].cutpoints;
      if (e.tstart + offset[a] < c.front() || e.tstop + offset[a] > c.back())
        throw DataError(fmt::format("subject {}: follow-up on axis '{}' extends beyond the cutpoints [{}, {}]",
                                    e.subject_id, axes[a].name, text::sig6(c.front()), text::sig6(c.back())));
      for (double cut : c) {
        const double t = cut - offset[a];
        if (t > e.tstart && t < e.tstop) points.push_back(t);
      }
    }
    std::sort(points.begin(), points.end());
    points.erase(std::unique(points.begin(), points.end()), points.end());

    std::vector<double> pattern;
    for (auto c : columns) pattern.push_back(e.covariates[c]);
    const bool event = e.status != 0 && (!cause || e.status == *cause);
    for (std::size_t k = 0; k + 1 < points.size(); ++k) {
      const double lo = points[k], hi = points[k + 1];
      std::vector<int> index;
      for (std::size_t a = 0; a < axes.size(); ++a) {
        const auto& c = axes[a].cutpoints;
        const double value = lo + offset[a];
        index.push_back(static_cast<int>(std::upper_bound(c.begin(), c.end(), value) - c.begin()) - 1);
      }
      auto& cell = cells[{index, pattern}];
      cell.second += hi - lo;
      if (event && k + 2 == points.size()) cell.first += 1.0;
    }
  }

  RateTable table;
  table.pattern_columns = std::move(pattern_columns);
  for (auto& axis : axes) axis.offsets.clear();
  table.axes = std::move(axes);
  for (const auto& [key, value] : cells) table.cells.push_back({key.first, key.second, value.first, value.second});
  return table;
}

/// One row per cell: axis interval indices, pattern values, events, person_time.
/// Axis cutpoints travel as '#axis' comment lines.
inline void write_rate_table(const RateTable& table, std::ostream& out) {
  for (const auto& axis : table.axes) {
    out << "#axis," << axis.name;
    for (double c : axis.cutpoints) out << ',' << text::full(c);
    out << '\n';
  }
  for (const auto& axis : table.axes) out << axis.name << ',';
  for (const auto& col : table.pattern_columns) out << col << ',';
  out << "events,person_time\n";
  for (const auto& cell : table.cells) {
    for (int i : cell.intervals) out << i << ',';
    for (double v : cell.pattern) out << text::full(v) << ',';
    out << text::full(cell.events) << ',' << text::full(cell.person_time) << '\n';
  }
}

/// Reads a table written by write_rate_table or pre-aggregated elsewhere.
inline RateTable read_rate_table(std::istream& in) {
  RateTable table;
  std::string line;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    auto cells = text::split(line, ',');
    if (cells.front() == "#axis") {
      TimeAxis axis{cells.at(1), {}, {}};
      for (std::size_t i = 2; i < cells.size(); ++i) {
        auto v = text::parse_double(cells[i]);
        if (!v) throw DataError("malformed axis cutpoint '" + cells[i] + "'");
        axis.cutpoints.push_back(*v);
      }
      table.axes.push_back(std::move(axis));
    } else if (cells.front().starts_with("#")) {
      continue;
    } else if (header.empty()) {
      header = std::move(cells);
    } else {
      if (cells.size() != header.size()) throw DataError("malformed rate table row");
      rows.push_back(std::move(cells));
    }
  }
  if (header.size() < table.axes.size() + 2 || header[header.size() - 2] != "events" ||
      header.back() != "person_time")
    throw DataError("rate table header must end with events,person_time");
  for (std::size_t i = table.axes.size(); i + 2 < header.size(); ++i) table.pattern_columns.push_back(header[i]);
  for (const auto& row : rows) {
    RateCell cell;
    for (std::size_t i = 0; i < header.size(); ++i) {
      auto v = text::parse_double(row[i]);
      if (!v) throw DataError("malformed rate table value '" + row[i] + "'");
      if (i < table.axes.size())
        cell.intervals.push_back(static_cast<int>(*v));
      else if (i + 2 < header.size())
        cell.pattern.push_back(*v);
      else if (i + 2 == header.size())
        cell.events = *v;
      else
        cell.person_time = *v;
    }
    if (cell.person_time < 0 || cell.events < 0) throw DataError("negative events or person-time in rate table");
    table.cells.push_back(std::move(cell));
  }
  return table;
}

struct RateTerm {
  enum class Kind { axis, factor, linear };
  Kind kind = Kind::linear;
  std::string name;  // axis name or pattern column

  static RateTerm axis(std::string n) { return {Kind::axis, std::move(n)}; }
  static RateTerm factor(std::string n) { return {Kind::factor, std::move(n)}; }
  static RateTerm linear(std::string n) { return {Kind::linear, std::move(n)}; }
};

struct RateModelSpec {
  std::vector<RateTerm> terms;
};

struct PoissonFit {
  std::vector<std::string> names;  // "(Intercept)" first
  Eigen::VectorXd coefficients;    // log-rate and log-rate-ratios
  Eigen::MatrixXd covariance;
  double deviance = 0.0;
  int df_residual = 0;
  int iterations = 0;
  std::vector<double> fitted;  // expected events per cell with person_time > 0
  RateModelSpec spec;

  std::size_t index(std::string_view name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return i;
    throw ConfigError(fmt::format("rate model has no coefficient '{}'", name));
  }
  double se(std::size_t j) const {
    const auto k = static_cast<Eigen::Index>(j);
    return std::sqrt(covariance(k, k));
  }
};

inline double poisson_deviance(const std::vector<double>& y, const std::vector<double>& mu) {
  double dev = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i)
    dev += 2.0 * ((y[i] > 0 ? y[i] * std::log(y[i] / mu[i]) : 0.0) - (y[i] - mu[i]));
  return dev;
}

/// events ~ Poisson(person_time * exp(x'theta)) with an intercept; factor levels
/// use the lowest observed level as reference.
inline PoissonFit fit_rate_model(const RateTable& table, const RateModelSpec& spec, int max_iterations = 50,
                                 double tolerance = 1e-10) {
  std::vector<const RateCell*> cells;
  for (const auto& c : table.cells) {
    if (c.person_time <= 0) {
      if (c.events > 0) throw DataError("rate table cell has events but no person-time");
      continue;
    }
    cells.push_back(&c);
  }
  if (cells.empty()) throw DataError("rate table has no person-time");

  const auto axis_index = [&](const std::string& name) {
    for (std::size_t a = 0; a < table.axes.size(); ++a)
      if (table.axes[a].name == name) return a;
    throw ConfigError("rate model references unknown axis '" + name + "'");
  };
  const auto pattern_index = [&](const std::string& name) {
    for (std::size_t a = 0; a < table.pattern_columns.size(); ++a)
      if (table.pattern_columns[a] == name) return a;
    throw ConfigError("rate model references unknown pattern column '" + name + "'");
  };

  // column generators
  struct Column {
    std::string name;
    std::function<double(const RateCell&)> value;
  };
  std::vector<Column> columns{{"(Intercept)", [](const RateCell&) { return 1.0; }}};
  for (const auto& term : spec.terms) {
    if (term.kind == RateTerm::Kind::axis) {
      const auto a = axis_index(term.name);
      std::set<int> levels;
      for (auto* c : cells) levels.insert(c->intervals[a]);
      for (auto it = std::next(levels.begin()); it != levels.end(); ++it) {
        const int level = *it;
        const auto& axis = table.axes[a];
        std::string label = static_cast<std::size_t>(level) + 1 < axis.cutpoints.size()
                                ? axis.interval_label(static_cast<std::size_t>(level))
                                : fmt::format("{}", level);
        columns.push_back({term.name + label, [a, level](const RateCell& c) { return c.intervals[a] == level ? 1.0 : 0.0; }});
      }
    } else if (term.kind == RateTerm::Kind::factor) {
      const auto k = pattern_index(term.name);
      std::set<double> levels;
      for (auto* c : cells) levels.insert(c->pattern[k]);
      for (auto it = std::next(levels.begin()); it != levels.end(); ++it) {
        const double level = *it;
        columns.push_back({term.name + "=" + text::full(level),
                           [k, level](const RateCell& c) { return c.pattern[k] == level ? 1.0 : 0.0; }});
      }
    } else {
      const auto k = pattern_index(term.name);
      columns.push_back({term.name, [k](const RateCell& c) { return c.pattern[k]; }});
    }
  }

  const auto n = static_cast<Eigen::Index>(cells.size());
  const auto p = static_cast<Eigen::Index>(columns.size());
  Eigen::MatrixXd x(n, p);
  Eigen::VectorXd y(n), offset(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& c = *cells[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < p; ++j) x(i, j) = columns[static_cast<std::size_t>(j)].value(c);
    y(i) = c.events;
    offset(i) = std::log(c.person_time);
  }
  if (y.sum() <= 0) throw DataError("rate model needs at least one event");

  Eigen::VectorXd mu = (y.array() + 0.1).matrix();
  Eigen::VectorXd eta = mu.array().log().matrix();
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(p);
  std::vector<double> yv(y.data(), y.data() + n), muv(mu.data(), mu.data() + n);
  double deviance = poisson_deviance(yv, muv);
  int iterations = 0;
  bool converged = false;
  Eigen::MatrixXd xtwx;
  while (iterations < max_iterations) {
    ++iterations;
    const Eigen::VectorXd z = (eta - offset).array() + (y - mu).array() / mu.array();
    xtwx = x.transpose() * mu.asDiagonal() * x;
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(xtwx);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
        ldlt.vectorD().minCoeff() <= 1e-12 * ldlt.vectorD().maxCoeff())
      throw NumericalError("rate model design is rank deficient");
    theta = ldlt.solve(x.transpose() * mu.asDiagonal() * z);
    eta = x * theta + offset;
    mu = eta.array().exp().matrix();
    muv.assign(mu.data(), mu.data() + n);
    const double next = poisson_deviance(yv, muv);
    const double change = std::abs(next - deviance) / (std::abs(next) + 0.1);
    deviance = next;
    if (change < tolerance) {
      converged = true;
      break;
    }
  }
  for (Eigen::Index j = 0; j < p; ++j)
    if (std::abs(theta(j)) > 30.0)
      throw NumericalError("rate model diverges (separation) for '" + columns[static_cast<std::size_t>(j)].name + "'");
  if (!converged) throw NumericalError("rate model did not converge");

  xtwx = x.transpose() * mu.asDiagonal() * x;
  PoissonFit fit;
  for (const auto& c : columns) fit.names.push_back(c.name);
  fit.coefficients = theta;
  fit.covariance = xtwx.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
  fit.deviance = deviance;
  fit.df_residual = static_cast<int>(n - p);
  fit.iterations = iterations;
  fit.fitted = muv;
  fit.spec = spec;
  return fit;
}

/// Events per `per` units of person-time for each cell, in table order.
inline std::vector<double> cell_rates(const RateTable& table, double per = 1000.0) {
  std::vector<double> out;
  for (const auto& c : table.cells) out.push_back(c.person_time > 0 ? per * c.events / c.person_time : NAN);
  return out;
}

}  // namespace survkit

#pragma once

#include <algorithm>
#include <cmath>
#include <ostream>
#include <vector>

#include "survkit/text.hpp"

namespace survkit {

/// Right-continuous piecewise-constant function. `values[i]` holds on
/// [times[i], times[i+1]); `initial` holds from `origin` up to the first jump.
/// Optional pointwise variance and confidence limits share the jump grid.
struct StepFunction {
  double origin = 0.0;
  double initial = 0.0;
  std::vector<double> times;
  std::vector<double> values;
  std::vector<double> variance;
  std::vector<double> lower;
  std::vector<double> upper;

  std::size_t size() const noexcept { return times.size(); }
  bool has_bands() const noexcept { return !lower.empty(); }

  /// Value at t (right-continuous).
  double operator()(double t) const {
    const auto it = std::upper_bound(times.begin(), times.end(), t);
    return it == times.begin() ? initial : values[static_cast<std::size_t>(it - times.begin()) - 1];
  }

  /// Left limit f(t-).
  double before(double t) const {
    const auto it = std::lower_bound(times.begin(), times.end(), t);
    return it == times.begin() ? initial : values[static_cast<std::size_t>(it - times.begin()) - 1];
  }

  double final_value() const { return values.empty() ? initial : values.back(); }
  double last_time() const { return times.empty() ? origin : times.back(); }

  void push(double t, double v) {
    times.push_back(t);
    values.push_back(v);
  }
};

/// Plot-ready delimited export: one row for the origin, then one per jump.
inline void write_step_function(const StepFunction& f, std::ostream& out, char delimiter = ',') {
  out << "time" << delimiter << "estimate" << delimiter << "lower" << delimiter << "upper\n";
  const auto row = [&](double t, double v, double lo, double hi) {
    out << text::sig6(t) << delimiter << text::sig6(v) << delimiter << text::sig6(lo) << delimiter << text::sig6(hi)
        << '\n';
  };
  row(f.origin, f.initial, f.initial, f.initial);
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double lo = f.has_bands() ? f.lower[i] : NAN;
    const double hi = f.has_bands() ? f.upper[i] : NAN;
    row(f.times[i], f.values[i], lo, hi);
  }
}

}  // namespace survkit

#pragma once

// Nonparametric estimators on counting-process data. At-risk sets follow
// tstart < t <= tstop, so delayed entry and split episodes are handled exactly
// and a censoring at t still counts in the risk set of an event at t.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "survkit/cohort.hpp"
#include "survkit/step_function.hpp"

namespace survkit {

inline double normal_quantile(double p) { return boost::math::quantile(boost::math::normal(), p); }

namespace detail {

/// Counts Y(t) = #{episodes with tstart < t <= tstop}.
class RiskCounter {
 public:
  explicit RiskCounter(const CohortTable& cohort) {
    starts_.reserve(cohort.size());
    stops_.reserve(cohort.size());
    for (const auto& e : cohort.episodes()) {
      starts_.push_back(e.tstart);
      stops_.push_back(e.tstop);
    }
    std::sort(starts_.begin(), starts_.end());
    std::sort(stops_.begin(), stops_.end());
  }

  double at(double t) const {
    const auto entered = std::lower_bound(starts_.begin(), starts_.end(), t) - starts_.begin();
    const auto left = std::lower_bound(stops_.begin(), stops_.end(), t) - stops_.begin();
    return static_cast<double>(entered - left);
  }

  /// Number under observation just after t: tstart <= t < tstop.
  double after(double t) const {
    const auto entered = std::upper_bound(starts_.begin(), starts_.end(), t) - starts_.begin();
    const auto left = std::upper_bound(stops_.begin(), stops_.end(), t) - stops_.begin();
    return static_cast<double>(entered - left);
  }

 private:
  std::vector<double> starts_;
  std::vector<double> stops_;
};

struct EventCount {
  double time;
  double events;
};

/// Distinct event times with tied counts, for status == cause (any nonzero status if cause is unset).
inline std::vector<EventCount> event_counts(const CohortTable& cohort, std::optional<int> cause) {
  std::vector<double> times;
  for (const auto& e : cohort.episodes())
    if (cause ? e.status == *cause : e.status != 0) times.push_back(e.tstop);
  std::sort(times.begin(), times.end());
  std::vector<EventCount> out;
  for (double t : times) {
    if (!out.empty() && out.back().time == t)
      out.back().events += 1.0;
    else
      out.push_back({t, 1.0});
  }
  return out;
}

inline double earliest_entry(const CohortTable& cohort) {
  double t = cohort.episodes().front().tstart;
  for (const auto& e : cohort.episodes()) t = std::min(t, e.tstart);
  return t;
}

}  // namespace detail

/// Nelson-Aalen cumulative hazard for one cause (all causes when unset), with
/// variance sum d/Y^2 and log-scale pointwise confidence limits.
inline StepFunction nelson_aalen(const CohortTable& cohort, std::optional<int> cause = 1, double level = 0.95) {
  const detail::RiskCounter risk(cohort);
  const double z = normal_quantile(0.5 + level / 2.0);
  StepFunction f;
  f.origin = detail::earliest_entry(cohort);
  f.initial = 0.0;
  double cumulative = 0.0;
  double variance = 0.0;
  for (const auto& [t, d] : detail::event_counts(cohort, cause)) {
    const double y = risk.at(t);
    if (!(y > 0)) throw NumericalError("event with an empty risk set");
    cumulative += d / y;
    variance += d / (y * y);
    f.push(t, cumulative);
    f.variance.push_back(variance);
    const double factor = std::exp(z * std::sqrt(variance) / cumulative);
    f.lower.push_back(cumulative / factor);
    f.upper.push_back(cumulative * factor);
  }
  return f;
}

/// Product-limit survival treating any nonzero status as the event. With
/// `condition_time` t0 the estimate is P(T > t | T > t0), using event times after t0.
/// Greenwood variance; confidence limits on the log(-log S) scale.
inline StepFunction kaplan_meier(const CohortTable& cohort, std::optional<double> condition_time = std::nullopt,
                                 double level = 0.95) {
  const detail::RiskCounter risk(cohort);
  const double z = normal_quantile(0.5 + level / 2.0);
  StepFunction f;
  f.origin = condition_time.value_or(detail::earliest_entry(cohort));
  f.initial = 1.0;
  if (condition_time && !(risk.after(*condition_time) > 0))
    throw DataError("empty risk set at the conditioning time " + text::sig6(*condition_time));
  double surv = 1.0;
  double greenwood = 0.0;
  for (const auto& [t, d] : detail::event_counts(cohort, std::nullopt)) {
    if (condition_time && t <= *condition_time) continue;
    const double y = risk.at(t);
    if (!(y > 0)) throw NumericalError("event with an empty risk set");
    surv *= 1.0 - d / y;
    greenwood += y > d ? d / (y * (y - d)) : HUGE_VAL;
    f.push(t, surv);
    f.variance.push_back(surv * surv * greenwood);
    if (surv <= 0.0 || !std::isfinite(greenwood)) {
      f.lower.push_back(0.0);
      f.upper.push_back(std::max(surv, 0.0));
    } else if (surv >= 1.0) {
      f.lower.push_back(1.0);
      f.upper.push_back(1.0);
    } else {
      const double se = std::sqrt(greenwood) / std::abs(std::log(surv));
      f.lower.push_back(std::clamp(std::pow(surv, std::exp(z * se)), 0.0, 1.0));
      f.upper.push_back(std::clamp(std::pow(surv, std::exp(-z * se)), 0.0, 1.0));
    }
  }
  return f;
}

/// Cause-specific cumulative incidence curves plus overall survival.
struct CumulativeIncidence {
  std::map<int, StepFunction> incidence;
  StepFunction survival;
};

/// Aalen-Johansen: F_k(t) = sum over event times u <= t of S(u-) d_k(u) / Y(u).
/// Every curve jumps on the pooled event-time grid.
inline CumulativeIncidence aalen_johansen(const CohortTable& cohort) {
  const detail::RiskCounter risk(cohort);
  const auto causes = cohort.causes();
  std::map<double, std::map<int, double>> table;
  for (const auto& e : cohort.episodes())
    if (e.status != 0) table[e.tstop][e.status] += 1.0;

  CumulativeIncidence out;
  const double origin = detail::earliest_entry(cohort);
  for (int k : causes) {
    out.incidence[k].origin = origin;
    out.incidence[k].initial = 0.0;
  }
  out.survival.origin = origin;
  out.survival.initial = 1.0;
  double surv = 1.0;
  std::map<int, double> cumulative;
  for (const auto& [t, by_cause] : table) {
    const double y = risk.at(t);
    if (!(y > 0)) throw NumericalError("event with an empty risk set");
    double hazard = 0.0;
    for (const auto& [k, d] : by_cause) {
      cumulative[k] += surv * (d / y);
      hazard += d / y;
    }
    surv *= 1.0 - hazard;
    for (int k : causes) out.incidence[k].push(t, cumulative[k]);
    out.survival.push(t, surv);
  }
  return out;
}

/// True for episodes after which the subject leaves observation (no contiguous successor).
inline std::vector<bool> run_ends(const CohortTable& cohort) {
  std::vector<bool> out(cohort.size(), false);
  const auto& eps = cohort.episodes();
  for (std::size_t i = 0; i < eps.size(); ++i) {
    const bool has_next = i + 1 < eps.size() && eps[i + 1].subject_id == eps[i].subject_id &&
                          eps[i + 1].tstart == eps[i].tstop;
    out[i] = !has_next;
  }
  return out;
}

/// Swaps the roles of events and censorings: censorings at the end of a run become
/// events (code 1), all other episodes are marked censored.
inline CohortTable reverse_status(const CohortTable& cohort) {
  const auto ends = run_ends(cohort);
  std::vector<Episode> out = cohort.episodes();
  for (std::size_t i = 0; i < out.size(); ++i) out[i].status = (ends[i] && out[i].status == 0) ? 1 : 0;
  return CohortTable(std::move(out), cohort.covariate_names(), {{1, "censored"}}, cohort.time_axis(),
                     cohort.covariate_kinds());
}

/// Kaplan-Meier estimate of C(t) = P(no censoring before t).
inline StepFunction censoring_curve(const CohortTable& cohort, double level = 0.95) {
  return kaplan_meier(reverse_status(cohort), std::nullopt, level);
}

}  // namespace survkit

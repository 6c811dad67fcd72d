#pragma once

// Synthetic cohorts from fully specified cause-specific intensities, and
// deliberate immortal-time miscoding of a time-dependent exposure.
//
// Every cause shares one Weibull shape g: alpha_k(t) = c_k(t) g t^(g-1) with
// c_k piecewise constant (constant and piecewise baselines have g = 1, a
// Weibull(lambda, g) baseline has c = lambda^g). The all-cause cumulative hazard
// is then M (b^g - a^g) on every interval where the covariate multiplier M is
// constant, and event times follow by closed-form inversion.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "survkit/cohort.hpp"
#include "survkit/predict.hpp"

namespace survkit {

struct BaselineHazard {
  enum class Kind { constant, weibull, piecewise };
  Kind kind = Kind::constant;
  double rate = 1.0;               // lambda
  double shape = 1.0;              // gamma (weibull only)
  std::vector<double> cutpoints;   // piecewise: rates[j] on (cutpoints[j-1], cutpoints[j]]
  std::vector<double> rates;       // piecewise: cutpoints.size() + 1 values

  double power() const { return kind == Kind::weibull ? shape : 1.0; }

  /// Multiplier c(t) in alpha(t) = c(t) g t^(g-1).
  double scale(double t) const {
    switch (kind) {
      case Kind::constant: return rate;
      case Kind::weibull: return std::pow(rate, shape);
      case Kind::piecewise:
        return rates[static_cast<std::size_t>(std::lower_bound(cutpoints.begin(), cutpoints.end(), t) -
                                              cutpoints.begin())];
    }
    return rate;
  }

  /// Closed-form cumulative baseline hazard.
  double cumulative(double t) const {
    if (kind != Kind::piecewise) return scale(0.0) * std::pow(t, power());
    double total = 0.0, lo = 0.0;
    for (std::size_t j = 0; j <= cutpoints.size(); ++j) {
      const double hi = j < cutpoints.size() ? cutpoints[j] : HUGE_VAL;
      if (t <= lo) break;
      total += rates[j] * (std::min(t, hi) - lo);
      lo = hi;
    }
    return total;
  }
};

/// log-HR of a covariate that changes at time cutpoints: log_hr[j] on (c_{j-1}, c_j].
struct TimeVaryingEffect {
  std::string covariate;
  std::vector<double> cutpoints;
  std::vector<double> log_hr;

  double at(double t) const {
    return log_hr[static_cast<std::size_t>(std::lower_bound(cutpoints.begin(), cutpoints.end(), t) -
                                           cutpoints.begin())];
  }
};

struct CauseScenario {
  int code = 1;
  std::string label;
  BaselineHazard baseline;
  std::map<std::string, double> log_hr;  // covariates and the exposure
  std::vector<TimeVaryingEffect> time_varying;
};

struct CovariateGenerator {
  enum class Kind { bernoulli, normal, uniform };
  std::string name;
  Kind kind = Kind::bernoulli;
  double a = 0.5;  // p | mean | min
  double b = 0.0;  // - | sd | max
};

/// 0 -> 1 switch of a time-dependent exposure, exponential(rate) time after entry.
struct ExposureScenario {
  std::string name = "exposure";
  double rate = 0.0;
};

struct CensoringScenario {
  std::optional<double> admin;  // follow-up length since entry at full accrual
  double accrual = 0.0;         // admin follow-up shortened by uniform(0, accrual)
  double dropout_rate = 0.0;    // exponential drop-out since entry
};

struct Scenario {
  std::size_t n = 1000;
  std::uint64_t seed = 1;
  std::vector<CovariateGenerator> covariates;
  std::vector<CauseScenario> causes;
  std::optional<ExposureScenario> exposure;
  double entry_max = 0.0;  // entry uniform on [0, entry_max]
  CensoringScenario censoring;

  /// Validates and returns the shared Weibull shape.
  double shape() const {
    if (causes.empty()) throw ConfigError("scenario needs at least one cause");
    if (n == 0) throw ConfigError("scenario sample size must be positive");
    std::set<int> codes;
    const double g = causes.front().baseline.power();
    for (const auto& c : causes) {
      if (c.code <= 0 || !codes.insert(c.code).second) throw ConfigError("cause codes must be distinct and positive");
      const auto& b = c.baseline;
      if (b.power() != g) throw ConfigError("all causes must share one Weibull shape");
      if (!(b.power() > 0)) throw ConfigError("Weibull shape must be positive");
      if (b.kind == BaselineHazard::Kind::piecewise) {
        if (b.rates.size() != b.cutpoints.size() + 1) throw ConfigError("piecewise baseline needs one more rate than cutpoints");
        for (std::size_t j = 1; j < b.cutpoints.size(); ++j)
          if (!(b.cutpoints[j - 1] < b.cutpoints[j])) throw ConfigError("baseline cutpoints must be ascending");
        for (double r : b.rates)
          if (r < 0) throw ConfigError("hazard rates must be non-negative");
      } else if (b.rate < 0) {
        throw ConfigError("hazard rates must be non-negative");
      }
      for (const auto& tv : c.time_varying)
        if (tv.log_hr.size() != tv.cutpoints.size() + 1)
          throw ConfigError("time-varying effect of '" + tv.covariate + "' needs one more log-HR than cutpoints");
    }
    for (const auto& gen : covariates)
      if (gen.kind == CovariateGenerator::Kind::normal && !(gen.b > 0))
        throw ConfigError("normal covariate '" + gen.name + "' needs a positive sd");
    if (entry_max < 0 || censoring.accrual < 0 || censoring.dropout_rate < 0 || (exposure && exposure->rate < 0))
      throw ConfigError("scenario times and rates must be non-negative");
    return g;
  }
};

// ---------------------------------------------------------------------------
// JSON

inline BaselineHazard baseline_from_json(const nlohmann::json& j) {
  BaselineHazard b;
  const auto type = j.at("type").get<std::string>();
  if (type == "constant") {
    b.kind = BaselineHazard::Kind::constant;
    b.rate = j.at("rate").get<double>();
  } else if (type == "weibull") {
    b.kind = BaselineHazard::Kind::weibull;
    b.rate = j.at("rate").get<double>();
    b.shape = j.at("shape").get<double>();
  } else if (type == "piecewise") {
    b.kind = BaselineHazard::Kind::piecewise;
    b.cutpoints = j.at("cutpoints").get<std::vector<double>>();
    b.rates = j.at("rates").get<std::vector<double>>();
  } else {
    throw ConfigError("unknown baseline hazard type '" + type + "'");
  }
  return b;
}

inline nlohmann::json to_json(const BaselineHazard& b) {
  switch (b.kind) {
    case BaselineHazard::Kind::constant: return {{"type", "constant"}, {"rate", b.rate}};
    case BaselineHazard::Kind::weibull: return {{"type", "weibull"}, {"rate", b.rate}, {"shape", b.shape}};
    case BaselineHazard::Kind::piecewise:
      return {{"type", "piecewise"}, {"cutpoints", b.cutpoints}, {"rates", b.rates}};
  }
  return {};
}

inline Scenario scenario_from_json(const nlohmann::json& j) {
  try {
    Scenario s;
    s.n = j.value("n", std::size_t{1000});
    s.seed = j.value("seed", std::uint64_t{1});
    for (const auto& c : j.value("covariates", nlohmann::json::array())) {
      CovariateGenerator g;
      g.name = c.at("name").get<std::string>();
      const auto d = c.at("distribution").get<std::string>();
      if (d == "bernoulli") {
        g.kind = CovariateGenerator::Kind::bernoulli;
        g.a = c.at("p").get<double>();
      } else if (d == "normal") {
        g.kind = CovariateGenerator::Kind::normal;
        g.a = c.value("mean", 0.0);
        g.b = c.value("sd", 1.0);
      } else if (d == "uniform") {
        g.kind = CovariateGenerator::Kind::uniform;
        g.a = c.value("min", 0.0);
        g.b = c.value("max", 1.0);
      } else {
        throw ConfigError("unknown covariate distribution '" + d + "'");
      }
      s.covariates.push_back(std::move(g));
    }
    for (const auto& c : j.at("causes")) {
      CauseScenario cs;
      cs.code = c.value("code", 1);
      cs.label = c.value("label", fmt::format("cause {}", cs.code));
      cs.baseline = baseline_from_json(c.at("baseline"));
      cs.log_hr = c.value("log_hr", std::map<std::string, double>{});
      for (const auto& tv : c.value("time_varying", nlohmann::json::array()))
        cs.time_varying.push_back({tv.at("covariate").get<std::string>(),
                                   tv.at("cutpoints").get<std::vector<double>>(),
                                   tv.at("log_hr").get<std::vector<double>>()});
      s.causes.push_back(std::move(cs));
    }
    if (j.contains("exposure"))
      s.exposure = ExposureScenario{j["exposure"].value("name", std::string("exposure")),
                                    j["exposure"].at("rate").get<double>()};
    s.entry_max = j.contains("entry") ? j["entry"].value("max", 0.0) : 0.0;
    if (j.contains("censoring")) {
      const auto& c = j["censoring"];
      if (c.contains("admin")) s.censoring.admin = c["admin"].get<double>();
      s.censoring.accrual = c.value("accrual", 0.0);
      s.censoring.dropout_rate = c.value("dropout_rate", 0.0);
    }
    s.shape();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid scenario: ") + e.what());
  }
}

inline nlohmann::json to_json(const Scenario& s) {
  nlohmann::json j;
  j["n"] = s.n;
  j["seed"] = s.seed;
  j["covariates"] = nlohmann::json::array();
  for (const auto& g : s.covariates) {
    switch (g.kind) {
      case CovariateGenerator::Kind::bernoulli:
        j["covariates"].push_back({{"name", g.name}, {"distribution", "bernoulli"}, {"p", g.a}});
        break;
      case CovariateGenerator::Kind::normal:
        j["covariates"].push_back({{"name", g.name}, {"distribution", "normal"}, {"mean", g.a}, {"sd", g.b}});
        break;
      case CovariateGenerator::Kind::uniform:
        j["covariates"].push_back({{"name", g.name}, {"distribution", "uniform"}, {"min", g.a}, {"max", g.b}});
        break;
    }
  }
  j["causes"] = nlohmann::json::array();
  for (const auto& c : s.causes) {
    nlohmann::json cj{{"code", c.code}, {"label", c.label}, {"baseline", to_json(c.baseline)}, {"log_hr", c.log_hr}};
    cj["time_varying"] = nlohmann::json::array();
    for (const auto& tv : c.time_varying)
      cj["time_varying"].push_back({{"covariate", tv.covariate}, {"cutpoints", tv.cutpoints}, {"log_hr", tv.log_hr}});
    j["causes"].push_back(std::move(cj));
  }
  if (s.exposure) j["exposure"] = {{"name", s.exposure->name}, {"rate", s.exposure->rate}};
  j["entry"] = {{"max", s.entry_max}};
  nlohmann::json c{{"accrual", s.censoring.accrual}, {"dropout_rate", s.censoring.dropout_rate}};
  if (s.censoring.admin) c["admin"] = *s.censoring.admin;
  j["censoring"] = c;
  return j;
}

// ---------------------------------------------------------------------------
// Generation

struct SimulatedCohort {
  CohortTable cohort;    // exposure (if any) merged in as an internal covariate
  Timeline timeline;     // exposure switches
  nlohmann::json truth;  // generating scenario and realised counts
};

namespace detail {

/// Uniform on (0, 1) from the top 53 bits of one draw.
inline double open_uniform(std::mt19937_64& engine) {
  return (static_cast<double>(engine() >> 11) + 0.5) * 0x1.0p-53;
}

inline double draw_exponential(std::mt19937_64& engine, double rate) {
  const double u = open_uniform(engine);
  return rate > 0 ? -std::log(u) / rate : HUGE_VAL;
}

/// Linear predictor of cause `c` at time t for one subject.
inline double cause_eta(const CauseScenario& c, const std::map<std::string, double>& z, double t) {
  double eta = 0.0;
  for (const auto& [name, b] : c.log_hr) {
    auto it = z.find(name);
    if (it != z.end()) eta += b * it->second;
  }
  for (const auto& tv : c.time_varying) {
    auto it = z.find(tv.covariate);
    if (it != z.end()) eta += tv.at(t) * it->second;
  }
  return eta;
}

}  // namespace detail

/// Draws one cohort. Subject i uses its own generator seeded from (seed, i), so
/// any subset of subjects can be regenerated independently.
inline SimulatedCohort simulate_cohort(const Scenario& scenario) {
  const double g = scenario.shape();
  const int width = static_cast<int>(fmt::format("{}", scenario.n).size());
  const std::string exposure = scenario.exposure ? scenario.exposure->name : std::string();

  // time points where some multiplier may change, shared by all subjects
  std::set<double> fixed_breaks;
  for (const auto& c : scenario.causes) {
    if (c.baseline.kind == BaselineHazard::Kind::piecewise)
      fixed_breaks.insert(c.baseline.cutpoints.begin(), c.baseline.cutpoints.end());
    for (const auto& tv : c.time_varying) fixed_breaks.insert(tv.cutpoints.begin(), tv.cutpoints.end());
  }

  std::vector<std::string> names;
  for (const auto& gen : scenario.covariates) names.push_back(gen.name);
  std::vector<Episode> episodes;
  std::vector<TimelineRecord> records;
  std::map<int, std::size_t> event_counts;
  std::size_t censored = 0;
  const boost::math::normal normal;

  for (std::size_t i = 0; i < scenario.n; ++i) {
    auto engine = replicate_engine(scenario.seed, i);
    const std::string id = fmt::format("s{:0{}}", i + 1, width);
    std::map<std::string, double> z;
    std::vector<double> values;
    for (const auto& gen : scenario.covariates) {
      const double u = detail::open_uniform(engine);
      double v = 0.0;
      switch (gen.kind) {
        case CovariateGenerator::Kind::bernoulli: v = u < gen.a ? 1.0 : 0.0; break;
        case CovariateGenerator::Kind::normal: v = gen.a + gen.b * boost::math::quantile(normal, u); break;
        case CovariateGenerator::Kind::uniform: v = gen.a + (gen.b - gen.a) * u; break;
      }
      z[gen.name] = v;
      values.push_back(v);
    }
    const double entry = scenario.entry_max * detail::open_uniform(engine);
    const double switch_time =
        scenario.exposure ? entry + detail::draw_exponential(engine, scenario.exposure->rate) : HUGE_VAL;
    double budget = detail::draw_exponential(engine, 1.0);
    const double cause_u = detail::open_uniform(engine);
    double censor = entry + detail::draw_exponential(engine, scenario.censoring.dropout_rate);
    const double accrual_u = detail::open_uniform(engine);
    if (scenario.censoring.admin)
      censor = std::min(censor, entry + *scenario.censoring.admin - scenario.censoring.accrual * accrual_u);

    // multiplier of g t^(g-1) for each cause at time t (right-continuous in t)
    const auto contributions = [&](double t) {
      auto zt = z;
      if (scenario.exposure) zt[exposure] = t > switch_time ? 1.0 : 0.0;
      std::vector<double> out;
      for (const auto& c : scenario.causes) out.push_back(c.baseline.scale(t) * std::exp(detail::cause_eta(c, zt, t)));
      return out;
    };
    std::vector<double> breaks;
    for (double b : fixed_breaks)
      if (b > entry) breaks.push_back(b);
    if (switch_time > entry && std::isfinite(switch_time)) breaks.push_back(switch_time);
    std::sort(breaks.begin(), breaks.end());
    breaks.push_back(HUGE_VAL);

    double event_time = HUGE_VAL;
    double lo = entry;
    for (double hi : breaks) {
      const auto parts = contributions(std::isfinite(hi) ? 0.5 * (lo + hi) : lo + 1.0);
      double m = 0.0;
      for (double p : parts) m += p;
      const double mass = std::isfinite(hi) ? m * (std::pow(hi, g) - std::pow(lo, g)) : HUGE_VAL;
      if (m > 0 && mass >= budget) {
        event_time = std::pow(std::pow(lo, g) + budget / m, 1.0 / g);
        break;
      }
      if (std::isfinite(mass)) budget -= mass;
      lo = hi;
      if (!std::isfinite(lo)) break;
    }

    Episode e{id, entry, std::min(event_time, censor), 0, std::nullopt, values};
    if (event_time <= censor && std::isfinite(event_time)) {
      const auto parts = contributions(event_time);
      double m = 0.0;
      for (double p : parts) m += p;
      double acc = 0.0;
      e.status = scenario.causes.back().code;
      for (std::size_t k = 0; k < parts.size(); ++k) {
        acc += parts[k];
        if (cause_u * m < acc) {
          e.status = scenario.causes[k].code;
          break;
        }
      }
      ++event_counts[e.status];
    } else {
      ++censored;
    }
    if (!(e.tstop > e.tstart)) e.tstop = std::nextafter(e.tstart, HUGE_VAL);
    if (scenario.exposure && switch_time < e.tstop) records.push_back({id, switch_time, exposure, 1.0});
    episodes.push_back(std::move(e));
  }

  std::map<int, std::string> labels;
  for (const auto& c : scenario.causes) labels[c.code] = c.label;
  CohortTable base(std::move(episodes), names, labels, "time");
  Timeline timeline(std::move(records));
  nlohmann::json truth = to_json(scenario);
  truth["weibull_shape"] = g;
  nlohmann::json counts = nlohmann::json::object();
  for (const auto& [code, count] : event_counts) counts[std::to_string(code)] = count;
  truth["realised"] = {{"events", counts}, {"censored", censored}, {"switches", timeline.records().size()}};
  if (!scenario.exposure) return {std::move(base), std::move(timeline), std::move(truth)};
  MergeOptions merge;
  merge.baselines[exposure] = 0.0;
  auto merged = merge_timeline(base, timeline, merge);
  return {std::move(merged.cohort), std::move(timeline), std::move(truth)};
}

/// Simulated cause-specific cumulative baseline hazard (covariates at 0).
inline double true_cumulative_hazard(const Scenario& scenario, int cause, double t) {
  for (const auto& c : scenario.causes)
    if (c.code == cause) return c.baseline.cumulative(t);
  throw ConfigError(fmt::format("scenario has no cause {}", cause));
}

// ---------------------------------------------------------------------------
// Immortal-time miscoding

enum class MiscodingMode { ever_treated, total_dose };

/// Recodes the timeline exposure as a time-fixed covariate using information
/// from the whole follow-up: `ever_treated` sets it to 1 from entry for anyone
/// who ever switches, `total_dose` to the total exposed duration. Episodes split
/// only for the exposure are rejoined. The result is marked tainted.
inline CohortTable inject_immortal_time_bias(const CohortTable& cohort, const Timeline& timeline, MiscodingMode mode,
                                             std::string variable = {}) {
  if (variable.empty()) {
    const auto vars = timeline.variables();
    if (vars.size() != 1) throw ConfigError("name the exposure variable: the timeline holds " +
                                            std::to_string(vars.size()) + " variables");
    variable = vars.front();
  }
  const auto c = cohort.covariate_index(variable);
  std::vector<Episode> out;
  for (std::size_t s = 0; s < cohort.subject_count(); ++s) {
    const auto episodes = cohort.subject(s);
    const auto& id = episodes.front().subject_id;
    const auto history = timeline.history(id, variable);
    double coded = 0.0;
    if (mode == MiscodingMode::ever_treated) {
      for (const auto& r : history)
        if (r.time < episodes.back().tstop && r.value != 0.0) coded = 1.0;
    } else {
      for (const auto& e : episodes)
        if (e.covariates[c] != 0.0) coded += e.tstop - e.tstart;
    }
    std::vector<Episode> joined;
    for (const auto& e : episodes) {
      Episode piece = e;
      piece.covariates[c] = coded;
      if (!joined.empty() && joined.back().tstop == piece.tstart && joined.back().covariates == piece.covariates &&
          joined.back().status == 0 && joined.back().stratum == piece.stratum) {
        joined.back().tstop = piece.tstop;
        joined.back().status = piece.status;
      } else {
        joined.push_back(std::move(piece));
      }
    }
    out.insert(out.end(), joined.begin(), joined.end());
  }
  auto kinds = cohort.covariate_kinds();
  kinds[c] = CovariateKind::fixed;
  CohortTable miscoded(std::move(out), cohort.covariate_names(), cohort.cause_labels(), cohort.time_axis(),
                       std::move(kinds));
  return miscoded.with_taint(mode == MiscodingMode::ever_treated ? "immortal time: ever-treated coding of " + variable
                                                                 : "immortal time: total-dose coding of " + variable);
}

}  // namespace survkit

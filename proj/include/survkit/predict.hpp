#pragma once

// Absolute-risk prediction from fitted Cox models: survival and competing-risk
// cumulative incidence for a covariate profile, landmark refits, g-formula
// standardization and attributable events.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "survkit/cox.hpp"

namespace survkit {

/// Covariate values for prediction. `stratum` is required for models stratified
/// on the episode stratum label; for covariate strata the column value is used.
struct CovariateProfile {
  std::map<std::string, double> values;
  std::optional<std::string> stratum;
};

struct RiskCurve {
  StepFunction risk;  // F(t | Z) for t >= origin, 0 at the origin
  double origin = 0.0;
  double horizon = 0.0;  // last baseline jump; the curve is flat beyond it
  std::optional<int> cause;

  double operator()(double t) const { return t < origin ? 0.0 : risk(t); }
  bool beyond_support(double t) const { return t > horizon; }
};

namespace detail {

/// Total person-time of a design; unchanged by episode splitting.
inline double follow_up(const CoxDesign& d) {
  double total = 0.0;
  for (std::size_t i = 0; i < d.tstart.size(); ++i) total += d.tstop[i] - d.tstart[i];
  return total;
}

/// Source columns a model reads (terms plus a covariate stratum column).
inline std::vector<std::string> model_columns(const ModelSpec& spec) {
  std::vector<std::string> out;
  const auto add = [&](const std::string& c) {
    if (std::find(out.begin(), out.end(), c) == out.end()) out.push_back(c);
  };
  for (const auto& t : spec.terms) {
    add(t.covariate);
    if (t.kind == Term::Kind::interaction) add(t.other);
  }
  if (spec.strata && *spec.strata != "stratum") add(*spec.strata);
  return out;
}

/// Resolved profile: source-layout covariate vector and stratum index of one fit.
struct ResolvedProfile {
  std::vector<double> z;
  std::size_t stratum = 0;
};

inline ResolvedProfile resolve_profile(const CoxFit& fit, const CovariateProfile& profile) {
  const CoxDesign& d = *fit.design;
  ResolvedProfile out;
  out.z.assign(d.source_columns.size(), 0.0);
  for (const auto& name : model_columns(fit.spec)) {
    const auto c = static_cast<std::size_t>(
        std::find(d.source_columns.begin(), d.source_columns.end(), name) - d.source_columns.begin());
    if (d.source_kinds[c] == CovariateKind::internal)
      throw ConfigError("cannot predict from a model with internal time-dependent covariate '" + name + "'");
    auto it = profile.values.find(name);
    if (it == profile.values.end()) throw ConfigError("covariate profile has no value for '" + name + "'");
    out.z[c] = it->second;
  }
  std::string label = "all";
  if (fit.spec.strata) {
    if (*fit.spec.strata == "stratum") {
      if (!profile.stratum) throw ConfigError("covariate profile needs a stratum for a stratified model");
      label = *profile.stratum;
    } else {
      label = text::full(profile.values.at(*fit.spec.strata));
    }
  }
  auto s = fit.stratum_index(label);
  if (!s) throw ConfigError("stratum '" + label + "' does not occur in the fitted data");
  out.stratum = *s;
  return out;
}

/// Profile-specific hazard increments after `t_pred`: dL0(u) * exp(eta(Z, u)).
inline std::vector<Jump> profile_jumps(const CoxFit& fit, const ResolvedProfile& p, double t_pred) {
  const RowBuilder builder(fit.spec, fit.design->source_columns);
  std::vector<Jump> out;
  std::vector<double> row;
  for (const auto& j : fit.baseline_jumps[p.stratum]) {
    if (j.time <= t_pred) continue;
    row.clear();
    builder.append(p.z, j.time, row);
    double eta = 0.0;
    for (std::size_t k = 0; k < row.size(); ++k) eta += row[k] * fit.beta(static_cast<Eigen::Index>(k));
    out.push_back({j.time, j.size * std::exp(eta)});
  }
  return out;
}

}  // namespace detail

/// F(t | Z) = 1 - exp(-(L(t | Z) - L(t_pred | Z))) with L summing baseline
/// increments times exp(eta(Z, u)); the prediction is conditional on T > t_pred.
inline RiskCurve predict_survival(const CoxFit& fit, const CovariateProfile& profile, double t_pred) {
  const auto p = detail::resolve_profile(fit, profile);
  RiskCurve out;
  out.origin = t_pred;
  out.horizon = fit.baseline[p.stratum].last_time();
  out.cause = fit.spec.cause;
  out.risk.origin = t_pred;
  out.risk.initial = 0.0;
  double cumulative = 0.0;
  for (const auto& j : detail::profile_jumps(fit, p, t_pred)) {
    cumulative += j.size;
    out.risk.push(j.time, 1.0 - std::exp(-cumulative));
  }
  return out;
}

/// How the all-cause survival before u enters the cumulative incidence sum.
enum class IncidenceForm {
  /// S(u-) = product over earlier times of (1 - sum_k dL_k): reduces to
  /// Aalen-Johansen for covariate-free models.
  product_limit,
  /// S(u-) = exp(-L(u-)), with each cause taking its share dL_k / dL of
  /// exp(-L(u-)) - exp(-L(u)): reduces to predict_survival for one cause.
  exponential,
};

struct CumulativeIncidencePrediction {
  std::map<int, RiskCurve> incidence;
  StepFunction survival;  // all-cause, conditional on T > t_pred
};

/// Cumulative incidence of every cause from cause-specific fits on the pooled
/// grid of their event times.
inline CumulativeIncidencePrediction predict_cuminc(const std::vector<const CoxFit*>& fits,
                                                    const CovariateProfile& profile, double t_pred,
                                                    IncidenceForm form = IncidenceForm::product_limit) {
  if (fits.empty()) throw ConfigError("cumulative incidence needs at least one cause-specific fit");
  std::vector<const CoxFit*> sorted = fits;
  std::set<int> causes;
  for (const auto* f : sorted) {
    if (!f->spec.cause) throw ConfigError("cause-specific fits must each name one cause");
    if (!causes.insert(*f->spec.cause).second)
      throw ConfigError(fmt::format("cause {} is modelled more than once", *f->spec.cause));
    if (f->design->time_axis != sorted.front()->design->time_axis ||
        f->design->subject_ids != sorted.front()->design->subject_ids ||
        std::abs(detail::follow_up(*f->design) - detail::follow_up(*sorted.front()->design)) >
            1e-9 * detail::follow_up(*f->design))
      throw ConfigError("cause-specific fits must share the cohort and time axis");
  }
  std::sort(sorted.begin(), sorted.end(), [](auto a, auto b) { return *a->spec.cause < *b->spec.cause; });

  // per-time increments, one slot per cause
  std::map<double, std::vector<double>> grid;
  double horizon = -HUGE_VAL;
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    const auto p = detail::resolve_profile(*sorted[k], profile);
    horizon = std::max(horizon, sorted[k]->baseline[p.stratum].last_time());
    for (const auto& j : detail::profile_jumps(*sorted[k], p, t_pred)) {
      auto& slot = grid[j.time];
      slot.resize(sorted.size(), 0.0);
      slot[k] = j.size;
    }
  }

  CumulativeIncidencePrediction out;
  std::vector<double> cumulative(sorted.size(), 0.0);
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    RiskCurve c;
    c.origin = t_pred;
    c.horizon = horizon;
    c.cause = sorted[k]->spec.cause;
    c.risk.origin = t_pred;
    out.incidence[*c.cause] = std::move(c);
  }
  out.survival.origin = t_pred;
  out.survival.initial = 1.0;

  double surv = 1.0;   // product-limit S(u-)
  double total = 0.0;  // L(u-)
  for (const auto& [t, increments] : grid) {
    double hazard = 0.0;
    for (double h : increments) hazard += h;
    if (form == IncidenceForm::product_limit) {
      // hazards summing past 1 exhaust the remaining survival
      const double scale = hazard > 1.0 ? 1.0 / hazard : 1.0;
      for (std::size_t k = 0; k < sorted.size(); ++k) cumulative[k] += surv * (increments[k] * scale);
      surv = hazard > 1.0 ? 0.0 : surv * (1.0 - hazard);
    } else {
      const double before = std::exp(-total);
      const double after = std::exp(-(total + hazard));
      for (std::size_t k = 0; k < sorted.size(); ++k)
        if (increments[k] > 0) cumulative[k] += (before - after) * (increments[k] / hazard);
      total += hazard;
      surv = after;
    }
    for (std::size_t k = 0; k < sorted.size(); ++k)
      out.incidence[*sorted[k]->spec.cause].risk.push(t, cumulative[k]);
    out.survival.push(t, surv);
  }
  return out;
}

/// Episodes of subjects under observation just after t_lm (tstart <= t_lm < tstop),
/// restarted at t_lm, covariates frozen at their value in force at t_lm, and
/// administratively censored at t_lm + window.
inline CohortTable landmark_cohort(const CohortTable& cohort, double t_lm, double window) {
  if (!(window > 0)) throw ConfigError("landmark window must be positive");
  const double end = t_lm + window;
  std::vector<Episode> out;
  for (std::size_t s = 0; s < cohort.subject_count(); ++s) {
    const auto episodes = cohort.subject(s);
    const Episode* current = nullptr;
    for (const auto& e : episodes)
      if (e.tstart <= t_lm && t_lm < e.tstop) current = &e;
    if (!current) continue;
    for (const auto& e : episodes) {
      if (e.tstop <= t_lm || e.tstart >= end) continue;
      Episode piece = e;
      piece.tstart = std::max(e.tstart, t_lm);
      if (e.tstop > end) {
        piece.tstop = end;
        piece.status = 0;
      }
      piece.covariates = current->covariates;
      piece.stratum = current->stratum;
      out.push_back(std::move(piece));
    }
  }
  if (out.empty()) throw DataError("no subject is at risk at the landmark time " + text::sig6(t_lm));
  // frozen values no longer change with time
  std::vector<CovariateKind> kinds(cohort.covariate_names().size(), CovariateKind::fixed);
  return CohortTable(std::move(out), cohort.covariate_names(), cohort.cause_labels(), cohort.time_axis(),
                     std::move(kinds));
}

/// Cox fit on the landmark data set at t_lm, keeping the original time origin.
inline CoxFit landmark_fit(const CohortTable& cohort, double t_lm, double window, const ModelSpec& spec,
                           const CoxOptions& options = {}) {
  const CohortTable data = landmark_cohort(cohort, t_lm, window);
  const bool any = std::any_of(data.episodes().begin(), data.episodes().end(), [&](const Episode& e) {
    return spec.cause ? e.status == *spec.cause : e.status != 0;
  });
  if (!any)
    throw DataError(fmt::format("no events in the landmark window ({}, {}]", text::sig6(t_lm),
                                text::sig6(t_lm + window)));
  return fit_cox(data, spec, options);
}

struct CausalContrast {
  std::string treatment;
  std::vector<double> times;
  std::vector<double> risk_untreated;  // P(T*(0) <= t)
  std::vector<double> risk_treated;    // P(T*(1) <= t)
  std::vector<double> difference;      // risk_untreated - risk_treated
  static constexpr const char* difference_label = "risk(a=0) - risk(a=1)";
  // percentile bootstrap limits, empty unless requested
  std::vector<double> difference_lower;
  std::vector<double> difference_upper;
  int replicates = 0;
};

namespace detail {

/// Per-subject baseline covariate profiles; every model column must be constant within subject.
inline std::vector<CovariateProfile> baseline_profiles(const CoxFit& fit, const CohortTable& cohort) {
  const auto columns = model_columns(fit.spec);
  std::vector<std::size_t> index;
  for (const auto& c : columns) {
    index.push_back(cohort.covariate_index(c));
    if (cohort.kind(c) == CovariateKind::internal)
      throw ConfigError("standardization needs time-fixed covariates; '" + c + "' is time-dependent");
  }
  std::vector<CovariateProfile> out;
  for (std::size_t s = 0; s < cohort.subject_count(); ++s) {
    const auto episodes = cohort.subject(s);
    CovariateProfile p;
    p.stratum = episodes.front().stratum;
    for (std::size_t k = 0; k < columns.size(); ++k) {
      const double v = episodes.front().covariates[index[k]];
      for (const auto& e : episodes)
        if (e.covariates[index[k]] != v)
          throw ConfigError("standardization needs time-fixed covariates; '" + columns[k] +
                            "' changes within subject " + e.subject_id);
      p.values[columns[k]] = v;
    }
    out.push_back(std::move(p));
  }
  return out;
}

inline void check_binary_treatment(const CoxFit& fit, const std::string& treatment) {
  const auto columns = model_columns(fit.spec);
  if (std::find(columns.begin(), columns.end(), treatment) == columns.end())
    throw ConfigError("treatment '" + treatment + "' is not in the model");
  if (fit.spec.strata && *fit.spec.strata == treatment)
    throw ConfigError("treatment '" + treatment + "' is a stratification variable");
}

inline double prediction_origin(const CoxFit& fit) {
  return *std::min_element(fit.design->tstart.begin(), fit.design->tstart.end());
}

/// Mean predicted risk of `cause` at each time with the treatment set to `a`
/// (or left as observed when `a` is unset). Identical profiles are predicted once
/// and weighted by their share, so a single distinct profile reproduces the
/// direct prediction exactly.
inline std::vector<double> standardized_risk(const std::vector<const CoxFit*>& fits, int cause,
                                             const std::vector<CovariateProfile>& profiles,
                                             const std::string& treatment, std::optional<double> a,
                                             const std::vector<double>& times, bool sum = false) {
  const double origin = prediction_origin(*fits.front());
  std::map<std::pair<std::optional<std::string>, std::map<std::string, double>>, std::size_t> distinct;
  for (auto p : profiles) {
    if (a) p.values[treatment] = *a;
    ++distinct[{p.stratum, p.values}];
  }
  std::vector<double> total(times.size(), 0.0);
  for (const auto& [key, count] : distinct) {
    const CovariateProfile p{key.second, key.first};
    const double w = sum ? static_cast<double>(count)
                         : static_cast<double>(count) / static_cast<double>(profiles.size());
    if (fits.size() == 1) {
      const auto curve = predict_survival(*fits.front(), p, origin);
      for (std::size_t i = 0; i < times.size(); ++i) total[i] += w * curve(times[i]);
    } else {
      const auto ci = predict_cuminc(fits, p, origin);
      const auto& curve = ci.incidence.at(cause);
      for (std::size_t i = 0; i < times.size(); ++i) total[i] += w * curve(times[i]);
    }
  }
  return total;
}

}  // namespace detail

/// One seeded generator per replicate: replicate k draws from seed_seq(seed, k)
/// whatever the evaluation order.
inline std::mt19937_64 replicate_engine(std::uint64_t seed, std::uint64_t replicate) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(replicate), static_cast<std::uint32_t>(replicate >> 32)};
  return std::mt19937_64(seq);
}

/// Cohort of subjects drawn with replacement; copies get distinct ids.
inline CohortTable bootstrap_sample(const CohortTable& cohort, std::mt19937_64& engine) {
  const std::size_t n = cohort.subject_count();
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<Episode> out;
  for (std::size_t k = 0; k < n; ++k) {
    const auto episodes = cohort.subject(pick(engine));
    for (auto e : episodes) {
      e.subject_id += fmt::format("#{}", k);
      out.push_back(std::move(e));
    }
  }
  return CohortTable(std::move(out), cohort.covariate_names(), cohort.cause_labels(), cohort.time_axis(),
                     cohort.covariate_kinds());
}

struct GFormulaOptions {
  int bootstrap_replicates = 0;  // 0 skips the bootstrap
  std::uint64_t seed = 1;
  double level = 0.95;
  /// Target cause when several cause-specific fits are given (default: the first fit's cause).
  std::optional<int> cause;
};

/// P(T*(a) <= t) = mean over subjects of F(t | a, Z_i) for a = 0, 1. With
/// several cause-specific fits the risk is the cumulative incidence of the target cause.
inline CausalContrast g_formula(const std::vector<const CoxFit*>& fits, const CohortTable& cohort,
                                const std::string& treatment, const std::vector<double>& times,
                                const GFormulaOptions& options = {}) {
  if (fits.empty()) throw ConfigError("g-formula needs a fitted model");
  for (const auto* f : fits) detail::check_binary_treatment(*f, treatment);
  const int cause = options.cause.value_or(fits.front()->spec.cause.value_or(1));
  std::vector<CovariateProfile> profiles;
  for (const auto* f : fits) {
    auto p = detail::baseline_profiles(*f, cohort);
    if (profiles.empty()) {
      profiles = std::move(p);
    } else {
      for (std::size_t i = 0; i < p.size(); ++i) profiles[i].values.insert(p[i].values.begin(), p[i].values.end());
    }
  }
  for (const auto& p : profiles) {
    const double v = p.values.at(treatment);
    if (v != 0.0 && v != 1.0) throw ConfigError("treatment '" + treatment + "' must be coded 0/1");
  }

  CausalContrast out;
  out.treatment = treatment;
  out.times = times;
  out.risk_untreated = detail::standardized_risk(fits, cause, profiles, treatment, 0.0, times);
  out.risk_treated = detail::standardized_risk(fits, cause, profiles, treatment, 1.0, times);
  for (std::size_t i = 0; i < times.size(); ++i) out.difference.push_back(out.risk_untreated[i] - out.risk_treated[i]);

  if (options.bootstrap_replicates > 0) {
    std::vector<std::vector<double>> draws(times.size());
    for (int r = 0; r < options.bootstrap_replicates; ++r) {
      auto engine = replicate_engine(options.seed, static_cast<std::uint64_t>(r));
      const CohortTable sample = bootstrap_sample(cohort, engine);
      std::vector<CoxFit> refits;
      try {
        for (const auto* f : fits) refits.push_back(f->spec.terms.empty() ? null_model(sample, f->spec)
                                                                           : fit_cox(sample, f->spec));
      } catch (const Error&) {
        continue;  // degenerate resample; dropped from the percentile set
      }
      std::vector<const CoxFit*> pointers;
      for (const auto& f : refits) pointers.push_back(&f);
      const auto sample_profiles = detail::baseline_profiles(refits.front(), sample);
      std::vector<CovariateProfile> merged = sample_profiles;
      for (std::size_t k = 1; k < refits.size(); ++k) {
        const auto more = detail::baseline_profiles(refits[k], sample);
        for (std::size_t i = 0; i < more.size(); ++i) merged[i].values.insert(more[i].values.begin(), more[i].values.end());
      }
      const auto r0 = detail::standardized_risk(pointers, cause, merged, treatment, 0.0, times);
      const auto r1 = detail::standardized_risk(pointers, cause, merged, treatment, 1.0, times);
      for (std::size_t i = 0; i < times.size(); ++i) draws[i].push_back(r0[i] - r1[i]);
    }
    const double alpha = (1.0 - options.level) / 2.0;
    for (auto& d : draws) {
      out.difference_lower.push_back(d.empty() ? NAN : quantile(d, alpha));
      out.difference_upper.push_back(d.empty() ? NAN : quantile(d, 1.0 - alpha));
    }
    out.replicates = static_cast<int>(draws.empty() ? 0 : draws.front().size());
  }
  return out;
}

inline CausalContrast g_formula(const CoxFit& fit, const CohortTable& cohort, const std::string& treatment,
                                const std::vector<double>& times, const GFormulaOptions& options = {}) {
  return g_formula(std::vector<const CoxFit*>{&fit}, cohort, treatment, times, options);
}

/// Expected events by time t attributable to the factor: sum_i F(t | A_i, Z_i) -
/// sum_i F(t | 0, Z_i). Negative values mean the factor prevents events.
inline double attributable_events(const CoxFit& fit, const CohortTable& cohort, const std::string& factor, double t) {
  detail::check_binary_treatment(fit, factor);
  const auto profiles = detail::baseline_profiles(fit, cohort);
  const std::vector<const CoxFit*> fits{&fit};
  const int cause = fit.spec.cause.value_or(1);
  const double observed = detail::standardized_risk(fits, cause, profiles, factor, std::nullopt, {t}, true)[0];
  const double unexposed = detail::standardized_risk(fits, cause, profiles, factor, 0.0, {t}, true)[0];
  return observed - unexposed;
}

}  // namespace survkit

#pragma once

// Reporting: structured fit summaries with stable field names, hazard-ratio
// tables laid out as rows of covariates against column groups of models, and
// delimited exports of risk curves and standardized contrasts.

#include <algorithm>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "survkit/diagnostics.hpp"
#include "survkit/predict.hpp"
#include "survkit/rates.hpp"

namespace survkit {

inline double two_sided_p(double z) { return chi_squared_pvalue(z * z, 1.0); }

inline nlohmann::json cox_summary_json(const CoxFit& fit, double level = 0.95) {
  nlohmann::json j;
  j["model"] = "cox";
  j["ties"] = to_string(fit.spec.ties);
  j["cause"] = fit.spec.cause ? nlohmann::json(*fit.spec.cause) : nlohmann::json(nullptr);
  j["strata"] = fit.strata_labels;
  j["time_axis"] = fit.design->time_axis;
  j["n_subjects"] = fit.n_subjects;
  j["n_events"] = fit.n_events;
  j["n_rows"] = fit.n_rows;
  j["iterations"] = fit.iterations;
  j["loglik"] = fit.loglik;
  j["loglik_null"] = fit.loglik_null;
  j["level"] = level;
  j["coefficients"] = nlohmann::json::array();
  for (std::size_t k = 0; k < fit.names.size(); ++k) {
    const double b = fit.beta(static_cast<Eigen::Index>(k));
    const double se = fit.se(k);
    const auto [lo, hi] = fit.hazard_ratio_ci(k, level);
    j["coefficients"].push_back({{"name", fit.names[k]},
                                 {"beta", b},
                                 {"se", se},
                                 {"hr", std::exp(b)},
                                 {"hr_lower", lo},
                                 {"hr_upper", hi},
                                 {"z", b / se},
                                 {"p", two_sided_p(b / se)}});
  }
  if (!fit.names.empty()) {
    const auto t = model_tests(fit);
    j["tests"] = {{"wald", {{"chisq", t.wald_chisq}, {"df", t.wald_df}, {"p", t.wald_p}}},
                  {"lr", {{"chisq", t.lr_chisq}, {"df", t.lr_df}, {"p", t.lr_p}}}};
  }
  return j;
}

inline nlohmann::json poisson_summary_json(const PoissonFit& fit, double level = 0.95) {
  const double z = normal_quantile(0.5 + level / 2.0);
  nlohmann::json j;
  j["model"] = "poisson";
  j["deviance"] = fit.deviance;
  j["df_residual"] = fit.df_residual;
  j["iterations"] = fit.iterations;
  j["level"] = level;
  j["coefficients"] = nlohmann::json::array();
  for (std::size_t k = 0; k < fit.names.size(); ++k) {
    const double b = fit.coefficients(static_cast<Eigen::Index>(k));
    const double se = fit.se(k);
    j["coefficients"].push_back({{"name", fit.names[k]},
                                 {"coef", b},
                                 {"se", se},
                                 {"rate_ratio", std::exp(b)},
                                 {"lower", std::exp(b - z * se)},
                                 {"upper", std::exp(b + z * se)},
                                 {"z", b / se},
                                 {"p", two_sided_p(b / se)}});
  }
  return j;
}

inline nlohmann::json ph_test_json(const PhTest& t) {
  nlohmann::json j;
  j["transform"] = to_string(t.transform);
  j["terms"] = nlohmann::json::array();
  for (std::size_t k = 0; k < t.names.size(); ++k)
    j["terms"].push_back({{"name", t.names[k]}, {"chisq", t.chisq[k]}, {"df", 1}, {"p", t.p[k]}});
  j["global"] = {{"chisq", t.global_chisq}, {"df", t.global_df}, {"p", t.global_p}};
  return j;
}

// ---------------------------------------------------------------------------
// Hazard-ratio tables

struct HrCell {
  double hr = 1.0;
  double lower = 1.0;
  double upper = 1.0;
};

/// Ratio estimates of one model keyed by coefficient name.
struct HrColumn {
  std::vector<std::string> names;
  std::vector<HrCell> cells;

  std::optional<HrCell> find(std::string_view name) const {
    for (std::size_t k = 0; k < names.size(); ++k)
      if (names[k] == name) return cells[k];
    return std::nullopt;
  }
};

inline HrColumn hr_column(const CoxFit& fit, double level = 0.95) {
  HrColumn c;
  for (std::size_t k = 0; k < fit.names.size(); ++k) {
    const auto [lo, hi] = fit.hazard_ratio_ci(k, level);
    c.names.push_back(fit.names[k]);
    c.cells.push_back({fit.hazard_ratio(k), lo, hi});
  }
  return c;
}

/// Rate ratios of a Poisson fit, intercept excluded.
inline HrColumn hr_column(const PoissonFit& fit, double level = 0.95) {
  const double z = normal_quantile(0.5 + level / 2.0);
  HrColumn c;
  for (std::size_t k = 1; k < fit.names.size(); ++k) {
    const double b = fit.coefficients(static_cast<Eigen::Index>(k));
    c.names.push_back(fit.names[k]);
    c.cells.push_back({std::exp(b), std::exp(b - z * fit.se(k)), std::exp(b + z * fit.se(k))});
  }
  return c;
}

struct HrRow {
  std::string label;
  std::vector<std::optional<HrCell>> cells;  // one per column group
  std::string extra;                         // e.g. an interaction p-value
};

struct HrSection {
  std::string title;  // empty for an untitled block
  std::vector<HrRow> rows;
};

/// Covariates down the side, one HR / CI pair per column group, optional
/// trailing column; sections stack blocks of rows under their own headings.
struct HrTable {
  std::vector<std::string> groups;
  std::string extra_title;
  std::vector<HrSection> sections;
  int decimals = 2;  // negative: 6 significant digits

  /// Appends a section whose rows pick coefficient `name` from each column.
  HrSection& add_section(std::string title, const std::vector<std::pair<std::string, std::string>>& rows,
                         const std::vector<HrColumn>& columns) {
    HrSection section{std::move(title), {}};
    for (const auto& [label, name] : rows) {
      HrRow row{label, {}, {}};
      for (const auto& c : columns) row.cells.push_back(c.find(name));
      section.rows.push_back(std::move(row));
    }
    sections.push_back(std::move(section));
    return sections.back();
  }
};

inline void write_hr_table(const HrTable& table, std::ostream& out) {
  const auto emit = [&](std::string line) {
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out << line << '\n';
  };
  const auto num = [&](double v) {
    return table.decimals < 0 ? text::sig6(v) : fmt::format("{:.{}f}", v, table.decimals);
  };
  std::size_t label_width = 0;
  for (const auto& s : table.sections)
    for (const auto& r : s.rows) label_width = std::max(label_width, r.label.size());
  std::size_t hr_width = 2, ci_width = 6;
  for (const auto& s : table.sections)
    for (const auto& r : s.rows)
      for (const auto& c : r.cells)
        if (c) {
          hr_width = std::max(hr_width, num(c->hr).size());
          ci_width = std::max(ci_width, fmt::format("({}-{})", num(c->lower), num(c->upper)).size());
        }
  for (const auto& g : table.groups) ci_width = std::max(ci_width, g.size() > hr_width + 2 ? g.size() - hr_width - 2 : 0);
  const std::size_t group_width = hr_width + 2 + ci_width;

  std::string line = fmt::format("{:<{}}", "", label_width);
  for (const auto& g : table.groups) line += fmt::format("  {:<{}}", g, group_width);
  if (!table.extra_title.empty()) line += "  p";
  emit(line);
  line = fmt::format("{:<{}}", "", label_width);
  for (std::size_t g = 0; g < table.groups.size(); ++g)
    line += fmt::format("  {:<{}}  {:<{}}", "HR", hr_width, "95% CI", ci_width);
  if (!table.extra_title.empty()) line += "  " + table.extra_title;
  emit(line);
  const std::size_t total = label_width + table.groups.size() * (group_width + 2) +
                            (table.extra_title.empty() ? 0 : table.extra_title.size() + 2);
  out << std::string(total, '-') << '\n';
  for (const auto& s : table.sections) {
    if (!s.title.empty()) out << "[" << s.title << "]\n";
    for (const auto& r : s.rows) {
      line = fmt::format("{:<{}}", r.label, label_width);
      for (const auto& c : r.cells) {
        if (c)
          line += fmt::format("  {:>{}}  {:<{}}", num(c->hr), hr_width,
                              fmt::format("({}-{})", num(c->lower), num(c->upper)), ci_width);
        else
          line += fmt::format("  {:<{}}", "", group_width);
      }
      if (!r.extra.empty()) line += "  " + r.extra;
      emit(line);
    }
  }
}

// ---------------------------------------------------------------------------
// Curves and contrasts

/// time, risk for one predicted curve (origin row first).
inline void write_risk_curve(const RiskCurve& curve, std::ostream& out) {
  out << "time,risk\n";
  out << text::sig6(curve.risk.origin) << ',' << text::sig6(curve.risk.initial) << '\n';
  for (std::size_t i = 0; i < curve.risk.size(); ++i)
    out << text::sig6(curve.risk.times[i]) << ',' << text::sig6(curve.risk.values[i]) << '\n';
}

inline void write_causal_contrast(const CausalContrast& c, std::ostream& out) {
  const bool ci = !c.difference_lower.empty();
  out << "time,risk_untreated,risk_treated,difference" << (ci ? ",difference_lower,difference_upper" : "") << '\n';
  for (std::size_t i = 0; i < c.times.size(); ++i) {
    out << text::sig6(c.times[i]) << ',' << text::sig6(c.risk_untreated[i]) << ',' << text::sig6(c.risk_treated[i])
        << ',' << text::sig6(c.difference[i]);
    if (ci) out << ',' << text::sig6(c.difference_lower[i]) << ',' << text::sig6(c.difference_upper[i]);
    out << '\n';
  }
}

inline nlohmann::json causal_contrast_json(const CausalContrast& c) {
  nlohmann::json j{{"treatment", c.treatment},
                   {"difference_definition", CausalContrast::difference_label},
                   {"times", c.times},
                   {"risk_untreated", c.risk_untreated},
                   {"risk_treated", c.risk_treated},
                   {"difference", c.difference}};
  if (!c.difference_lower.empty()) {
    j["difference_lower"] = c.difference_lower;
    j["difference_upper"] = c.difference_upper;
    j["bootstrap_replicates"] = c.replicates;
  }
  return j;
}

inline nlohmann::json step_function_json(const StepFunction& f) {
  nlohmann::json j{{"origin", f.origin}, {"initial", f.initial}, {"times", f.times}, {"values", f.values}};
  if (!f.variance.empty()) j["variance"] = f.variance;
  if (f.has_bands()) {
    j["lower"] = f.lower;
    j["upper"] = f.upper;
  }
  return j;
}

}  // namespace survkit

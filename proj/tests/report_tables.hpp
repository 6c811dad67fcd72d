#pragma once

// Paper-style hazard-ratio tables rendered from simulated cohorts. Shared by
// the golden-file tests and the acceptance binary.

#include <cstdlib>
#include <functional>

#include "helpers.hpp"

namespace report_tables {

using namespace survkit;

inline std::string render(const HrTable& t) {
  std::ostringstream out;
  write_hr_table(t, out);
  return out.str();
}

inline ModelSpec linear(std::vector<std::string> names, std::optional<int> cause = 1) {
  ModelSpec s;
  for (auto& n : names) s.terms.push_back(Term::linear(n));
  s.cause = cause;
  return s;
}

// Two-group cohort study with two competing causes of death.
inline SimulatedCohort study(std::uint64_t seed) {
  return simulate_cohort(scenario_from_json(
      {{"n", 1500},
       {"seed", seed},
       {"covariates",
        {{{"name", "pad"}, {"distribution", "bernoulli"}, {"p", 0.5}},
         {{"name", "male"}, {"distribution", "bernoulli"}, {"p", 0.62}},
         {{"name", "age10"}, {"distribution", "normal"}, {"mean", 0}, {"sd", 1}},
         {{"name", "hdl"}, {"distribution", "normal"}, {"mean", 1.3}, {"sd", 0.3}},
         {{"name", "ldl"}, {"distribution", "normal"}, {"mean", 3}, {"sd", 1}}}},
       {"causes",
        {{{"code", 1},
          {"label", "cv death"},
          {"baseline", {{"type", "constant"}, {"rate", 0.02}}},
          {"log_hr", {{"pad", 0.9}, {"male", 0.7}, {"age10", 0.65}, {"hdl", -0.5}, {"ldl", -0.1}}}},
         {{"code", 2},
          {"label", "other"},
          {"baseline", {{"type", "constant"}, {"rate", 0.015}}},
          {"log_hr", {{"pad", 0.7}, {"male", 0.75}, {"age10", 0.65}}}}}},
       {"censoring", {{"admin", 8.0}, {"accrual", 3.0}}}}));
}

inline CohortTable subset(const CohortTable& c, const std::string& column, double value) {
  const auto k = c.covariate_index(column);
  return select_subjects(c, [&](const Episode& e) { return e.covariates[k] == value; });
}

// Covariate blocks stacked under model headings, groups overall and by
// exposure, and a trailing interaction p-value column.
inline std::string interaction_table() {
  const auto sim = study(1);
  const auto& c = sim.cohort;
  const auto pad = subset(c, "pad", 1), ctrl = subset(c, "pad", 0);
  const auto overall = fit_cox(c, linear({"pad", "male", "age10"}));
  const auto in_pad = fit_cox(pad, linear({"male", "age10"}));
  const auto in_ctrl = fit_cox(ctrl, linear({"male", "age10"}));
  HrTable t;
  t.groups = {"Overall", "PAD", "Control"};
  t.extra_title = "PAD vs C";
  auto& section = t.add_section("Time since enrollment axis, Cox model",
                                {{"PAD", "pad"}, {"Sex (m vs. f)", "male"}, {"Age (per10yrs)", "age10"}},
                                {hr_column(overall), hr_column(in_pad), hr_column(in_ctrl)});
  for (std::size_t r = 1; r < section.rows.size(); ++r) {
    const std::string name = r == 1 ? "male" : "age10";
    ModelSpec spec = linear({"pad", "male", "age10"});
    spec.terms.push_back(Term::interaction("pad", name));
    const auto fit = fit_cox(c, spec);
    const std::size_t k = fit.names.size() - 1;
    section.rows[r].extra = fmt::format("{:.2f}", two_sided_p(fit.beta(k) / fit.se(k)));
  }
  // a second block on a Poisson fit with split follow-up
  const auto rates = tabulate_person_time(c, {TimeAxis{"time", {0, 2, 4, 6, 8, 11}, {}}}, {"pad", "male"}, 1);
  const auto poisson = fit_rate_model(rates, RateModelSpec{{RateTerm::axis("time"), RateTerm::factor("pad"),
                                                            RateTerm::factor("male")}});
  t.add_section("Poisson model", {{"PAD", "pad=1"}, {"Sex (m vs. f)", "male=1"}},
                {hr_column(poisson), HrColumn{}, HrColumn{}});
  return render(t);
}

inline std::string model_comparison_table() {
  const auto sim = study(2);
  const auto& c = sim.cohort;
  const std::vector<std::pair<std::string, std::string>> rows{{"PAD", "pad"},
                                                              {"Sex (m vs. f)", "male"},
                                                              {"Age (per10yrs)", "age10"},
                                                              {"HDL (mmol/l)", "hdl"},
                                                              {"LDL (mmol/l)", "ldl"}};
  const auto names = std::vector<std::string>{"pad", "male", "age10", "hdl", "ldl"};
  ModelSpec breslow = linear(names), efron = linear(names), any = linear(names, std::nullopt);
  efron.ties = Ties::efron;
  HrTable t;
  t.groups = {"A", "B", "C"};
  t.add_section("", rows, {hr_column(fit_cox(c, breslow)), hr_column(fit_cox(c, efron)), hr_column(fit_cox(c, any))});
  return render(t);
}

inline std::string single_column_table() {
  const auto sim = study(3);
  HrTable t;
  t.groups = {"Time-fixed, other cause"};
  t.add_section("",
                {{"PAD", "pad"}, {"Sex (m vs. f)", "male"}, {"Age (per 10 yrs)", "age10"}, {"HDL", "hdl"}, {"LDL", "ldl"}},
                {hr_column(fit_cox(sim.cohort, linear({"pad", "male", "age10", "hdl", "ldl"}, 2)))});
  return render(t);
}

// Unadjusted row block over adjusted rows, overall (stratified) and by sex.
inline std::string adjusted_table() {
  const auto sim = study(4);
  const auto& c = sim.cohort;
  const auto women = subset(c, "male", 0), men = subset(c, "male", 1);
  ModelSpec only = linear({"pad"}), adjusted = linear({"pad", "age10", "hdl", "ldl"});
  ModelSpec only_s = only, adjusted_s = adjusted;
  only_s.strata = adjusted_s.strata = "male";
  HrTable t;
  t.groups = {"Overall", "Females", "Males"};
  t.add_section("", {{"PAD only", "pad"}},
                {hr_column(fit_cox(c, only_s)), hr_column(fit_cox(women, only)), hr_column(fit_cox(men, only))});
  t.add_section("adjusted", {{"PAD", "pad"}, {"Age", "age10"}, {"HDL", "hdl"}, {"LDL", "ldl"}},
                {hr_column(fit_cox(c, adjusted_s)), hr_column(fit_cox(women, adjusted)),
                 hr_column(fit_cox(men, adjusted))});
  return render(t);
}

inline std::string categorical_table() {
  // diameter category drawn from a uniform score, expanded into indicators
  const auto sim = study(5);
  std::vector<Episode> eps = sim.cohort.episodes();
  for (auto& e : eps) {
    const double score = e.covariates[3] * 10 + e.covariates[4];  // hdl, ldl
    const int category = static_cast<int>(score) % 5;
    for (int k = 1; k <= 4; ++k) e.covariates.push_back(category == k ? 1.0 : 0.0);
  }
  auto names = sim.cohort.covariate_names();
  for (const char* n : {"diameter=<1cm", "diameter=1-2cm", "diameter=2-5cm", "diameter=>5cm"}) names.push_back(n);
  const CohortTable c(eps, names, sim.cohort.cause_labels());
  const auto fit = fit_cox(c, linear({"diameter=<1cm", "diameter=1-2cm", "diameter=2-5cm", "diameter=>5cm", "pad",
                                      "age10"}));
  HrTable t;
  t.groups = {""};
  t.add_section("",
                {{"Diameter<1cm", "diameter=<1cm"},
                 {"Diameter 1-2cm", "diameter=1-2cm"},
                 {"Diameter 2-5cm", "diameter=2-5cm"},
                 {"Diameter>5cm", "diameter=>5cm"},
                 {"FIGO (stage IV vs. III)", "pad"},
                 {"Karnofsky index (per 1 point)", "age10"}},
                {hr_column(fit)});
  return render(t);
}

inline std::string landmark_table() {
  const auto sim = study(6);
  const auto spec = linear({"pad", "male", "age10"});
  std::vector<HrColumn> columns;
  for (double t0 : {0.0, 1.0, 2.0}) columns.push_back(hr_column(landmark_fit(sim.cohort, t0, 2.0, spec)));
  HrTable t;
  t.groups = {"From time 0", "From 1 year", "From 2 years"};
  t.decimals = 1;
  t.add_section("", {{"FIGO (stage IV vs. III)", "pad"}, {"Sex", "male"}, {"Age", "age10"}}, columns);
  return render(t);
}

/// Golden file name and renderer of every table layout.
inline std::vector<std::pair<std::string, std::function<std::string()>>> all() {
  return {{"interaction_table.txt", interaction_table},   {"model_comparison_table.txt", model_comparison_table},
          {"single_column_table.txt", single_column_table}, {"adjusted_table.txt", adjusted_table},
          {"categorical_table.txt", categorical_table},     {"landmark_table.txt", landmark_table}};
}

inline std::filesystem::path golden_path(const std::string& name) {
  return std::filesystem::path(SURVKIT_GOLDEN_DIR) / name;
}

}  // namespace report_tables

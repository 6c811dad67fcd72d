#include <gtest/gtest.h>

#include "report_tables.hpp"

using namespace survkit;
using report_tables::render;

// Golden files hold the paper table layouts filled with simulated estimates;
// set SURVKIT_UPDATE_GOLDEN=1 to rewrite them.

TEST(Report, HrTableLayout) {
  HrTable t;
  t.groups = {"Overall", "Females"};
  HrColumn a{{"x", "y"}, {{1.5, 1.2, 1.9}, {0.5, 0.25, 1.0}}};
  HrColumn b{{"x"}, {{2.0, 1.0, 4.0}}};
  t.add_section("", {{"X", "x"}, {"Y", "y"}}, {a, b});
  const auto s = render(t);
  EXPECT_EQ(s,
            "   Overall            Females\n"
            "   HR    95% CI       HR    95% CI\n"
            "---------------------------------------\n"
            "X  1.50  (1.20-1.90)  2.00  (1.00-4.00)\n"
            "Y  0.50  (0.25-1.00)\n");
  t.decimals = -1;
  EXPECT_NE(render(t).find("(1.2-1.9)"), std::string::npos);
}

TEST(Report, GoldenTables) {
  for (const auto& [name, make] : report_tables::all()) {
    const auto actual = make();
    const auto path = report_tables::golden_path(name);
    if (std::getenv("SURVKIT_UPDATE_GOLDEN")) {
      std::filesystem::create_directories(path.parent_path());
      std::ofstream(path, std::ios::binary) << actual;
    }
    ASSERT_TRUE(std::filesystem::exists(path)) << path;
    EXPECT_EQ(testing_support::slurp(path), actual) << name;
  }
}

TEST(Report, InteractionColumnAndLandmarkHeadings) {
  const auto interaction = report_tables::interaction_table();
  EXPECT_NE(interaction.find("PAD vs C"), std::string::npos);
  EXPECT_NE(interaction.find("[Poisson model]"), std::string::npos);
  const auto landmark = report_tables::landmark_table();
  EXPECT_EQ(landmark.find("From time 0"), landmark.find("From"));
  EXPECT_NE(landmark.find("From 2 years"), std::string::npos);
}

TEST(Report, CoxSummaryJson) {
  const auto sim = report_tables::study(7);
  const auto fit = fit_cox(sim.cohort, report_tables::linear({"pad", "male"}));
  const auto j = cox_summary_json(fit);
  ASSERT_EQ(j["coefficients"].size(), 2u);
  EXPECT_EQ(j["coefficients"][0]["name"], "pad");
  EXPECT_DOUBLE_EQ(j["coefficients"][0]["beta"].get<double>(), fit.beta(0));
  EXPECT_DOUBLE_EQ(j["coefficients"][0]["hr"].get<double>(), std::exp(fit.beta(0)));
}

TEST(Report, RiskCurveAndContrastText) {
  RiskCurve curve;
  curve.risk.origin = 0;
  curve.risk.initial = 0;
  curve.risk.times = {1, 2.5};
  curve.risk.values = {0.1, 0.123456789};
  std::ostringstream out;
  write_risk_curve(curve, out);
  EXPECT_EQ(out.str(), "time,risk\n0,0\n1,0.1\n2.5,0.123457\n");
  CausalContrast c;
  c.times = {1};
  c.risk_untreated = {0.3};
  c.risk_treated = {0.2};
  c.difference = {0.1};
  std::ostringstream o2;
  write_causal_contrast(c, o2);
  EXPECT_EQ(o2.str(), "time,risk_untreated,risk_treated,difference\n1,0.3,0.2,0.1\n");
}

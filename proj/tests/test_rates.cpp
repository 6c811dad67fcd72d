#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace survkit;
using testing_support::ep;

namespace {

RateTable hand_table() {
  CohortTable c({ep("a", 0, 13, 1, {1})}, {"g"});
  TimeAxis age{"age", {30, 40, 50, 60}, {{"a", 38.5}}};
  TimeAxis since{"since_entry", {0, 5, 10, 20}, {}};
  return tabulate_person_time(c, {age, since}, {"g"});
}

}  // namespace

// Age 38.5 + t crosses 40 at t = 1.5 and 50 at t = 11.5; entry axis crosses 5 and 10.
TEST(Lexis, HandSplitAcrossTwoAxes) {
  const auto t = hand_table();
  ASSERT_EQ(t.cells.size(), 5u);
  const std::vector<std::tuple<int, int, double, double>> want{
      {0, 0, 1.5, 0}, {1, 0, 3.5, 0}, {1, 1, 5.0, 0}, {1, 2, 1.5, 0}, {2, 2, 1.5, 1}};
  for (std::size_t i = 0; i < want.size(); ++i) {
    EXPECT_EQ(t.cells[i].intervals, (std::vector<int>{std::get<0>(want[i]), std::get<1>(want[i])}));
    EXPECT_NEAR(t.cells[i].person_time, std::get<2>(want[i]), 1e-12);
    EXPECT_EQ(t.cells[i].events, std::get<3>(want[i]));
    EXPECT_EQ(t.cells[i].pattern, std::vector<double>{1});
  }
}

TEST(Lexis, PreservesTotalsOnRandomCohort) {
  const auto c = testing_support::random_cohort(41, 200, 1);
  double pt = 0, ev = 0;
  for (const auto& e : c.episodes()) {
    pt += e.tstop - e.tstart;
    ev += e.status != 0;
  }
  const auto t = tabulate_person_time(c, {TimeAxis{"t", {0, 1, 2, 5, HUGE_VAL}, {}}}, {"x1"});
  EXPECT_NEAR(t.total_person_time(), pt, 1e-9);
  EXPECT_EQ(t.total_events(), ev);
}

TEST(Lexis, CauseSpecificEvents) {
  CohortTable c({ep("a", 0, 2, 1), ep("b", 0, 3, 2)}, {});
  const auto t = tabulate_person_time(c, {TimeAxis{"t", {0, 10}, {}}}, {}, 2);
  EXPECT_EQ(t.total_events(), 1);
}

TEST(Lexis, FollowUpBeyondCutpointsIsAnError) {
  CohortTable c({ep("a", 0, 12, 1)}, {});
  EXPECT_THROW(tabulate_person_time(c, {TimeAxis{"t", {0, 10}, {}}}, {}), DataError);
  EXPECT_THROW(tabulate_person_time(c, {TimeAxis{"t", {0}, {}}}, {}), ConfigError);
}

TEST(Lexis, RoundTripThroughText) {
  const auto t = hand_table();
  std::ostringstream out;
  write_rate_table(t, out);
  std::istringstream in(out.str());
  const auto back = read_rate_table(in);
  ASSERT_EQ(back.cells.size(), t.cells.size());
  EXPECT_EQ(back.axes.size(), 2u);
  EXPECT_EQ(back.axes[0].cutpoints, t.axes[0].cutpoints);
  EXPECT_EQ(back.pattern_columns, t.pattern_columns);
  for (std::size_t i = 0; i < t.cells.size(); ++i) {
    EXPECT_EQ(back.cells[i].intervals, t.cells[i].intervals);
    EXPECT_EQ(back.cells[i].person_time, t.cells[i].person_time);
    EXPECT_EQ(back.cells[i].events, t.cells[i].events);
  }
}

TEST(Poisson, SingleFactorIsRatioOfRates) {
  RateTable t;
  t.axes = {TimeAxis{"t", {0, 1}, {}}};
  t.pattern_columns = {"g"};
  t.cells = {{{0}, {0}, 12, 400}, {{0}, {1}, 30, 500}};
  const auto fit = fit_rate_model(t, RateModelSpec{{RateTerm::factor("g")}});
  EXPECT_NEAR(fit.coefficients(0), std::log(12.0 / 400), 1e-9);
  EXPECT_NEAR(fit.coefficients(1), std::log((30.0 / 500) / (12.0 / 400)), 1e-9);
  EXPECT_NEAR(fit.se(1), std::sqrt(1.0 / 12 + 1.0 / 30), 1e-8);
  EXPECT_EQ(fit.names[1], "g=1");
  EXPECT_NEAR(fit.deviance, 0.0, 1e-9);
  EXPECT_EQ(fit.df_residual, 0);
}

// Poisson likelihood equations with an intercept: fitted totals equal observed
// totals overall and within every factor level.
TEST(Poisson, FittedMarginsMatchObserved) {
  const auto c = testing_support::random_cohort(42, 400, 1);
  const auto t = tabulate_person_time(c, {TimeAxis{"t", {0, 1, 2, 4, 8, HUGE_VAL}, {}}}, {"x1"});
  const auto fit = fit_rate_model(t, RateModelSpec{{RateTerm::axis("t"), RateTerm::factor("x1")}});
  double obs = 0, fitted = 0, obs1 = 0, fitted1 = 0;
  std::size_t k = 0;
  for (const auto& cell : t.cells) {
    if (cell.person_time <= 0) continue;
    obs += cell.events;
    fitted += fit.fitted[k];
    if (cell.pattern[0] == 1) {
      obs1 += cell.events;
      fitted1 += fit.fitted[k];
    }
    ++k;
  }
  EXPECT_NEAR(obs, fitted, 1e-6);
  EXPECT_NEAR(obs1, fitted1, 1e-6);
  EXPECT_GT(fit.deviance, 0);
}

TEST(Poisson, LinearTermAndErrors) {
  RateTable t;
  t.axes = {TimeAxis{"t", {0, 1}, {}}};
  t.pattern_columns = {"x"};
  t.cells = {{{0}, {0}, 5, 100}, {{0}, {1}, 9, 100}, {{0}, {2}, 20, 100}};
  const auto fit = fit_rate_model(t, RateModelSpec{{RateTerm::linear("x")}});
  EXPECT_EQ(fit.names, (std::vector<std::string>{"(Intercept)", "x"}));
  EXPECT_GT(fit.coefficients(1), 0);
  EXPECT_THROW(fit_rate_model(t, RateModelSpec{{RateTerm::factor("nope")}}), ConfigError);
  t.cells.push_back({{0}, {3}, 2, 0});
  EXPECT_THROW(fit_rate_model(t, RateModelSpec{{RateTerm::linear("x")}}), DataError);
}

TEST(Poisson, CellRatesPerThousand) {
  RateTable t;
  t.cells = {{{0}, {}, 3, 1500}, {{1}, {}, 0, 0}};
  const auto r = cell_rates(t);
  EXPECT_DOUBLE_EQ(r[0], 2.0);
  EXPECT_TRUE(std::isnan(r[1]));
}

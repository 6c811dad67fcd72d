#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace survkit;
using testing_support::ep;

namespace {

Scenario constant(double rate, std::size_t n, std::uint64_t seed = 1) {
  Scenario s;
  s.n = n;
  s.seed = seed;
  CauseScenario c;
  c.baseline.rate = rate;
  s.causes.push_back(c);
  return s;
}

Scenario exposure_scenario(std::size_t n, std::uint64_t seed) {
  return scenario_from_json({{"n", n},
                             {"seed", seed},
                             {"covariates", {{{"name", "age"}, {"distribution", "normal"}, {"mean", 0}, {"sd", 1}}}},
                             {"causes", {{{"baseline", {{"type", "constant"}, {"rate", 0.1}}},
                                          {"log_hr", {{"exposure", 0.0}, {"age", 0.3}}}}}},
                             {"exposure", {{"rate", 0.2}}},
                             {"entry", {{"max", 1.0}}},
                             {"censoring", {{"admin", 10.0}, {"accrual", 2.0}, {"dropout_rate", 0.02}}}});
}

double sup_distance(const Scenario& s, int cause, double horizon) {
  const auto sim = simulate_cohort(s);
  const auto na = nelson_aalen(sim.cohort, cause);
  double worst = 0;
  for (std::size_t i = 0; i < na.size(); ++i)
    if (na.times[i] <= horizon) worst = std::max(worst, std::abs(na.values[i] - true_cumulative_hazard(s, cause, na.times[i])));
  return worst;
}

}  // namespace

TEST(Simulate, ExponentialMean) {
  const auto sim = simulate_cohort(constant(0.5, 10000));
  double mean = 0;
  for (const auto& e : sim.cohort.episodes()) {
    EXPECT_EQ(e.status, 1);
    mean += e.tstop;
  }
  mean /= 10000;
  EXPECT_NEAR(mean, 2.0, 4 * 0.02);
}

TEST(Simulate, WeibullCumulativeHazardTracksTSquared) {
  Scenario s = constant(1.0, 20000);
  s.causes[0].baseline.kind = BaselineHazard::Kind::weibull;
  s.causes[0].baseline.shape = 2;
  EXPECT_EQ(true_cumulative_hazard(s, 1, 1.5), 2.25);
  const auto na = nelson_aalen(simulate_cohort(s).cohort);
  for (double t : {0.3, 0.7, 1.0, 1.5}) EXPECT_NEAR(na(t), t * t, 0.05 * t * t + 0.01) << t;
}

TEST(Simulate, CompetingCauseFraction) {
  Scenario s = constant(0.3, 20000, 4);
  CauseScenario other;
  other.code = 2;
  other.baseline.rate = 0.7;
  s.causes.push_back(other);
  const auto sim = simulate_cohort(s);
  double ones = 0;
  for (const auto& e : sim.cohort.episodes()) ones += e.status == 1;
  EXPECT_NEAR(ones / 20000, 0.3, 4 * std::sqrt(0.3 * 0.7 / 20000));
  EXPECT_EQ(sim.truth["realised"]["events"]["1"].get<double>(), ones);
}

TEST(Simulate, PiecewiseBaselineAndTimeVaryingEffect) {
  Scenario s = constant(0.0, 20000, 9);
  auto& b = s.causes[0].baseline;
  b.kind = BaselineHazard::Kind::piecewise;
  b.cutpoints = {1.0, 2.0};
  b.rates = {0.2, 0.6, 0.1};
  EXPECT_NEAR(true_cumulative_hazard(s, 1, 2.5), 0.2 + 0.6 + 0.05, 1e-15);
  const auto na = nelson_aalen(simulate_cohort(s).cohort);
  for (double t : {0.5, 1.5, 2.5}) EXPECT_NEAR(na(t), true_cumulative_hazard(s, 1, t), 0.04) << t;

  s.covariates.push_back({"x", CovariateGenerator::Kind::bernoulli, 0.5, 0});
  s.causes[0].time_varying.push_back({"x", {1.5}, {std::log(3.0), 0.0}});
  const auto c = simulate_cohort(s).cohort;
  ModelSpec spec;
  spec.terms = {Term::time_varying("x", {1.5})};
  const auto fit = fit_cox(c, spec);
  EXPECT_NEAR(fit.beta(0), std::log(3.0), 4 * fit.se(0));
  // later columns hold the change in log-HR after each cutpoint
  EXPECT_NEAR(fit.beta(1), -std::log(3.0), 4 * fit.se(1));
}

TEST(Simulate, ReproducibleAndSubstreamed) {
  const auto s = exposure_scenario(300, 11);
  const auto a = simulate_cohort(s), b = simulate_cohort(s);
  ASSERT_EQ(a.cohort.size(), b.cohort.size());
  for (std::size_t i = 0; i < a.cohort.size(); ++i) {
    const auto &x = a.cohort.episodes()[i], &y = b.cohort.episodes()[i];
    EXPECT_TRUE(x.subject_id == y.subject_id && x.tstart == y.tstart && x.tstop == y.tstop && x.status == y.status &&
                x.covariates == y.covariates);
  }
  EXPECT_EQ(a.timeline.records().size(), b.timeline.records().size());
  EXPECT_EQ(a.truth, b.truth);
  // the first 100 subjects do not depend on how many follow
  auto small = s;
  small.n = 100;
  const auto c = simulate_cohort(small);
  const auto& x = c.cohort.episodes();
  std::vector<Episode> prefix;
  for (const auto& e : a.cohort.episodes()) {
    const int index = std::stoi(e.subject_id.substr(1));
    if (index <= 100) prefix.push_back(e);
  }
  ASSERT_EQ(prefix.size(), x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_EQ(x[i].tstart, prefix[i].tstart);
    EXPECT_EQ(x[i].tstop, prefix[i].tstop);
    EXPECT_EQ(x[i].status, prefix[i].status);
  }
}

TEST(Simulate, ScenarioJsonRoundTrip) {
  const auto s = exposure_scenario(50, 3);
  const auto back = scenario_from_json(to_json(s));
  EXPECT_EQ(to_json(back), to_json(s));
  EXPECT_THROW(scenario_from_json({{"causes", nlohmann::json::array()}}), ConfigError);
  EXPECT_THROW(scenario_from_json({{"causes", {{{"baseline", {{"type", "gompertz"}}}}}}}), ConfigError);
  EXPECT_THROW(scenario_from_json({{"causes",
                                    {{{"code", 1}, {"baseline", {{"type", "weibull"}, {"rate", 1}, {"shape", 2}}}},
                                     {{"code", 2}, {"baseline", {{"type", "constant"}, {"rate", 1}}}}}}}),
               ConfigError);
}

TEST(Simulate, TruthRecordsScenario) {
  const auto s = exposure_scenario(80, 5);
  const auto sim = simulate_cohort(s);
  EXPECT_EQ(sim.truth["seed"], 5);
  EXPECT_EQ(sim.truth["causes"][0]["baseline"]["rate"], 0.1);
  EXPECT_EQ(sim.truth["realised"]["switches"].get<std::size_t>(), sim.timeline.records().size());
  EXPECT_EQ(sim.cohort.kind("exposure"), CovariateKind::internal);
}

TEST(Simulate, NelsonAalenConvergesToTruth) {
  Scenario s = constant(0.4, 500, 21);
  s.causes[0].baseline.kind = BaselineHazard::Kind::weibull;
  s.causes[0].baseline.shape = 1.5;
  CauseScenario other;
  other.code = 2;
  other.baseline = s.causes[0].baseline;
  other.baseline.rate = 0.2;
  s.causes.push_back(other);
  double small = 0, large = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    s.seed = seed;
    s.n = 500;
    small += sup_distance(s, 2, 3.0);
    s.n = 20000;
    large += sup_distance(s, 2, 3.0);
  }
  EXPECT_LT(large, 0.5 * small);
}

TEST(Simulate, LintCleanBeforeInjectionAndFlaggedAfter) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto sim = simulate_cohort(exposure_scenario(400, seed));
    const auto before = lint(sim.cohort, &sim.timeline);
    for (const char* rule : {"R1", "R2", "R3", "R4"}) EXPECT_FALSE(before.fired(rule)) << rule;
    const auto miscoded = inject_immortal_time_bias(sim.cohort, sim.timeline, MiscodingMode::ever_treated);
    EXPECT_TRUE(miscoded.tainted());
    const auto after = lint(miscoded, &sim.timeline);
    EXPECT_TRUE(after.fired("R3"));
    EXPECT_TRUE(after.fired("R4"));
  }
}

TEST(ImmortalTime, EverTreatedSingleEpisodeFromZero) {
  CohortTable base({ep("a", 0, 10, 1), ep("b", 0, 6, 0)}, {});
  Timeline tl({{"a", 4, "treated", 1}});
  const auto merged = merge_timeline(base, tl, MergeOptions{{{"treated", 0.0}}, {}}).cohort;
  ASSERT_EQ(merged.size(), 3u);
  const auto ever = inject_immortal_time_bias(merged, tl, MiscodingMode::ever_treated);
  ASSERT_EQ(ever.size(), 2u);
  const auto& a = ever.episodes()[0];
  EXPECT_EQ(a.tstart, 0);
  EXPECT_EQ(a.tstop, 10);
  EXPECT_EQ(a.status, 1);
  EXPECT_EQ(a.covariates[0], 1);
  EXPECT_EQ(ever.episodes()[1].covariates[0], 0);
  EXPECT_EQ(ever.kind("treated"), CovariateKind::fixed);

  const auto dose = inject_immortal_time_bias(merged, tl, MiscodingMode::total_dose);
  EXPECT_EQ(dose.episodes()[0].covariates[0], 6);
}

TEST(ImmortalTime, MiscodedHazardRatioIsProtective) {
  const auto sim = simulate_cohort(exposure_scenario(2000, 31));
  ModelSpec spec;
  spec.terms = {Term::linear("exposure"), Term::linear("age")};
  const auto correct = fit_cox(sim.cohort, spec);
  EXPECT_LT(std::abs(correct.beta(0)), 3 * correct.se(0));
  const auto miscoded = inject_immortal_time_bias(sim.cohort, sim.timeline, MiscodingMode::ever_treated);
  const auto biased = fit_cox(miscoded, spec);
  EXPECT_LT(biased.beta(0) + 1.959964 * biased.se(0), 0.0);
}

#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace survkit;
using testing_support::ep;

namespace {

CohortTable exposure_cohort(std::vector<Episode> eps) { return CohortTable(std::move(eps), {"exposure"}); }

}  // namespace

TEST(Lint, CleanCohortHasNoFindings) {
  CohortTable c({ep("a", 0, 5, 0, {0}), ep("a", 5, 9, 1, {1}), ep("b", 0, 9, 0, {0})}, {"exposure"});
  Timeline tl({{"a", 5, "exposure", 1}});
  const auto r = lint(c, &tl);
  EXPECT_TRUE(r.clean());
  EXPECT_EQ(r.summary.subjects, 2u);
  EXPECT_EQ(r.summary.episodes, 3u);
  EXPECT_EQ(r.summary.censored, 1u);
  EXPECT_EQ(r.summary.censored_early, 0u);
  EXPECT_EQ(r.summary.exits_by_status.at(1), 1u);
}

TEST(Lint, R1OrderingAndOverlap) {
  const auto r = lint_episodes({ep("a", 3, 3, 0), ep("b", 0, 4, 0), ep("b", 2, 6, 1)}, {});
  EXPECT_TRUE(r.fired("R1"));
  EXPECT_TRUE(r.has_errors());
  std::set<std::string> subjects;
  for (const auto& f : r.findings) subjects.insert(f.subject);
  EXPECT_EQ(subjects, (std::set<std::string>{"a", "b"}));
}

TEST(Lint, R2EventBeforeLastEpisode) {
  const auto r = lint_episodes({ep("a", 0, 2, 1), ep("a", 2, 5, 0)}, {});
  EXPECT_TRUE(r.fired("R2"));
  EXPECT_FALSE(r.fired("R1"));
}

TEST(Lint, R3ExposureFromZeroButTimelineStartsLater) {
  const auto c = exposure_cohort({ep("p7", 0, 10, 1, {1}), ep("q", 0, 8, 0, {0})});
  Timeline tl({{"p7", 4, "exposure", 1}});
  const auto r = lint(c, &tl);
  ASSERT_TRUE(r.fired("R3"));
  const auto& f = r.findings.front();
  EXPECT_EQ(f.rule, "R3");
  EXPECT_EQ(f.severity, Severity::error);
  EXPECT_EQ(f.subject, "p7");
  EXPECT_NE(f.message.find("immortal time"), std::string::npos);
  EXPECT_TRUE(r.fired("R4"));
}

TEST(Lint, R3ValueNotSupportedByTimeline) {
  const auto c = exposure_cohort({ep("a", 0, 4, 0, {2}), ep("a", 4, 8, 0, {0})});
  Timeline tl({{"a", 4, "exposure", 1}});
  const auto r = lint(c, &tl);
  EXPECT_TRUE(r.fired("R3"));
  EXPECT_NE(r.findings.front().message.find("not supported"), std::string::npos);
}

TEST(Lint, R4ConstantCodingOfChangingVariable) {
  const auto c = exposure_cohort({ep("a", 0, 10, 1, {0})});
  Timeline tl({{"a", 6, "exposure", 1}});
  const auto r = lint(c, &tl);
  EXPECT_TRUE(r.fired("R4"));
  EXPECT_FALSE(r.fired("R3"));
  EXPECT_EQ(r.count(Severity::warning), 1u);
  // a change at the very end of follow-up is not mid-follow-up
  EXPECT_FALSE(lint(c, new Timeline({{"a", 10, "exposure", 1}})).fired("R4"));
}

TEST(Lint, TimelineOutsideCohort) {
  const auto c = exposure_cohort({ep("a", 0, 5, 0, {0})});
  Timeline tl({{"zz", 1, "exposure", 1}, {"a", 7, "exposure", 1}});
  const auto r = lint(c, &tl);
  EXPECT_EQ(r.count(Severity::warning), 2u);
}

TEST(Lint, R5DropOutShare) {
  std::vector<Episode> eps;
  for (int i = 0; i < 10; ++i) eps.push_back(ep("s" + std::to_string(i), 0, i < 3 ? 2.0 : 10.0, 0));
  CohortTable c(eps, {});
  EXPECT_TRUE(lint(c).fired("R5"));
  LintOptions loose;
  loose.dropout_threshold = 0.5;
  const auto r = lint(c, nullptr, loose);
  EXPECT_FALSE(r.fired("R5"));
  EXPECT_EQ(r.summary.censored_early, 3u);
  EXPECT_EQ(r.summary.administrative_cutoff, 10.0);
  LintOptions cutoff;
  cutoff.administrative_cutoff = 2.0;
  EXPECT_FALSE(lint(c, nullptr, cutoff).fired("R5"));
}

TEST(Lint, TextAndJsonOutput) {
  const auto c = exposure_cohort({ep("p7", 0, 10, 1, {1})});
  Timeline tl({{"p7", 4, "exposure", 1}});
  const auto r = lint(c, &tl);
  std::ostringstream out;
  write_lint_text(r, out);
  EXPECT_EQ(out.str().rfind("R3\terror\tp7\t", 0), 0u);
  EXPECT_NE(out.str().find("# 1 errors, 1 warnings"), std::string::npos);
  const auto j = lint_json(r);
  EXPECT_EQ(j["findings"][0]["rule"], "R3");
  EXPECT_EQ(j["summary"]["errors"], 1);
  EXPECT_EQ(j["summary"]["exits_by_status"]["1"], 1);
}

TEST(Lint, Deterministic) {
  const auto c = testing_support::random_cohort(91, 100, 1);
  std::ostringstream a, b;
  write_lint_text(lint(c), a);
  write_lint_text(lint(c), b);
  EXPECT_EQ(a.str(), b.str());
}

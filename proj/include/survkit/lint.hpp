#pragma once

// Data checks for counting-process cohorts:
//   R1 interval ordering (and malformed timeline records)
//   R2 events only at the end of a subject's follow-up
//   R3 covariate values applied before their recorded change time (lookahead)
//   R4 time-fixed coding of a variable whose timeline changes during follow-up
//   R5 censorings well before the administrative end of follow-up

#include <algorithm>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "survkit/cohort.hpp"
#include "survkit/nonparam.hpp"

namespace survkit {

enum class Severity { error, warning, info };

inline std::string to_string(Severity s) {
  switch (s) {
    case Severity::error: return "error";
    case Severity::warning: return "warning";
    case Severity::info: return "info";
  }
  return "info";
}

struct Finding {
  std::string rule;
  Severity severity = Severity::error;
  std::string subject;  // empty for cohort-level findings
  std::string message;
};

struct LintSummary {
  std::size_t subjects = 0;
  std::size_t episodes = 0;
  std::map<int, std::size_t> exits_by_status;  // final status of each subject
  std::size_t censored = 0;
  std::size_t censored_early = 0;  // before the administrative cutoff
  double administrative_cutoff = 0.0;
};

struct LintReport {
  std::vector<Finding> findings;
  LintSummary summary;

  bool clean() const { return findings.empty(); }
  std::size_t count(Severity s) const {
    return static_cast<std::size_t>(
        std::count_if(findings.begin(), findings.end(), [&](const Finding& f) { return f.severity == s; }));
  }
  bool has_errors() const { return count(Severity::error) > 0; }
  bool fired(std::string_view rule) const {
    return std::any_of(findings.begin(), findings.end(), [&](const Finding& f) { return f.rule == rule; });
  }
};

struct LintOptions {
  /// Value each timeline variable takes before its first record.
  std::map<std::string, double> baselines;
  double default_baseline = 0.0;
  /// Largest tolerated share of censorings before the cutoff.
  double dropout_threshold = 0.20;
  /// Administrative end of follow-up; the latest exit time when unset.
  std::optional<double> administrative_cutoff;
};

namespace detail {

inline void lint_timeline(const CohortTable& cohort, const Timeline& timeline, const LintOptions& options,
                          std::vector<Finding>& out) {
  const auto ids = cohort.subjects();
  for (const auto& s : timeline.subjects())
    if (!std::binary_search(ids.begin(), ids.end(), s))
      out.push_back({"R1", Severity::warning, s, "timeline subject is not in the cohort"});

  for (const auto& variable : timeline.variables()) {
    const auto column = cohort.find_covariate(variable);
    if (!column) continue;  // not yet merged; nothing to compare against
    const double baseline =
        options.baselines.contains(variable) ? options.baselines.at(variable) : options.default_baseline;
    for (std::size_t s = 0; s < cohort.subject_count(); ++s) {
      const auto episodes = cohort.subject(s);
      const auto& id = episodes.front().subject_id;
      const auto history = timeline.history(id, variable);
      for (const auto& r : history)
        if (r.time > episodes.back().tstop)
          out.push_back({"R1", Severity::warning, id,
                         fmt::format("change of '{}' at {} is after the end of follow-up ({})", variable,
                                     text::sig6(r.time), text::sig6(episodes.back().tstop))});

      // R3: the value in force at tstart must come from a record at or before tstart
      for (const auto& e : episodes) {
        const double value = e.covariates[*column];
        double expected = baseline;
        for (const auto& r : history)
          if (r.time <= e.tstart) expected = r.value;
        if (value == expected) continue;
        const auto later = std::find_if(history.begin(), history.end(),
                                        [&](const auto& r) { return r.time > e.tstart && r.value == value; });
        if (later != history.end())
          out.push_back({"R3", Severity::error, id,
                         fmt::format("'{}' = {} on ({}, {}] but it changes to that value only at {} "
                                     "(immortal time: value applied before its change time)",
                                     variable, text::sig6(value), text::sig6(e.tstart), text::sig6(e.tstop),
                                     text::sig6(later->time))});
        else
          out.push_back({"R3", Severity::error, id,
                         fmt::format("'{}' = {} on ({}, {}] is not supported by the timeline (value in force: {})",
                                     variable, text::sig6(value), text::sig6(e.tstart), text::sig6(e.tstop),
                                     text::sig6(expected))});
        break;  // one finding per subject and variable
      }

      // R4: constant coding while the timeline changes strictly inside follow-up
      const double first = episodes.front().covariates[*column];
      const bool constant = std::all_of(episodes.begin(), episodes.end(),
                                        [&](const Episode& e) { return e.covariates[*column] == first; });
      if (!constant) continue;
      double before = baseline;
      for (const auto& r : history) {
        if (r.time > episodes.front().tstart && r.time < episodes.back().tstop && r.value != before) {
          out.push_back({"R4", Severity::warning, id,
                         fmt::format("'{}' is coded constant over follow-up but changes at {} "
                                     "(time-fixed coding of a time-dependent variable)",
                                     variable, text::sig6(r.time))});
          break;
        }
        before = r.value;
      }
    }
  }
}

inline void lint_censoring(const CohortTable& cohort, const LintOptions& options, LintSummary& summary,
                           std::vector<Finding>& out) {
  double cutoff = options.administrative_cutoff.value_or(-HUGE_VAL);
  if (!options.administrative_cutoff)
    for (const auto& e : cohort.episodes()) cutoff = std::max(cutoff, e.tstop);
  summary.administrative_cutoff = cutoff;
  const auto ends = run_ends(cohort);
  for (std::size_t s = 0; s < cohort.subject_count(); ++s) ++summary.exits_by_status[cohort.subject(s).back().status];
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const auto& e = cohort.episodes()[i];
    if (!ends[i] || e.status != 0) continue;
    ++summary.censored;
    if (e.tstop < cutoff) ++summary.censored_early;
  }
  if (summary.censored > 0) {
    const double share = static_cast<double>(summary.censored_early) / static_cast<double>(summary.censored);
    if (share > options.dropout_threshold)
      out.push_back({"R5", Severity::warning, "",
                     fmt::format("{} of {} censorings ({:.1f}%) occur before the administrative cutoff {}; "
                                 "check why these subjects left follow-up",
                                 summary.censored_early, summary.censored, 100.0 * share, text::sig6(cutoff))});
  }
}

}  // namespace detail

/// Applies R1-R5 to a validated cohort. Never throws on data problems.
inline LintReport lint(const CohortTable& cohort, const Timeline* timeline = nullptr, const LintOptions& options = {}) {
  LintReport report;
  report.summary.subjects = cohort.subject_count();
  report.summary.episodes = cohort.size();
  if (timeline) detail::lint_timeline(cohort, *timeline, options, report.findings);
  detail::lint_censoring(cohort, options, report.summary, report.findings);
  std::stable_sort(report.findings.begin(), report.findings.end(),
                   [](const Finding& a, const Finding& b) { return a.rule < b.rule; });
  return report;
}

/// Lints raw episodes that may not form a valid cohort: R1/R2 structural
/// problems are reported instead of thrown; the rest runs when they pass.
inline LintReport lint_episodes(std::vector<Episode> episodes, const std::vector<std::string>& names,
                                const Timeline* timeline = nullptr, const LintOptions& options = {}) {
  std::stable_sort(episodes.begin(), episodes.end(), detail::episode_less);
  LintReport report;
  for (const auto& p : detail::structural_problems(episodes))
    report.findings.push_back({p.rule, Severity::error, p.subject_id, p.message});
  if (!report.findings.empty()) {
    report.summary.episodes = episodes.size();
    report.summary.subjects = detail::subject_bounds(episodes).size() - 1;
    return report;
  }
  std::map<int, std::string> labels;
  for (const auto& e : episodes)
    if (e.status != 0) labels.emplace(e.status, fmt::format("cause {}", e.status));
  return lint(CohortTable(std::move(episodes), names, labels), timeline, options);
}

/// One finding per line: rule, severity, subject ("-" for cohort level), message.
inline void write_lint_text(const LintReport& report, std::ostream& out) {
  for (const auto& f : report.findings)
    out << f.rule << '\t' << to_string(f.severity) << '\t' << (f.subject.empty() ? "-" : f.subject) << '\t'
        << f.message << '\n';
  const auto& s = report.summary;
  out << fmt::format("# {} subjects, {} episodes; exits:", s.subjects, s.episodes);
  for (const auto& [status, n] : s.exits_by_status) out << fmt::format(" status {}: {};", status, n);
  out << fmt::format(" {} of {} censorings before {}\n", s.censored_early, s.censored,
                     text::sig6(s.administrative_cutoff));
  out << fmt::format("# {} errors, {} warnings\n", report.count(Severity::error), report.count(Severity::warning));
}

inline nlohmann::json lint_json(const LintReport& report) {
  nlohmann::json j;
  j["findings"] = nlohmann::json::array();
  for (const auto& f : report.findings)
    j["findings"].push_back({{"rule", f.rule},
                             {"severity", to_string(f.severity)},
                             {"subject", f.subject.empty() ? nlohmann::json(nullptr) : nlohmann::json(f.subject)},
                             {"message", f.message}});
  const auto& s = report.summary;
  nlohmann::json exits = nlohmann::json::object();
  for (const auto& [status, n] : s.exits_by_status) exits[std::to_string(status)] = n;
  j["summary"] = {{"subjects", s.subjects},
                  {"episodes", s.episodes},
                  {"exits_by_status", exits},
                  {"censored", s.censored},
                  {"censored_before_cutoff", s.censored_early},
                  {"administrative_cutoff", s.administrative_cutoff},
                  {"errors", report.count(Severity::error)},
                  {"warnings", report.count(Severity::warning)}};
  return j;
}

}  // namespace survkit

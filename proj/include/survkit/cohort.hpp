#pragma once

// Counting-process representation of cohort data: episodes, validation,
// file I/O, and the structural transforms (timeline merging, time-axis
// changes, episode splitting).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <fmt/format.h>

#include "survkit/error.hpp"
#include "survkit/text.hpp"

namespace survkit {

/// How a covariate column varies over follow-up.
///   fixed    - one value per subject for the whole follow-up
///   internal - time-dependent, generated by the subject (e.g. a diagnosis)
///   external - time-dependent but deterministic or outside the subject (e.g. interval index)
enum class CovariateKind { fixed, internal, external };

/// One at-risk interval (tstart, tstop] of one subject.
struct Episode {
  std::string subject_id;
  double tstart = 0.0;
  double tstop = 0.0;
  int status = 0;  // 0 = censored, k > 0 = cause k
  std::optional<std::string> stratum;
  std::vector<double> covariates;
};

/// A structural problem found in a set of episodes.
struct EpisodeProblem {
  std::string rule;  // "R1" (ordering) or "R2" (event placement)
  std::string subject_id;
  std::string message;
};

namespace detail {

inline bool episode_less(const Episode& a, const Episode& b) {
  if (a.subject_id != b.subject_id) return a.subject_id < b.subject_id;
  return a.tstart < b.tstart;
}

/// Start offsets of each subject's run in a vector sorted by episode_less, plus end sentinel.
inline std::vector<std::size_t> subject_bounds(std::span<const Episode> sorted) {
  std::vector<std::size_t> bounds;
  for (std::size_t i = 0; i < sorted.size(); ++i)
    if (i == 0 || sorted[i].subject_id != sorted[i - 1].subject_id) bounds.push_back(i);
  bounds.push_back(sorted.size());
  return bounds;
}

/// Ordering and event-placement checks on episodes sorted by (subject, tstart).
inline std::vector<EpisodeProblem> structural_problems(std::span<const Episode> sorted) {
  std::vector<EpisodeProblem> out;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const Episode& e = sorted[i];
    if (!std::isfinite(e.tstart) || !std::isfinite(e.tstop))
      out.push_back({"R1", e.subject_id, fmt::format("non-finite time for {}", e.subject_id)});
    else if (!(e.tstart < e.tstop))
      out.push_back({"R1", e.subject_id,
                     fmt::format("empty interval ({}, {}] for {}", text::sig6(e.tstart),
                                 text::sig6(e.tstop), e.subject_id)});
    if (e.status < 0)
      out.push_back({"R2", e.subject_id,
                     fmt::format("negative status {} for {}", e.status, e.subject_id)});
    if (i + 1 < sorted.size() && sorted[i + 1].subject_id == e.subject_id) {
      const Episode& next = sorted[i + 1];
      if (next.tstart < e.tstop)
        out.push_back({"R1", e.subject_id, fmt::format("overlapping episodes for {}", e.subject_id)});
      else if (next.tstart == e.tstop && e.status != 0)
        out.push_back({"R2", e.subject_id,
                       fmt::format("event at {} is not on the last episode of a contiguous run for {}",
                                   text::sig6(e.tstop), e.subject_id)});
    }
  }
  return out;
}

}  // namespace detail

/// Validated collection of episodes. Immutable after construction; episodes
/// are stored sorted by (subject_id, tstart).
class CohortTable {
 public:
  CohortTable(std::vector<Episode> episodes, std::vector<std::string> covariate_names,
              std::map<int, std::string> cause_labels = {}, std::string time_axis = "time",
              std::vector<CovariateKind> kinds = {})
      : episodes_(std::move(episodes)),
        covariate_names_(std::move(covariate_names)),
        cause_labels_(std::move(cause_labels)),
        time_axis_(std::move(time_axis)),
        kinds_(std::move(kinds)) {
    if (episodes_.empty()) throw DataError("cohort has no episodes");
    if (kinds_.empty()) kinds_.assign(covariate_names_.size(), CovariateKind::fixed);
    if (kinds_.size() != covariate_names_.size())
      throw DataError("covariate kinds do not match covariate names");
    std::set<std::string> seen;
    for (const auto& name : covariate_names_)
      if (!seen.insert(name).second) throw DataError("duplicate covariate column '" + name + "'");
    for (const auto& e : episodes_) {
      if (e.covariates.size() != covariate_names_.size())
        throw DataError(fmt::format("subject {}: expected {} covariate values, found {}",
                                    e.subject_id, covariate_names_.size(), e.covariates.size()));
      for (double v : e.covariates)
        if (!std::isfinite(v)) throw DataError("subject " + e.subject_id + ": missing covariate value");
    }
    std::stable_sort(episodes_.begin(), episodes_.end(), detail::episode_less);
    if (auto problems = detail::structural_problems(episodes_); !problems.empty())
      throw DataError(problems.front().message);
    std::set<int> codes;
    for (const auto& e : episodes_)
      if (e.status != 0) codes.insert(e.status);
    if (cause_labels_.empty()) {
      for (int c : codes) cause_labels_[c] = fmt::format("cause {}", c);
    } else {
      for (int c : codes)
        if (!cause_labels_.contains(c)) throw DataError(fmt::format("unknown cause code {}", c));
    }
    bounds_ = detail::subject_bounds(episodes_);
  }

  const std::vector<Episode>& episodes() const noexcept { return episodes_; }
  const std::vector<std::string>& covariate_names() const noexcept { return covariate_names_; }
  const std::map<int, std::string>& cause_labels() const noexcept { return cause_labels_; }
  const std::string& time_axis() const noexcept { return time_axis_; }
  const std::vector<CovariateKind>& covariate_kinds() const noexcept { return kinds_; }
  std::size_t size() const noexcept { return episodes_.size(); }
  std::size_t subject_count() const noexcept { return bounds_.size() - 1; }

  /// Episodes of the i-th subject (subjects ordered by id).
  std::span<const Episode> subject(std::size_t i) const {
    return std::span<const Episode>(episodes_).subspan(bounds_[i], bounds_[i + 1] - bounds_[i]);
  }

  std::vector<std::string> subjects() const {
    std::vector<std::string> ids;
    ids.reserve(subject_count());
    for (std::size_t i = 0; i + 1 < bounds_.size(); ++i) ids.push_back(episodes_[bounds_[i]].subject_id);
    return ids;
  }

  std::vector<int> causes() const {
    std::vector<int> out;
    for (const auto& [code, label] : cause_labels_) out.push_back(code);
    return out;
  }

  std::optional<std::size_t> find_covariate(std::string_view name) const {
    for (std::size_t i = 0; i < covariate_names_.size(); ++i)
      if (covariate_names_[i] == name) return i;
    return std::nullopt;
  }

  std::size_t covariate_index(std::string_view name) const {
    if (auto i = find_covariate(name)) return *i;
    throw ConfigError(fmt::format("unknown covariate column '{}'", name));
  }

  CovariateKind kind(std::string_view name) const { return kinds_[covariate_index(name)]; }

  bool tainted() const noexcept { return !taint_.empty(); }
  const std::string& taint() const noexcept { return taint_; }

  /// Copy carrying a marker that the data were deliberately miscoded.
  CohortTable with_taint(std::string reason) const {
    CohortTable copy = *this;
    copy.taint_ = std::move(reason);
    return copy;
  }

 private:
  std::vector<Episode> episodes_;
  std::vector<std::string> covariate_names_;
  std::map<int, std::string> cause_labels_;
  std::string time_axis_;
  std::vector<CovariateKind> kinds_;
  std::vector<std::size_t> bounds_;
  std::string taint_;
};

// ---------------------------------------------------------------------------
// Episode files

struct IngestOptions {
  char delimiter = ',';
  /// Columns to expand as categorical, with their reference level. Non-numeric
  /// columns not listed here are expanded with the first sorted level as reference.
  std::map<std::string, std::string> reference_levels;
  std::map<int, std::string> cause_labels;
  std::string time_axis = "time";
};

/// Parsed but not yet validated episodes.
struct EpisodeRows {
  std::vector<Episode> episodes;
  std::vector<std::string> covariate_names;
  std::vector<std::string> warnings;
};

inline EpisodeRows parse_episodes(const text::Table& table, const IngestOptions& options = {}) {
  EpisodeRows out;
  const auto require = [&](std::string_view name) {
    if (auto c = table.column(name)) return *c;
    throw DataError(fmt::format("episode file is missing required column '{}'", name));
  };
  const std::size_t c_id = require("id");
  const std::size_t c_start = require("tstart");
  const std::size_t c_stop = require("tstop");
  const std::size_t c_status = require("status");
  const auto c_stratum = table.column("stratum");

  struct Column {
    std::size_t index;
    std::string name;
    bool categorical = false;
    std::vector<std::string> levels;  // non-reference levels when categorical
  };
  std::vector<Column> columns;
  for (std::size_t c = 0; c < table.header.size(); ++c) {
    if (c == c_id || c == c_start || c == c_stop || c == c_status || (c_stratum && c == *c_stratum))
      continue;
    Column col{c, table.header[c], false, {}};
    col.categorical = options.reference_levels.contains(col.name);
    std::set<std::string> levels;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
      const auto& cell = table.rows[r][c];
      if (text::is_missing(cell))
        throw DataError(fmt::format("line {}: missing value in column '{}'", table.line_numbers[r], col.name));
      if (!text::parse_double(cell)) col.categorical = true;
      levels.insert(cell);
    }
    if (col.categorical) {
      std::string reference;
      if (auto it = options.reference_levels.find(col.name); it != options.reference_levels.end()) {
        reference = it->second;
        if (!levels.contains(reference))
          throw DataError(fmt::format("reference level '{}' not present in column '{}'", reference, col.name));
      } else if (!levels.empty()) {
        reference = *levels.begin();
        out.warnings.push_back(fmt::format(
            "column '{}' treated as categorical with reference level '{}' (first in sorted order)", col.name,
            reference));
      }
      for (const auto& level : levels)
        if (level != reference) col.levels.push_back(level);
      for (const auto& level : col.levels) out.covariate_names.push_back(col.name + "=" + level);
    } else {
      out.covariate_names.push_back(col.name);
    }
    columns.push_back(std::move(col));
  }

  out.episodes.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const auto line = table.line_numbers[r];
    Episode e;
    e.subject_id = row[c_id];
    if (e.subject_id.empty()) throw DataError(fmt::format("line {}: empty id", line));
    const auto number = [&](std::size_t c, std::string_view what) {
      auto v = text::parse_double(row[c]);
      if (!v) throw DataError(fmt::format("line {}: malformed {} '{}'", line, what, row[c]));
      return *v;
    };
    e.tstart = number(c_start, "tstart");
    e.tstop = number(c_stop, "tstop");
    const double status = number(c_status, "status");
    if (status != std::floor(status) || status < 0)
      throw DataError(fmt::format("line {}: malformed status '{}'", line, row[c_status]));
    e.status = static_cast<int>(status);
    if (!std::isfinite(e.tstart) || !std::isfinite(e.tstop))
      throw DataError(fmt::format("line {}: non-finite time", line));
    if (e.tstart < 0) throw DataError(fmt::format("line {}: negative time", line));
    if (c_stratum && !row[*c_stratum].empty()) e.stratum = row[*c_stratum];
    for (const auto& col : columns) {
      if (!col.categorical) {
        e.covariates.push_back(*text::parse_double(row[col.index]));
      } else {
        for (const auto& level : col.levels) e.covariates.push_back(row[col.index] == level ? 1.0 : 0.0);
      }
    }
    out.episodes.push_back(std::move(e));
  }
  return out;
}

struct Ingested {
  CohortTable cohort;
  std::vector<std::string> warnings;
};

/// Parses and validates an episode table. Throws DataError on the first problem.
inline Ingested ingest_episodes(std::istream& in, const IngestOptions& options = {}) {
  auto rows = parse_episodes(text::read_table(in, options.delimiter), options);
  CohortTable cohort(std::move(rows.episodes), std::move(rows.covariate_names), options.cause_labels,
                     options.time_axis);
  return {std::move(cohort), std::move(rows.warnings)};
}

inline Ingested ingest_episode_file(const std::string& path, const IngestOptions& options = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return ingest_episodes(in, options);
}

/// Writes the cohort in the episode file format with round-trip precision.
inline void emit_episodes(const CohortTable& cohort, std::ostream& out, char delimiter = ',') {
  const bool strata = std::any_of(cohort.episodes().begin(), cohort.episodes().end(),
                                  [](const Episode& e) { return e.stratum.has_value(); });
  out << "id" << delimiter << "tstart" << delimiter << "tstop" << delimiter << "status";
  if (strata) out << delimiter << "stratum";
  for (const auto& name : cohort.covariate_names()) out << delimiter << name;
  out << '\n';
  for (const auto& e : cohort.episodes()) {
    out << e.subject_id << delimiter << text::full(e.tstart) << delimiter << text::full(e.tstop) << delimiter
        << e.status;
    if (strata) out << delimiter << e.stratum.value_or("");
    for (double v : e.covariates) out << delimiter << text::full(v);
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Timelines

struct TimelineRecord {
  std::string subject_id;
  double time = 0.0;
  std::string variable;
  double value = 0.0;
};

/// Raw change history of time-dependent covariates, sorted by (subject, variable, time).
/// Records sharing a time keep their input order; the last one wins.
class Timeline {
 public:
  Timeline() = default;
  explicit Timeline(std::vector<TimelineRecord> records) : records_(std::move(records)) {
    for (const auto& r : records_)
      if (!std::isfinite(r.time))
        throw DataError("timeline record for " + r.subject_id + " has a non-finite change time");
    std::stable_sort(records_.begin(), records_.end(), [](const auto& a, const auto& b) {
      if (a.subject_id != b.subject_id) return a.subject_id < b.subject_id;
      if (a.variable != b.variable) return a.variable < b.variable;
      return a.time < b.time;
    });
  }

  const std::vector<TimelineRecord>& records() const noexcept { return records_; }
  bool empty() const noexcept { return records_.empty(); }

  std::vector<std::string> variables() const {
    std::set<std::string> names;
    for (const auto& r : records_) names.insert(r.variable);
    return {names.begin(), names.end()};
  }

  std::vector<std::string> subjects() const {
    std::set<std::string> ids;
    for (const auto& r : records_) ids.insert(r.subject_id);
    return {ids.begin(), ids.end()};
  }

  /// Time-ordered records of one variable for one subject.
  std::span<const TimelineRecord> history(std::string_view subject, std::string_view variable) const {
    auto lo = std::lower_bound(records_.begin(), records_.end(), std::pair{subject, variable},
                               [](const TimelineRecord& r, const auto& key) {
                                 return std::pair<std::string_view, std::string_view>{r.subject_id, r.variable} <
                                        std::pair<std::string_view, std::string_view>{key.first, key.second};
                               });
    auto hi = lo;
    while (hi != records_.end() && hi->subject_id == subject && hi->variable == variable) ++hi;
    return {lo, hi};
  }

 private:
  std::vector<TimelineRecord> records_;
};

inline Timeline read_timeline(std::istream& in, char delimiter = ',') {
  const auto table = text::read_table(in, delimiter);
  const auto require = [&](std::string_view name) {
    if (auto c = table.column(name)) return *c;
    throw DataError(fmt::format("timeline file is missing required column '{}'", name));
  };
  const auto c_id = require("id"), c_time = require("time"), c_var = require("variable"),
             c_value = require("value");
  std::vector<TimelineRecord> records;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    auto time = text::parse_double(row[c_time]);
    auto value = text::parse_double(row[c_value]);
    if (!time || !std::isfinite(*time))
      throw DataError(fmt::format("line {}: malformed change time '{}'", table.line_numbers[r], row[c_time]));
    if (!value) throw DataError(fmt::format("line {}: malformed value '{}'", table.line_numbers[r], row[c_value]));
    records.push_back({row[c_id], *time, row[c_var], *value});
  }
  return Timeline(std::move(records));
}

inline Timeline read_timeline_file(const std::string& path, char delimiter = ',') {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return read_timeline(in, delimiter);
}

inline void emit_timeline(const Timeline& timeline, std::ostream& out, char delimiter = ',') {
  out << "id" << delimiter << "time" << delimiter << "variable" << delimiter << "value\n";
  for (const auto& r : timeline.records())
    out << r.subject_id << delimiter << text::full(r.time) << delimiter << r.variable << delimiter
        << text::full(r.value) << '\n';
}

// ---------------------------------------------------------------------------
// Transforms

struct MergeOptions {
  /// Value in force before a subject's first record, per variable.
  std::map<std::string, double> baselines;
  /// Variables to mark as external rather than internal time-dependent covariates.
  std::set<std::string> external;
};

struct Merged {
  CohortTable cohort;
  std::vector<std::string> warnings;
};

/// Adds one covariate column per timeline variable, splitting episodes at every
/// change time strictly inside an episode. A value recorded at time c applies to
/// (c, ...]; before a subject's first record the declared baseline applies.
inline Merged merge_timeline(const CohortTable& cohort, const Timeline& timeline, const MergeOptions& options = {}) {
  const auto variables = timeline.variables();
  for (const auto& v : variables)
    if (cohort.find_covariate(v)) throw ConfigError("timeline variable '" + v + "' is already a covariate column");
  {
    const auto ids = cohort.subjects();
    for (const auto& s : timeline.subjects())
      if (!std::binary_search(ids.begin(), ids.end(), s))
        throw DataError("timeline subject '" + s + "' is not in the cohort");
  }

  std::vector<std::string> warnings;
  std::vector<Episode> out;
  out.reserve(cohort.size());
  for (std::size_t s = 0; s < cohort.subject_count(); ++s) {
    const auto episodes = cohort.subject(s);
    const std::string& id = episodes.front().subject_id;
    const double last_stop = episodes.back().tstop;

    std::vector<std::vector<std::pair<double, double>>> changes(variables.size());
    for (std::size_t v = 0; v < variables.size(); ++v) {
      for (const auto& r : timeline.history(id, variables[v])) {
        if (r.time > last_stop) {
          warnings.push_back(fmt::format("{}: change of '{}' at {} is after the end of follow-up ({}); ignored", id,
                                         r.variable, text::sig6(r.time), text::sig6(last_stop)));
          continue;
        }
        changes[v].emplace_back(r.time, r.value);
      }
    }
    const auto value_at = [&](std::size_t v, double t) {
      const auto& c = changes[v];
      auto it = std::upper_bound(c.begin(), c.end(), t, [](double x, const auto& p) { return x < p.first; });
      if (it != c.begin()) return std::prev(it)->second;
      auto b = options.baselines.find(variables[v]);
      if (b == options.baselines.end())
        throw DataError(fmt::format("missing baseline value for '{}' (subject {} has no record at or before {})",
                                    variables[v], id, text::sig6(t)));
      return b->second;
    };

    for (const auto& e : episodes) {
      std::vector<double> cuts;
      for (const auto& c : changes)
        for (const auto& [t, value] : c)
          if (t > e.tstart && t < e.tstop) cuts.push_back(t);
      std::sort(cuts.begin(), cuts.end());
      cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
      double start = e.tstart;
      for (std::size_t k = 0; k <= cuts.size(); ++k) {
        Episode piece = e;
        piece.tstart = start;
        piece.tstop = k < cuts.size() ? cuts[k] : e.tstop;
        if (k < cuts.size()) piece.status = 0;
        for (std::size_t v = 0; v < variables.size(); ++v) piece.covariates.push_back(value_at(v, start));
        start = piece.tstop;
        out.push_back(std::move(piece));
      }
    }
  }

  auto names = cohort.covariate_names();
  auto kinds = cohort.covariate_kinds();
  for (const auto& v : variables) {
    names.push_back(v);
    kinds.push_back(options.external.contains(v) ? CovariateKind::external : CovariateKind::internal);
  }
  return {CohortTable(std::move(out), std::move(names), cohort.cause_labels(), cohort.time_axis(), std::move(kinds)),
          std::move(warnings)};
}

/// Shifts every episode of each subject by that subject's offset (e.g. age at entry).
inline CohortTable switch_time_axis(const CohortTable& cohort, const std::map<std::string, double>& offsets,
                                    std::string axis_label) {
  std::vector<Episode> out = cohort.episodes();
  for (auto& e : out) {
    auto it = offsets.find(e.subject_id);
    if (it == offsets.end()) throw DataError("no time offset for subject " + e.subject_id);
    e.tstart += it->second;
    e.tstop += it->second;
    if (e.tstart < 0) throw DataError("time offset produces a negative time for subject " + e.subject_id);
  }
  return CohortTable(std::move(out), cohort.covariate_names(), cohort.cause_labels(), std::move(axis_label),
                     cohort.covariate_kinds());
}

/// Per-subject offsets taken from a covariate column on each subject's first episode.
inline std::map<std::string, double> subject_offsets(const CohortTable& cohort, std::string_view column) {
  const auto c = cohort.covariate_index(column);
  std::map<std::string, double> out;
  for (std::size_t s = 0; s < cohort.subject_count(); ++s) {
    const auto& first = cohort.subject(s).front();
    out[first.subject_id] = first.covariates[c];
  }
  return out;
}

/// Splits episodes at the interior cutpoints. When `interval_column` is given, each
/// fragment records its interval index: the number of cutpoints strictly below its end.
inline CohortTable split_episodes(const CohortTable& cohort, std::span<const double> cutpoints,
                                  std::optional<std::string> interval_column = std::nullopt) {
  if (!std::is_sorted(cutpoints.begin(), cutpoints.end()) ||
      std::adjacent_find(cutpoints.begin(), cutpoints.end()) != cutpoints.end())
    throw ConfigError("cutpoints must be strictly ascending");
  std::vector<Episode> out;
  out.reserve(cohort.size());
  for (const auto& e : cohort.episodes()) {
    double start = e.tstart;
    auto it = std::upper_bound(cutpoints.begin(), cutpoints.end(), e.tstart);
    while (true) {
      const bool last = it == cutpoints.end() || *it >= e.tstop;
      Episode piece = e;
      piece.tstart = start;
      piece.tstop = last ? e.tstop : *it;
      if (!last) piece.status = 0;
      if (interval_column) {
        const auto index = std::lower_bound(cutpoints.begin(), cutpoints.end(), piece.tstop) - cutpoints.begin();
        piece.covariates.push_back(static_cast<double>(index));
      }
      out.push_back(std::move(piece));
      if (last) break;
      start = *it++;
    }
  }
  auto names = cohort.covariate_names();
  auto kinds = cohort.covariate_kinds();
  if (interval_column) {
    names.push_back(*interval_column);
    kinds.push_back(CovariateKind::external);
  }
  return CohortTable(std::move(out), std::move(names), cohort.cause_labels(), cohort.time_axis(), std::move(kinds));
}

/// Keeps the subjects whose first episode satisfies `keep`.
inline CohortTable select_subjects(const CohortTable& cohort, const std::function<bool(const Episode&)>& keep) {
  std::vector<Episode> out;
  for (std::size_t s = 0; s < cohort.subject_count(); ++s) {
    const auto episodes = cohort.subject(s);
    if (keep(episodes.front())) out.insert(out.end(), episodes.begin(), episodes.end());
  }
  if (out.empty()) throw DataError("subject selection is empty");
  return CohortTable(std::move(out), cohort.covariate_names(), cohort.cause_labels(), cohort.time_axis(),
                     cohort.covariate_kinds());
}

}  // namespace survkit

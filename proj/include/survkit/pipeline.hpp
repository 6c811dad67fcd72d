#pragma once

// Config-driven batch runs: load and prepare a cohort, validate every block of
// a declarative JSON configuration against it, then execute the blocks in order
// writing one artifact set per block plus a run manifest.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <boost/version.hpp>
#include <fmt/format.h>
#include <json.hpp>
#include <openssl/evp.h>

#include "survkit/cohort.hpp"
#include "survkit/cox.hpp"
#include "survkit/diagnostics.hpp"
#include "survkit/lint.hpp"
#include "survkit/nonparam.hpp"
#include "survkit/predict.hpp"
#include "survkit/rates.hpp"
#include "survkit/report.hpp"
#include "survkit/simulate.hpp"

namespace survkit::pipeline {

inline constexpr const char* version = "0.1.0";

enum ExitCode : int { ok = 0, config_error = 2, data_error = 3, lint_failure = 4, numerical_failure = 5 };

inline std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  EVP_Digest(data.data(), data.size(), digest, &length, EVP_sha256(), nullptr);
  std::string out;
  for (unsigned int i = 0; i < length; ++i) out += fmt::format("{:02x}", digest[i]);
  return out;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// Configuration

struct InputConfig {
  std::optional<std::filesystem::path> episodes;
  std::optional<std::filesystem::path> timeline;
  char delimiter = ',';
  std::map<std::string, std::string> reference_levels;
  std::map<int, std::string> cause_labels;
  std::map<std::string, double> baselines;  // timeline variables before their first record
  std::set<std::string> external;
};

struct AxisConfig {
  std::string name;
  std::string offset_column;
};

struct Subset {
  std::string column;  // "stratum" selects the episode stratum label
  nlohmann::json equals;
};

struct Block {
  std::string type;
  std::string name;
  nlohmann::json params;
  std::optional<Subset> subset;
};

struct TableConfig {
  std::string name;
  std::vector<std::string> groups;
  std::string extra_title;
  int decimals = 2;
  struct Section {
    std::string title;
    std::vector<std::string> fits;  // one per group
    std::vector<std::pair<std::string, std::string>> rows;  // label, coefficient
  };
  std::vector<Section> sections;
};

struct AnalysisConfig {
  InputConfig inputs;
  std::optional<AxisConfig> axis;
  std::filesystem::path output_dir = "survkit-out";
  std::uint64_t seed = 1;
  std::vector<Block> blocks;
  std::vector<TableConfig> tables;
  std::string source;  // canonical config text, hashed into the manifest
};

inline const std::set<std::string>& block_types() {
  static const std::set<std::string> types{"lint",    "km",      "na",       "aj",      "censoring", "cox",
                                           "poisson", "landmark", "predict", "gformula", "simulate"};
  return types;
}

inline AnalysisConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir = ".") {
  try {
    AnalysisConfig c;
    const auto resolve = [&](const std::string& p) {
      std::filesystem::path path(p);
      return path.is_absolute() ? path : base_dir / path;
    };
    if (j.contains("inputs")) {
      const auto& in = j["inputs"];
      if (in.contains("episodes")) c.inputs.episodes = resolve(in["episodes"].get<std::string>());
      if (in.contains("timeline")) c.inputs.timeline = resolve(in["timeline"].get<std::string>());
      const auto delimiter = in.value("delimiter", std::string(","));
      if (delimiter.size() != 1) throw ConfigError("inputs.delimiter must be a single character");
      c.inputs.delimiter = delimiter == "\\t" ? '\t' : delimiter.front();
      c.inputs.reference_levels = in.value("reference_levels", std::map<std::string, std::string>{});
      for (const auto& [code, label] : in.value("cause_labels", std::map<std::string, std::string>{}))
        c.inputs.cause_labels[std::stoi(code)] = label;
      c.inputs.baselines = in.value("baselines", std::map<std::string, double>{});
      for (const auto& v : in.value("external", std::vector<std::string>{})) c.inputs.external.insert(v);
    }
    if (j.contains("time_axis"))
      c.axis = AxisConfig{j["time_axis"].at("name").get<std::string>(),
                          j["time_axis"].at("offset_column").get<std::string>()};
    if (j.contains("output_dir")) c.output_dir = resolve(j["output_dir"].get<std::string>());
    c.seed = j.value("seed", std::uint64_t{1});
    std::set<std::string> names;
    for (const auto& b : j.at("blocks")) {
      Block block;
      block.type = b.at("type").get<std::string>();
      if (!block_types().contains(block.type)) throw ConfigError("unknown block type '" + block.type + "'");
      block.name = b.value("name", block.type);
      if (!names.insert(block.name).second) throw ConfigError("duplicate block name '" + block.name + "'");
      if (block.name.find_first_of("/\\") != std::string::npos)
        throw ConfigError("block name '" + block.name + "' must not contain path separators");
      if (b.contains("subset"))
        block.subset = Subset{b["subset"].at("column").get<std::string>(), b["subset"].at("equals")};
      block.params = b;
      if (block.type == "simulate" && block.params.contains("scenario_file"))
        block.params["scenario"] = nlohmann::json::parse(read_file(resolve(b["scenario_file"].get<std::string>())));
      c.blocks.push_back(std::move(block));
    }
    if (c.blocks.empty()) throw ConfigError("config has no blocks");
    for (const auto& t : j.value("tables", nlohmann::json::array())) {
      TableConfig table;
      table.name = t.at("name").get<std::string>();
      table.groups = t.at("groups").get<std::vector<std::string>>();
      table.extra_title = t.value("extra_title", std::string());
      table.decimals = t.value("decimals", 2);
      for (const auto& s : t.at("sections")) {
        TableConfig::Section section;
        section.title = s.value("title", std::string());
        section.fits = s.at("fits").get<std::vector<std::string>>();
        if (section.fits.size() != table.groups.size())
          throw ConfigError("table '" + table.name + "': each section needs one fit per group");
        for (const auto& r : s.at("rows"))
          section.rows.emplace_back(r.at("label").get<std::string>(), r.at("coefficient").get<std::string>());
        table.sections.push_back(std::move(section));
      }
      c.tables.push_back(std::move(table));
    }
    c.source = j.dump();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
}

inline AnalysisConfig read_config_file(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(j, path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
}

// ---------------------------------------------------------------------------
// Block parameters

inline ModelSpec model_spec(const nlohmann::json& b) {
  ModelSpec spec;
  for (const auto& t : b.at("terms")) {
    const auto covariate = t.at("covariate").get<std::string>();
    const auto transform = t.value("transform", std::string("linear"));
    if (transform == "linear")
      spec.terms.push_back(Term::linear(covariate));
    else if (transform == "spline")
      spec.terms.push_back(Term::spline(covariate, t.value("knots", std::vector<double>{})));
    else if (transform == "time_varying")
      spec.terms.push_back(Term::time_varying(covariate, t.at("cutpoints").get<std::vector<double>>()));
    else if (transform == "interaction")
      spec.terms.push_back(Term::interaction(covariate, t.at("with").get<std::string>()));
    else
      throw ConfigError("unknown term transform '" + transform + "'");
  }
  if (b.contains("strata")) spec.strata = b["strata"].get<std::string>();
  const auto ties = b.value("ties", std::string("breslow"));
  if (ties != "breslow" && ties != "efron") throw ConfigError("ties must be 'breslow' or 'efron'");
  spec.ties = ties == "efron" ? Ties::efron : Ties::breslow;
  if (b.contains("cause")) {
    if (b["cause"].is_null() || b["cause"] == "any")
      spec.cause.reset();
    else
      spec.cause = b["cause"].get<int>();
  }
  return spec;
}

/// Numbers, or "inf" / "-inf" for open-ended bins.
inline std::vector<double> cutpoints(const nlohmann::json& j) {
  std::vector<double> out;
  for (const auto& c : j) {
    if (c.is_number()) out.push_back(c.get<double>());
    else if (c == "inf") out.push_back(HUGE_VAL);
    else if (c == "-inf") out.push_back(-HUGE_VAL);
    else throw ConfigError("cutpoints must be numbers or \"inf\"");
  }
  return out;
}

inline TimeTransform time_transform(const std::string& s) {
  if (s == "identity") return TimeTransform::identity;
  if (s == "rank") return TimeTransform::rank;
  if (s == "km") return TimeTransform::km;
  throw ConfigError("unknown PH-test time transform '" + s + "'");
}

inline std::optional<int> cause_param(const nlohmann::json& b, std::optional<int> fallback) {
  if (!b.contains("cause")) return fallback;
  if (b["cause"].is_null() || b["cause"] == "any") return std::nullopt;
  return b["cause"].get<int>();
}

// ---------------------------------------------------------------------------
// Run

struct RunOptions {
  std::optional<std::filesystem::path> output_dir;
  std::optional<std::uint64_t> seed;
  int verbosity = 1;
  bool check_only = false;
};

struct RunResult {
  int exit_code = ok;
  std::vector<std::string> outputs;
  std::string message;
};

namespace detail {

struct State {
  std::optional<CohortTable> cohort;
  std::optional<Timeline> timeline;
  std::map<std::string, std::shared_ptr<CoxFit>> fits;
  std::vector<std::string> warnings;
};

inline CohortTable apply_subset(const CohortTable& cohort, const std::optional<Subset>& subset) {
  if (!subset) return cohort;
  if (subset->column == "stratum") {
    const auto label = subset->equals.is_string() ? subset->equals.get<std::string>() : subset->equals.dump();
    return select_subjects(cohort, [&](const Episode& e) { return e.stratum && *e.stratum == label; });
  }
  const auto c = cohort.covariate_index(subset->column);
  const double value = subset->equals.get<double>();
  return select_subjects(cohort, [&](const Episode& e) { return e.covariates[c] == value; });
}

/// Columns a block reads, for fail-fast validation.
inline std::vector<std::string> referenced_columns(const Block& b) {
  std::vector<std::string> out;
  const auto& p = b.params;
  if (b.subset && b.subset->column != "stratum") out.push_back(b.subset->column);
  if (b.type == "cox" || b.type == "landmark") {
    for (const auto& name : survkit::detail::model_columns(model_spec(p))) out.push_back(name);
  }
  if (b.type == "poisson") {
    for (const auto& c : p.value("pattern", std::vector<std::string>{})) out.push_back(c);
    for (const auto& a : p.at("axes"))
      if (a.contains("offset_column")) out.push_back(a["offset_column"].get<std::string>());
  }
  if (b.type == "gformula") out.push_back(p.at("treatment").get<std::string>());
  return out;
}

class Runner {
 public:
  Runner(const AnalysisConfig& config, const RunOptions& options, std::ostream& log)
      : config_(config), options_(options), log_(log) {
    out_dir_ = options.output_dir.value_or(config.output_dir);
    seed_ = options.seed.value_or(config.seed);
  }

  RunResult run() {
    RunResult result;
    const auto fail = [&](int code, const std::string& message) {
      result.exit_code = code;
      result.message = message;
      log_ << "error: " << message << '\n';
    };
    std::string stage = "inputs";
    try {
      load();
      stage = "validation";
      validate();
      if (options_.check_only) {
        log_ << "config OK: " << config_.blocks.size() << " blocks\n";
        return result;
      }
      std::filesystem::create_directories(out_dir_);
      bool lint_failed = false;
      for (const auto& block : config_.blocks) {
        stage = "block '" + block.name + "'";
        if (options_.verbosity > 0) log_ << "running " << block.type << " block '" << block.name << "'\n";
        lint_failed |= execute(block);
        blocks_run_.push_back(block.name);
      }
      stage = "tables";
      for (const auto& t : config_.tables) write_table(t);
      if (lint_failed) fail(lint_failure, "lint reported error-severity findings");
    } catch (const ConfigError& e) {
      fail(config_error, stage + ": " + e.what());
    } catch (const NumericalError& e) {
      fail(numerical_failure, stage + ": " + e.what());
    } catch (const DataError& e) {
      fail(data_error, stage + ": " + e.what());
    } catch (const std::filesystem::filesystem_error& e) {
      fail(data_error, stage + ": " + e.what());
    } catch (const nlohmann::json::exception& e) {
      fail(config_error, stage + ": " + e.what());
    }
    if (!options_.check_only && std::filesystem::exists(out_dir_)) write_manifest(result);
    result.outputs = outputs_;
    return result;
  }

 private:
  // -- inputs -------------------------------------------------------------

  void load() {
    const auto& in = config_.inputs;
    if (!in.episodes) {
      if (in.timeline) throw ConfigError("inputs.timeline needs inputs.episodes");
      return;
    }
    IngestOptions ingest;
    ingest.delimiter = in.delimiter;
    ingest.reference_levels = in.reference_levels;
    ingest.cause_labels = in.cause_labels;
    auto ingested = ingest_episode_file(in.episodes->string(), ingest);
    for (auto& w : ingested.warnings) warn(std::move(w));
    CohortTable cohort = std::move(ingested.cohort);
    if (in.timeline) {
      state_.timeline = read_timeline_file(in.timeline->string(), in.delimiter);
      // variables already coded in the episode file are only linted against the timeline
      std::vector<TimelineRecord> to_merge;
      for (const auto& r : state_.timeline->records())
        if (!cohort.find_covariate(r.variable)) to_merge.push_back(r);
      for (const auto& v : state_.timeline->variables()) {
        if (cohort.find_covariate(v))
          warn("timeline variable '" + v + "' is coded in the episode file; used for lint only");
        else if (!in.baselines.contains(v))
          throw ConfigError("timeline variable '" + v + "' needs a value in inputs.baselines");
      }
      auto merged = merge_timeline(cohort, Timeline(std::move(to_merge)), MergeOptions{in.baselines, in.external});
      for (auto& w : merged.warnings) warn(std::move(w));
      cohort = std::move(merged.cohort);
    }
    if (config_.axis) {
      const auto offsets = subject_offsets(cohort, config_.axis->offset_column);
      cohort = switch_time_axis(cohort, offsets, config_.axis->name);
      if (state_.timeline) {
        auto records = state_.timeline->records();
        for (auto& r : records)
          if (auto it = offsets.find(r.subject_id); it != offsets.end()) r.time += it->second;
        state_.timeline = Timeline(std::move(records));
      }
    }
    state_.cohort = std::move(cohort);
  }

  void warn(std::string message) {
    if (options_.verbosity > 1) log_ << "warning: " << message << '\n';
    state_.warnings.push_back(std::move(message));
  }

  // -- validation ---------------------------------------------------------

  void validate() {
    std::set<std::string> columns;
    bool have_cohort = state_.cohort.has_value();
    if (have_cohort)
      for (const auto& c : state_.cohort->covariate_names()) columns.insert(c);
    std::map<std::string, std::string> fit_types;  // fit-producing block -> type
    for (const auto& b : config_.blocks) {
      const auto where = "block '" + b.name + "': ";
      try {
        if (b.type == "simulate") {
          const auto scenario = scenario_from_json(b.params.at("scenario"));
          if (b.params.value("use", false)) {
            have_cohort = true;
            columns.clear();
            for (const auto& g : scenario.covariates) columns.insert(g.name);
            if (scenario.exposure) columns.insert(scenario.exposure->name);
          }
          continue;
        }
        if (!have_cohort) throw ConfigError("no cohort: give inputs.episodes or a preceding simulate block with \"use\": true");
        for (const auto& c : referenced_columns(b))
          if (!columns.contains(c)) throw ConfigError("unknown covariate column '" + c + "'");
        if (b.type == "cox" || b.type == "landmark") {
          if (model_spec(b.params).terms.empty() && b.type == "landmark")
            throw ConfigError("model needs at least one term");
          if (b.params.contains("ph_test")) time_transform(b.params["ph_test"].get<std::string>());
          if (b.params.contains("nested") && fit_types[b.params["nested"].get<std::string>()] != "cox")
            throw ConfigError("nested model '" + b.params["nested"].get<std::string>() + "' is not an earlier cox block");
          if (b.type == "landmark") {
            b.params.at("landmarks").get<std::vector<double>>();
            if (!(b.params.at("window").get<double>() > 0)) throw ConfigError("window must be positive");
          }
        }
        if (b.type == "poisson") {
          for (const auto& a : b.params.at("axes")) {
            a.at("name").get<std::string>();
            cutpoints(a.at("cutpoints"));
          }
          for (const auto& t : b.params.value("terms", nlohmann::json::array()))
            if (!t.contains("axis") && !t.contains("factor") && !t.contains("linear"))
              throw ConfigError("poisson terms need one of axis, factor, linear");
        }
        if (b.type == "predict" || b.type == "gformula") {
          for (const auto& f : fit_references(b))
            if (fit_types[f] != "cox") throw ConfigError("'" + f + "' is not an earlier cox block");
          if (b.type == "predict") {
            b.params.at("profile").get<std::map<std::string, double>>();
            const auto form = b.params.value("form", std::string("product_limit"));
            if (form != "product_limit" && form != "exponential")
              throw ConfigError("form must be 'product_limit' or 'exponential'");
          } else {
            b.params.at("times").get<std::vector<double>>();
          }
        }
        if (b.type == "km" && b.params.contains("condition_time")) b.params["condition_time"].get<double>();
      } catch (const ConfigError& e) {
        throw ConfigError(where + e.what());
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(where + e.what());
      }
      if (b.type == "cox") fit_types[b.name] = "cox";
    }
    for (const auto& t : config_.tables)
      for (const auto& s : t.sections)
        for (const auto& f : s.fits)
          if (!f.empty() && !fit_types.contains(f) &&
              std::none_of(config_.blocks.begin(), config_.blocks.end(),
                           [&](const Block& b) { return b.name == f && (b.type == "poisson" || b.type == "landmark"); }))
            throw ConfigError("table '" + t.name + "' references unknown fit '" + f + "'");
  }

  static std::vector<std::string> fit_references(const Block& b) {
    if (b.params.contains("fits")) return b.params["fits"].get<std::vector<std::string>>();
    return {b.params.at("fit").get<std::string>()};
  }

  // -- execution ----------------------------------------------------------

  std::filesystem::path path(const Block& b, const std::string& suffix) {
    auto p = out_dir_ / (b.name + suffix);
    outputs_.push_back(p.filename().string());
    return p;
  }

  static void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw DataError("cannot write " + p.string());
    out << text;
  }

  template <class F>
  void write_with(const std::filesystem::path& p, F&& f) {
    std::ostringstream ss;
    f(ss);
    write_text(p, ss.str());
  }

  /// Returns true when the block is a lint with error findings.
  bool execute(const Block& b) {
    const auto& p = b.params;
    if (b.type == "simulate") {
      auto scenario = scenario_from_json(p.at("scenario"));
      if (!p["scenario"].contains("seed")) scenario.seed = seed_;
      auto sim = simulate_cohort(scenario);
      write_with(path(b, ".episodes.csv"), [&](auto& o) { emit_episodes(sim.cohort, o); });
      write_with(path(b, ".timeline.csv"), [&](auto& o) { emit_timeline(sim.timeline, o); });
      write_text(path(b, ".truth.json"), sim.truth.dump(2) + "\n");
      if (p.value("use", false)) {
        state_.cohort = std::move(sim.cohort);
        state_.timeline = std::move(sim.timeline);
      }
      return false;
    }
    const CohortTable cohort = apply_subset(*state_.cohort, b.subset);
    const double level = p.value("level", 0.95);

    if (b.type == "lint") {
      LintOptions lo;
      lo.baselines = config_.inputs.baselines;
      lo.dropout_threshold = p.value("dropout_threshold", 0.20);
      if (p.contains("administrative_cutoff")) lo.administrative_cutoff = p["administrative_cutoff"].get<double>();
      const auto report = lint(cohort, state_.timeline ? &*state_.timeline : nullptr, lo);
      write_with(path(b, ".lint.txt"), [&](auto& o) { write_lint_text(report, o); });
      write_text(path(b, ".lint.json"), lint_json(report).dump(2) + "\n");
      return report.has_errors();
    }
    if (b.type == "km") {
      std::optional<double> t0;
      if (p.contains("condition_time")) t0 = p["condition_time"].get<double>();
      const auto f = kaplan_meier(cohort, t0, level);
      write_with(path(b, ".csv"), [&](auto& o) { write_step_function(f, o); });
      return false;
    }
    if (b.type == "na") {
      const auto f = nelson_aalen(cohort, cause_param(p, 1), level);
      write_with(path(b, ".csv"), [&](auto& o) { write_step_function(f, o); });
      return false;
    }
    if (b.type == "censoring") {
      const auto f = censoring_curve(cohort, level);
      write_with(path(b, ".csv"), [&](auto& o) { write_step_function(f, o); });
      return false;
    }
    if (b.type == "aj") {
      const auto ci = aalen_johansen(cohort);
      for (const auto& [k, f] : ci.incidence)
        write_with(path(b, fmt::format(".cause{}.csv", k)), [&](auto& o) { write_step_function(f, o); });
      write_with(path(b, ".survival.csv"), [&](auto& o) { write_step_function(ci.survival, o); });
      return false;
    }
    if (b.type == "cox") {
      const auto spec = model_spec(p);
      auto fit = std::make_shared<CoxFit>(spec.terms.empty() ? null_model(cohort, spec) : fit_cox(cohort, spec));
      auto summary = cox_summary_json(*fit, level);
      if (!fit->names.empty() && p.contains("ph_test"))
        summary["ph_test"] = ph_test_json(ph_test(*fit, time_transform(p["ph_test"].get<std::string>())));
      if (p.contains("nested")) {
        const auto t = model_tests(*fit, state_.fits.at(p["nested"].get<std::string>()).get());
        summary["tests"]["lr_nested"] = {{"against", p["nested"]}, {"chisq", t.lr_chisq}, {"df", t.lr_df}, {"p", t.lr_p}};
      }
      write_text(path(b, ".json"), summary.dump(2) + "\n");
      if (!fit->names.empty()) {
        HrTable table;
        table.groups = {b.name};
        std::vector<std::pair<std::string, std::string>> rows;
        for (const auto& n : fit->names) rows.emplace_back(n, n);
        table.add_section("", rows, {hr_column(*fit, level)});
        write_with(path(b, ".hr.txt"), [&](auto& o) { write_sig6_table(table, o); });
      }
      for (std::size_t s = 0; s < fit->baseline.size(); ++s)
        write_with(path(b, fit->baseline.size() == 1 ? ".baseline.csv" : fmt::format(".baseline.{}.csv", s)),
                   [&](auto& o) { write_step_function(fit->baseline[s], o); });
      if (p.value("residuals", false) && !fit->names.empty()) {
        const auto sr = schoenfeld_residuals(*fit);
        write_with(path(b, ".schoenfeld.csv"), [&](auto& o) {
          o << "time,stratum";
          for (const auto& n : sr.names) o << ',' << n << ",scaled_" << n;
          o << '\n';
          for (Eigen::Index i = 0; i < sr.residuals.rows(); ++i) {
            o << text::sig6(sr.times[static_cast<std::size_t>(i)]) << ','
              << fit->strata_labels[static_cast<std::size_t>(sr.strata[static_cast<std::size_t>(i)])];
            for (Eigen::Index j = 0; j < sr.residuals.cols(); ++j)
              o << ',' << text::sig6(sr.residuals(i, j)) << ',' << text::sig6(sr.scaled(i, j));
            o << '\n';
          }
        });
        const auto mr = martingale_residuals(*fit);
        write_with(path(b, ".martingale.csv"), [&](auto& o) {
          o << "id,residual\n";
          for (std::size_t i = 0; i < mr.size(); ++i) o << fit->design->subject_ids[i] << ',' << text::sig6(mr[i]) << '\n';
        });
      }
      state_.fits[b.name] = std::move(fit);
      return false;
    }
    if (b.type == "poisson") {
      std::vector<TimeAxis> axes;
      for (const auto& a : p.at("axes")) {
        TimeAxis axis{a.at("name").get<std::string>(), cutpoints(a.at("cutpoints")), {}};
        if (a.contains("offset_column")) axis.offsets = subject_offsets(cohort, a["offset_column"].get<std::string>());
        axes.push_back(std::move(axis));
      }
      const auto table = tabulate_person_time(cohort, axes, p.value("pattern", std::vector<std::string>{}),
                                              cause_param(p, 1));
      write_with(path(b, ".rates.csv"), [&](auto& o) { write_rate_table(table, o); });
      RateModelSpec spec;
      for (const auto& t : p.value("terms", nlohmann::json::array())) {
        if (t.contains("axis")) spec.terms.push_back(RateTerm::axis(t["axis"].get<std::string>()));
        else if (t.contains("factor")) spec.terms.push_back(RateTerm::factor(t["factor"].get<std::string>()));
        else spec.terms.push_back(RateTerm::linear(t["linear"].get<std::string>()));
      }
      if (!spec.terms.empty() || p.value("fit", true)) {
        const auto fit = fit_rate_model(table, spec);
        write_text(path(b, ".json"), poisson_summary_json(fit, level).dump(2) + "\n");
        poisson_fits_.emplace(b.name, hr_column(fit, level));
      }
      return false;
    }
    if (b.type == "landmark") {
      const auto spec = model_spec(p);
      const double window = p.at("window").get<double>();
      nlohmann::json summaries = nlohmann::json::array();
      HrColumn first;
      std::vector<HrColumn> columns;
      HrTable table;
      for (double t_lm : p.at("landmarks").get<std::vector<double>>()) {
        const auto fit = landmark_fit(cohort, t_lm, window, spec);
        auto s = cox_summary_json(fit, level);
        s["landmark"] = t_lm;
        s["window"] = window;
        summaries.push_back(std::move(s));
        columns.push_back(hr_column(fit, level));
        table.groups.push_back("From " + text::sig6(t_lm));
        if (columns.size() == 1) first = columns.front();
      }
      write_text(path(b, ".json"), summaries.dump(2) + "\n");
      std::vector<std::pair<std::string, std::string>> rows;
      for (const auto& n : first.names) rows.emplace_back(n, n);
      table.add_section("", rows, columns);
      write_with(path(b, ".hr.txt"), [&](auto& o) { write_sig6_table(table, o); });
      landmark_columns_.emplace(b.name, std::move(columns));
      return false;
    }
    if (b.type == "predict") {
      CovariateProfile profile;
      profile.values = p.at("profile").get<std::map<std::string, double>>();
      if (p.contains("stratum")) profile.stratum = p["stratum"].get<std::string>();
      const double t_pred = p.value("t_pred", 0.0);
      const auto refs = fit_references(b);
      if (refs.size() == 1 && !p.value("cuminc", false)) {
        const auto curve = predict_survival(*state_.fits.at(refs.front()), profile, t_pred);
        write_with(path(b, ".csv"), [&](auto& o) { write_risk_curve(curve, o); });
      } else {
        std::vector<const CoxFit*> fits;
        for (const auto& r : refs) fits.push_back(state_.fits.at(r).get());
        const auto form = p.value("form", std::string("product_limit")) == "exponential" ? IncidenceForm::exponential
                                                                                         : IncidenceForm::product_limit;
        const auto ci = predict_cuminc(fits, profile, t_pred, form);
        for (const auto& [k, curve] : ci.incidence)
          write_with(path(b, fmt::format(".cause{}.csv", k)), [&](auto& o) { write_risk_curve(curve, o); });
        write_with(path(b, ".survival.csv"), [&](auto& o) { write_step_function(ci.survival, o); });
      }
      return false;
    }
    if (b.type == "gformula") {
      std::vector<const CoxFit*> fits;
      for (const auto& r : fit_references(b)) fits.push_back(state_.fits.at(r).get());
      GFormulaOptions go;
      go.bootstrap_replicates = p.value("bootstrap", 0);
      go.seed = p.value("seed", seed_);
      go.level = level;
      if (p.contains("cause")) go.cause = p["cause"].get<int>();
      const auto contrast = g_formula(fits, cohort, p.at("treatment").get<std::string>(),
                                      p.at("times").get<std::vector<double>>(), go);
      write_with(path(b, ".csv"), [&](auto& o) { write_causal_contrast(contrast, o); });
      write_text(path(b, ".json"), causal_contrast_json(contrast).dump(2) + "\n");
      return false;
    }
    throw ConfigError("unknown block type '" + b.type + "'");
  }

  /// HR table with 6 significant digits, the pipeline's text precision.
  static void write_sig6_table(const HrTable& table, std::ostream& out) {
    HrTable copy = table;
    copy.decimals = -1;
    write_hr_table(copy, out);
  }

  void write_table(const TableConfig& t) {
    HrTable table;
    table.groups = t.groups;
    table.extra_title = t.extra_title;
    table.decimals = t.decimals;
    for (const auto& s : t.sections) {
      std::vector<HrColumn> columns;
      for (const auto& f : s.fits) {
        if (f.empty()) columns.emplace_back();
        else if (state_.fits.contains(f)) columns.push_back(hr_column(*state_.fits.at(f)));
        else if (poisson_fits_.contains(f)) columns.push_back(poisson_fits_.at(f));
        else throw ConfigError("table '" + t.name + "': fit '" + f + "' produced no estimates");
      }
      table.add_section(s.title, s.rows, columns);
    }
    const auto p = out_dir_ / (t.name + ".txt");
    outputs_.push_back(p.filename().string());
    std::ostringstream ss;
    write_hr_table(table, ss);
    write_text(p, ss.str());
  }

  void write_manifest(const RunResult& result) {
    nlohmann::json m;
    m["survkit_version"] = version;
    m["library_versions"] = {
        {"eigen", fmt::format("{}.{}.{}", EIGEN_WORLD_VERSION, EIGEN_MAJOR_VERSION, EIGEN_MINOR_VERSION)},
        {"fmt", FMT_VERSION},
        {"boost", BOOST_LIB_VERSION},
        {"nlohmann_json", fmt::format("{}.{}.{}", NLOHMANN_JSON_VERSION_MAJOR, NLOHMANN_JSON_VERSION_MINOR,
                                      NLOHMANN_JSON_VERSION_PATCH)}};
    m["config_sha256"] = sha256_hex(config_.source);
    m["seed"] = seed_;
    nlohmann::json inputs = nlohmann::json::array();
    for (const auto& path : {config_.inputs.episodes, config_.inputs.timeline})
      if (path && std::filesystem::exists(*path))
        inputs.push_back({{"path", path->string()}, {"sha256", sha256_hex(read_file(*path))}});
    m["inputs"] = inputs;
    m["blocks_run"] = blocks_run_;
    m["outputs"] = outputs_;
    m["warnings"] = state_.warnings;
    m["exit_code"] = result.exit_code;
    m["message"] = result.message;
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::ostringstream ts;
    ts << std::put_time(std::gmtime(&now), "%Y-%m-%dT%H:%M:%SZ");
    m["timestamp"] = ts.str();
    write_text(out_dir_ / "manifest.json", m.dump(2) + "\n");
  }

  const AnalysisConfig& config_;
  const RunOptions& options_;
  std::ostream& log_;
  std::filesystem::path out_dir_;
  std::uint64_t seed_ = 1;
  State state_;
  std::map<std::string, HrColumn> poisson_fits_;
  std::map<std::string, std::vector<HrColumn>> landmark_columns_;
  std::vector<std::string> outputs_;
  std::vector<std::string> blocks_run_;
};

}  // namespace detail

inline RunResult run_pipeline(const AnalysisConfig& config, const RunOptions& options, std::ostream& log) {
  detail::Runner runner(config, options, log);
  return runner.run();
}

}  // namespace survkit::pipeline

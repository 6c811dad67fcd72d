#pragma once

// Cox proportional hazards regression on counting-process data: design
// construction (linear, spline, interaction and piecewise time-varying terms),
// stratified partial likelihood with Breslow or Efron ties, Newton-Raphson
// fitting and the Breslow cumulative baseline hazard.

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "survkit/cohort.hpp"
#include "survkit/error.hpp"
#include "survkit/nonparam.hpp"
#include "survkit/spline.hpp"
#include "survkit/step_function.hpp"

namespace survkit {

enum class Ties { breslow, efron };

struct Term {
  enum class Kind { linear, spline, time_varying, interaction };

  std::string covariate;
  Kind kind = Kind::linear;
  /// Spline knots (empty selects default quantile knots) or time cutpoints for time_varying.
  std::vector<double> knots;
  /// Second covariate of an interaction term.
  std::string other;

  static Term linear(std::string name) { return {std::move(name), Kind::linear, {}, {}}; }
  static Term spline(std::string name, std::vector<double> knots = {}) {
    return {std::move(name), Kind::spline, std::move(knots), {}};
  }
  /// beta(t) = beta + gamma_j on (c_j, c_{j+1}]: a main effect plus one column per cutpoint.
  static Term time_varying(std::string name, std::vector<double> cutpoints) {
    return {std::move(name), Kind::time_varying, std::move(cutpoints), {}};
  }
  static Term interaction(std::string a, std::string b) { return {std::move(a), Kind::interaction, {}, std::move(b)}; }
};

struct ModelSpec {
  std::vector<Term> terms;
  /// "stratum" selects the episode stratum label; any other value names a covariate column.
  std::optional<std::string> strata;
  Ties ties = Ties::breslow;
  /// Status code counted as the event; other causes are censorings. Unset means any cause.
  std::optional<int> cause = 1;
};

inline std::string to_string(Ties t) { return t == Ties::breslow ? "breslow" : "efron"; }

/// Design matrix and risk-set bookkeeping shared by fitting and diagnostics.
struct CoxDesign {
  ModelSpec spec;  // with spline knots resolved
  std::vector<std::string> names;
  Eigen::MatrixXd x;       // rows x coefficients
  Eigen::VectorXd center;  // column means, used internally for numerical stability
  std::vector<double> tstart;
  std::vector<double> tstop;
  std::vector<char> event;
  std::vector<int> stratum;
  std::vector<std::size_t> subject;
  std::vector<std::string> strata_labels;
  std::vector<std::vector<std::size_t>> by_stop;   // per stratum, tstop descending
  std::vector<std::vector<std::size_t>> by_start;  // per stratum, tstart descending
  std::vector<std::string> subject_ids;
  std::vector<std::string> source_columns;  // covariate columns of the source cohort
  std::vector<CovariateKind> source_kinds;
  std::string time_axis;

  Eigen::Index rows() const { return x.rows(); }
  Eigen::Index cols() const { return x.cols(); }
  std::size_t events() const { return static_cast<std::size_t>(std::count(event.begin(), event.end(), 1)); }
};

namespace detail {

/// Maps a covariate vector (source cohort layout) and a time to one design row.
class RowBuilder {
 public:
  RowBuilder(const ModelSpec& spec, const std::vector<std::string>& columns) : spec_(spec) {
    const auto index = [&](const std::string& name) {
      for (std::size_t i = 0; i < columns.size(); ++i)
        if (columns[i] == name) return i;
      throw ConfigError("model references unknown covariate column '" + name + "'");
    };
    for (const auto& term : spec_.terms) {
      first_.push_back(index(term.covariate));
      second_.push_back(term.kind == Term::Kind::interaction ? index(term.other) : 0);
    }
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& term : spec_.terms) {
      switch (term.kind) {
        case Term::Kind::linear:
          out.push_back(term.covariate);
          break;
        case Term::Kind::spline:
          out.push_back(term.covariate);
          for (std::size_t j = 1; j + 1 < term.knots.size(); ++j)
            out.push_back(term.covariate + std::string(j, '\''));
          break;
        case Term::Kind::time_varying:
          out.push_back(term.covariate);
          for (std::size_t j = 0; j < term.knots.size(); ++j) {
            const double hi = j + 1 < term.knots.size() ? term.knots[j + 1] : HUGE_VAL;
            out.push_back(fmt::format("{}:t({},{}]", term.covariate, text::sig6(term.knots[j]), text::sig6(hi)));
          }
          break;
        case Term::Kind::interaction:
          out.push_back(term.covariate + ":" + term.other);
          break;
      }
    }
    return out;
  }

  /// Appends the design row for covariates `z` at time `t` (t selects the
  /// active interval of time-varying terms: c_j < t <= c_{j+1}).
  void append(const std::vector<double>& z, double t, std::vector<double>& row) const {
    for (std::size_t k = 0; k < spec_.terms.size(); ++k) {
      const auto& term = spec_.terms[k];
      const double v = z[first_[k]];
      switch (term.kind) {
        case Term::Kind::linear:
          row.push_back(v);
          break;
        case Term::Kind::spline:
          for (double b : spline_row(v, term.knots)) row.push_back(b);
          break;
        case Term::Kind::time_varying: {
          row.push_back(v);
          const auto active = std::lower_bound(term.knots.begin(), term.knots.end(), t) - term.knots.begin();
          for (std::ptrdiff_t j = 0; j < static_cast<std::ptrdiff_t>(term.knots.size()); ++j)
            row.push_back(j + 1 == active ? v : 0.0);
          break;
        }
        case Term::Kind::interaction:
          row.push_back(v * z[second_[k]]);
          break;
      }
    }
  }

 private:
  const ModelSpec& spec_;
  std::vector<std::size_t> first_;
  std::vector<std::size_t> second_;
};

inline std::string stratum_label(const Episode& e, const std::optional<std::string>& strata,
                                 std::optional<std::size_t> column) {
  if (!strata) return "all";
  if (column) return text::full(e.covariates[*column]);
  return e.stratum.value_or("");
}

/// Fills knots of spline terms left empty and checks the specification against the cohort.
inline ModelSpec resolve_spec(const CohortTable& cohort, ModelSpec spec) {
  for (auto& term : spec.terms) {
    const auto c = cohort.covariate_index(term.covariate);
    if (term.kind == Term::Kind::interaction) cohort.covariate_index(term.other);
    if (term.kind == Term::Kind::spline) {
      if (term.knots.empty()) {
        std::vector<double> values;
        for (const auto& e : cohort.episodes()) values.push_back(e.covariates[c]);
        term.knots = default_spline_knots(values);
      }
      check_knots(term.knots);
    }
    if (term.kind == Term::Kind::time_varying) {
      if (term.knots.empty()) throw ConfigError("time-varying term '" + term.covariate + "' needs cutpoints");
      for (std::size_t j = 1; j < term.knots.size(); ++j)
        if (!(term.knots[j - 1] < term.knots[j])) throw ConfigError("time cutpoints must be strictly ascending");
    }
  }
  if (spec.strata && *spec.strata != "stratum") cohort.covariate_index(*spec.strata);
  return spec;
}

}  // namespace detail

/// Builds the design for `spec`. Episodes are split at the cutpoints of any
/// time-varying terms so every row lies inside one interval.
inline std::shared_ptr<const CoxDesign> build_design(const CohortTable& input, const ModelSpec& raw_spec) {
  auto design = std::make_shared<CoxDesign>();
  design->spec = detail::resolve_spec(input, raw_spec);
  const auto& spec = design->spec;

  std::set<double> cuts;
  for (const auto& term : spec.terms)
    if (term.kind == Term::Kind::time_varying) cuts.insert(term.knots.begin(), term.knots.end());
  const std::vector<double> cut_vector(cuts.begin(), cuts.end());
  const CohortTable cohort = cuts.empty() ? input : split_episodes(input, cut_vector);

  const detail::RowBuilder builder(spec, cohort.covariate_names());
  design->names = builder.names();
  design->source_columns = cohort.covariate_names();
  design->source_kinds = cohort.covariate_kinds();
  design->time_axis = cohort.time_axis();
  design->subject_ids = cohort.subjects();

  std::optional<std::size_t> strata_column;
  if (spec.strata && *spec.strata != "stratum") strata_column = cohort.covariate_index(*spec.strata);
  std::map<std::string, int> strata;
  for (const auto& e : cohort.episodes()) strata.emplace(detail::stratum_label(e, spec.strata, strata_column), 0);
  int next = 0;
  for (auto& [label, index] : strata) {
    index = next++;
    design->strata_labels.push_back(label);
  }

  const auto n = static_cast<Eigen::Index>(cohort.size());
  const auto p = static_cast<Eigen::Index>(design->names.size());
  design->x.resize(n, p);
  std::vector<double> row;
  std::size_t subject = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& e = cohort.episodes()[static_cast<std::size_t>(i)];
    if (i > 0 && e.subject_id != cohort.episodes()[static_cast<std::size_t>(i) - 1].subject_id) ++subject;
    row.clear();
    builder.append(e.covariates, e.tstop, row);
    for (Eigen::Index j = 0; j < p; ++j) design->x(i, j) = row[static_cast<std::size_t>(j)];
    design->tstart.push_back(e.tstart);
    design->tstop.push_back(e.tstop);
    design->event.push_back(spec.cause ? e.status == *spec.cause : e.status != 0);
    design->stratum.push_back(strata.at(detail::stratum_label(e, spec.strata, strata_column)));
    design->subject.push_back(subject);
  }
  design->center = design->x.colwise().mean().transpose();

  design->by_stop.assign(strata.size(), {});
  design->by_start.assign(strata.size(), {});
  for (std::size_t i = 0; i < static_cast<std::size_t>(n); ++i) {
    design->by_stop[static_cast<std::size_t>(design->stratum[i])].push_back(i);
    design->by_start[static_cast<std::size_t>(design->stratum[i])].push_back(i);
  }
  for (std::size_t s = 0; s < strata.size(); ++s) {
    auto& stop = design->by_stop[s];
    auto& start = design->by_start[s];
    std::stable_sort(stop.begin(), stop.end(), [&](auto a, auto b) { return design->tstop[a] > design->tstop[b]; });
    std::stable_sort(start.begin(), start.end(),
                     [&](auto a, auto b) { return design->tstart[a] > design->tstart[b]; });
  }
  return design;
}

namespace detail {

/// Running risk-set sums at one event time, on centered covariates.
struct RiskSet {
  int stratum;
  double time;
  const std::vector<std::size_t>& deaths;
  double s0;
  const Eigen::VectorXd& s1;
  const Eigen::MatrixXd& s2;
  const Eigen::VectorXd& weight;  // exp of centered linear predictor, per row
};

/// Visits every distinct event time of every stratum (in ascending stratum
/// order, descending time) with the sums over rows at risk: tstart < t <= tstop.
template <class Visitor>
void sweep(const CoxDesign& d, const Eigen::VectorXd& beta, bool second_order, Visitor&& visit) {
  const Eigen::Index p = d.cols();
  const Eigen::MatrixXd xc = d.x.rowwise() - d.center.transpose();
  const Eigen::VectorXd weight = (xc * beta).array().exp().matrix();
  Eigen::VectorXd s1(p);
  Eigen::MatrixXd s2(p, p);
  std::vector<std::size_t> deaths;
  for (std::size_t s = 0; s < d.by_stop.size(); ++s) {
    const auto& stop = d.by_stop[s];
    const auto& start = d.by_start[s];
    double s0 = 0.0;
    s1.setZero();
    s2.setZero();
    const auto update = [&](std::size_t r, double sign) {
      const auto i = static_cast<Eigen::Index>(r);
      const double w = sign * weight(i);
      s0 += w;
      s1.noalias() += w * xc.row(i).transpose();
      if (second_order) s2.noalias() += w * xc.row(i).transpose() * xc.row(i);
    };
    std::size_t i = 0, j = 0;
    while (i < stop.size()) {
      const double t = d.tstop[stop[i]];
      deaths.clear();
      for (; i < stop.size() && d.tstop[stop[i]] == t; ++i) {
        update(stop[i], 1.0);
        if (d.event[stop[i]]) deaths.push_back(stop[i]);
      }
      for (; j < start.size() && d.tstart[start[j]] >= t; ++j) update(start[j], -1.0);
      if (!deaths.empty()) visit(RiskSet{static_cast<int>(s), t, deaths, s0, s1, s2, weight});
    }
  }
}

}  // namespace detail

struct CoxDerivatives {
  double loglik = 0.0;
  Eigen::VectorXd score;
  Eigen::MatrixXd information;
};

/// Log partial likelihood with its gradient and negative Hessian at beta.
inline CoxDerivatives cox_derivatives(const CoxDesign& d, const Eigen::VectorXd& beta, Ties ties) {
  const Eigen::Index p = d.cols();
  CoxDerivatives out{0.0, Eigen::VectorXd::Zero(p), Eigen::MatrixXd::Zero(p, p)};
  const Eigen::MatrixXd xc = d.x.rowwise() - d.center.transpose();
  const Eigen::VectorXd eta = xc * beta;
  Eigen::VectorXd d1(p), a(p);
  Eigen::MatrixXd d2(p, p), c(p, p);
  detail::sweep(d, beta, true, [&](const detail::RiskSet& rs) {
    const auto m = static_cast<double>(rs.deaths.size());
    d1.setZero();
    double d0 = 0.0;
    if (ties == Ties::efron) d2.setZero();
    for (auto r : rs.deaths) {
      const auto i = static_cast<Eigen::Index>(r);
      out.loglik += eta(i);
      out.score += xc.row(i).transpose();
      if (ties == Ties::efron) {
        const double w = rs.weight(i);
        d0 += w;
        d1.noalias() += w * xc.row(i).transpose();
        d2.noalias() += w * xc.row(i).transpose() * xc.row(i);
      }
    }
    if (ties == Ties::breslow || rs.deaths.size() == 1) {
      a = rs.s1 / rs.s0;
      out.loglik -= m * std::log(rs.s0);
      out.score -= m * a;
      out.information.noalias() += m * (rs.s2 / rs.s0 - a * a.transpose());
      return;
    }
    for (std::size_t k = 0; k < rs.deaths.size(); ++k) {
      const double f = static_cast<double>(k) / m;
      const double s0 = rs.s0 - f * d0;
      a = (rs.s1 - f * d1) / s0;
      c = (rs.s2 - f * d2) / s0;
      out.loglik -= std::log(s0);
      out.score -= a;
      out.information.noalias() += c - a * a.transpose();
    }
  });
  return out;
}

/// Jump of the step function at `time`.
struct Jump {
  double time;
  double size;
};

namespace detail {

/// Breslow increments per stratum in time order: d / sum over the risk set of exp(x'beta),
/// for covariates at 0.
inline std::vector<std::vector<Jump>> breslow_jumps(const CoxDesign& d, const Eigen::VectorXd& beta) {
  const double shift = std::exp(d.center.dot(beta));
  std::vector<std::vector<Jump>> jumps(d.strata_labels.size());
  sweep(d, beta, false, [&](const RiskSet& rs) {
    jumps[static_cast<std::size_t>(rs.stratum)].push_back(
        {rs.time, static_cast<double>(rs.deaths.size()) / (rs.s0 * shift)});
  });
  for (auto& j : jumps) std::reverse(j.begin(), j.end());
  return jumps;
}

inline std::vector<StepFunction> cumulate(const CoxDesign& d, const std::vector<std::vector<Jump>>& jumps) {
  std::vector<StepFunction> out;
  for (std::size_t s = 0; s < jumps.size(); ++s) {
    StepFunction f;
    f.initial = 0.0;
    f.origin = HUGE_VAL;
    for (std::size_t i = 0; i < d.tstart.size(); ++i)
      if (d.stratum[i] == static_cast<int>(s)) f.origin = std::min(f.origin, d.tstart[i]);
    double cumulative = 0.0;
    for (const auto& j : jumps[s]) {
      cumulative += j.size;
      f.push(j.time, cumulative);
    }
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace detail

/// Breslow cumulative baseline hazard per stratum at beta, for covariates at 0.
inline std::vector<StepFunction> breslow_baseline(const CoxDesign& d, const Eigen::VectorXd& beta) {
  return detail::cumulate(d, detail::breslow_jumps(d, beta));
}

struct CoxOptions {
  int max_iterations = 25;
  int max_halvings = 10;
  double loglik_tolerance = 1e-9;  // relative change
  double score_tolerance = 1e-8;   // max-norm
  double divergence_bound = 15.0;
};

/// A fitted Cox model. Immutable; shares its design with diagnostics.
struct CoxFit {
  std::vector<std::string> names;
  Eigen::VectorXd beta;
  Eigen::MatrixXd covariance;
  Eigen::VectorXd score;
  double loglik = 0.0;
  double loglik_null = 0.0;
  int iterations = 0;
  std::vector<StepFunction> baseline;  // per stratum, indexed like strata_labels
  std::vector<std::vector<Jump>> baseline_jumps;
  std::vector<std::string> strata_labels;
  ModelSpec spec;
  std::size_t n_events = 0;
  std::size_t n_subjects = 0;
  std::size_t n_rows = 0;
  std::shared_ptr<const CoxDesign> design;

  std::size_t index(std::string_view name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return i;
    throw ConfigError(fmt::format("model has no coefficient '{}'", name));
  }
  double se(std::size_t j) const {
    const auto k = static_cast<Eigen::Index>(j);
    return std::sqrt(covariance(k, k));
  }
  double hazard_ratio(std::size_t j) const { return std::exp(beta(static_cast<Eigen::Index>(j))); }
  std::pair<double, double> hazard_ratio_ci(std::size_t j, double level = 0.95) const {
    const double z = normal_quantile(0.5 + level / 2.0);
    const double b = beta(static_cast<Eigen::Index>(j));
    return {std::exp(b - z * se(j)), std::exp(b + z * se(j))};
  }
  std::optional<std::size_t> stratum_index(std::string_view label) const {
    for (std::size_t s = 0; s < strata_labels.size(); ++s)
      if (strata_labels[s] == label) return s;
    return std::nullopt;
  }
};

/// Cumulative baseline hazard of a fitted model.
inline const std::vector<StepFunction>& breslow_baseline(const CoxFit& fit) { return fit.baseline; }

namespace detail {

inline void check_rank(const CoxDesign& d, const Eigen::MatrixXd& information) {
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(information, Eigen::EigenvaluesOnly);
  const double largest = eig.eigenvalues().maxCoeff();
  const double smallest = eig.eigenvalues().minCoeff();
  if (!(largest > 0.0) || smallest <= 1e-10 * largest) {
    std::string names;
    for (const auto& n : d.names) names += (names.empty() ? "" : ", ") + n;
    throw NumericalError("rank-deficient design: no contrast on the event risk sets for {" + names + "}");
  }
}

}  // namespace detail

/// Maximum partial likelihood by Newton-Raphson with step halving.
inline CoxFit fit_cox(std::shared_ptr<const CoxDesign> design, const CoxOptions& options = {},
                      std::optional<Eigen::VectorXd> start = std::nullopt) {
  const CoxDesign& d = *design;
  const Ties ties = d.spec.ties;
  if (d.events() == 0)
    throw DataError(d.spec.cause ? fmt::format("no events of cause {}", *d.spec.cause) : "no events");
  if (d.spec.terms.empty()) throw ConfigError("model needs at least one term");
  const Eigen::Index p = d.cols();

  Eigen::VectorXd beta = start.value_or(Eigen::VectorXd::Zero(p));
  const CoxDerivatives null = cox_derivatives(d, Eigen::VectorXd::Zero(p), ties);
  detail::check_rank(d, null.information);
  CoxDerivatives current = start ? cox_derivatives(d, beta, ties) : null;

  bool converged = current.score.lpNorm<Eigen::Infinity>() < options.score_tolerance;
  int iterations = 0;
  while (!converged && iterations < options.max_iterations) {
    ++iterations;
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(current.information);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) break;
    Eigen::VectorXd step = ldlt.solve(current.score);
    Eigen::VectorXd candidate = beta + step;
    CoxDerivatives next = cox_derivatives(d, candidate, ties);
    for (int h = 0; h < options.max_halvings && !(next.loglik >= current.loglik); ++h) {
      step /= 2.0;
      candidate = beta + step;
      next = cox_derivatives(d, candidate, ties);
    }
    if (!(next.loglik >= current.loglik - 1e-12 * std::abs(current.loglik))) break;
    const double change = std::abs(next.loglik - current.loglik) / (std::abs(current.loglik) + 1e-10);
    beta = candidate;
    current = std::move(next);
    converged = change < options.loglik_tolerance ||
                current.score.lpNorm<Eigen::Infinity>() < options.score_tolerance;
  }

  for (Eigen::Index j = 0; j < p; ++j)
    if (std::abs(beta(j)) > options.divergence_bound && current.score(j) * beta(j) >= 0.0)
      throw MonotoneLikelihood(d.names[static_cast<std::size_t>(j)], beta(j) > 0 ? 1 : -1);
  if (!converged)
    throw NumericalError(fmt::format("Cox fit did not converge in {} iterations", options.max_iterations));

  const Eigen::LDLT<Eigen::MatrixXd> ldlt(current.information);
  Eigen::MatrixXd covariance = ldlt.solve(Eigen::MatrixXd::Identity(p, p));
  covariance = (0.5 * (covariance + covariance.transpose())).eval();

  CoxFit fit;
  fit.names = d.names;
  fit.beta = beta;
  fit.covariance = std::move(covariance);
  fit.score = current.score;
  fit.loglik = current.loglik;
  fit.loglik_null = null.loglik;
  fit.iterations = iterations;
  fit.baseline_jumps = detail::breslow_jumps(d, beta);
  fit.baseline = detail::cumulate(d, fit.baseline_jumps);
  fit.strata_labels = d.strata_labels;
  fit.spec = d.spec;
  fit.n_events = d.events();
  fit.n_subjects = d.subject_ids.size();
  fit.n_rows = static_cast<std::size_t>(d.rows());
  fit.design = std::move(design);
  return fit;
}

inline CoxFit fit_cox(const CohortTable& cohort, const ModelSpec& spec, const CoxOptions& options = {}) {
  return fit_cox(build_design(cohort, spec), options);
}

/// Covariate-free model: no coefficients, baseline equal to the Nelson-Aalen
/// estimate of the cause-specific hazard in each stratum. Terms of `spec` are ignored.
inline CoxFit null_model(const CohortTable& cohort, ModelSpec spec) {
  spec.terms.clear();
  auto design = build_design(cohort, spec);
  const CoxDesign& d = *design;
  if (d.events() == 0)
    throw DataError(d.spec.cause ? fmt::format("no events of cause {}", *d.spec.cause) : "no events");
  const Eigen::VectorXd beta(0);
  CoxFit fit;
  fit.beta = beta;
  fit.covariance.resize(0, 0);
  fit.score = beta;
  fit.loglik = fit.loglik_null = cox_derivatives(d, beta, d.spec.ties).loglik;
  fit.baseline_jumps = detail::breslow_jumps(d, beta);
  fit.baseline = detail::cumulate(d, fit.baseline_jumps);
  fit.strata_labels = d.strata_labels;
  fit.spec = d.spec;
  fit.n_events = d.events();
  fit.n_subjects = d.subject_ids.size();
  fit.n_rows = static_cast<std::size_t>(d.rows());
  fit.design = std::move(design);
  return fit;
}

}  // namespace survkit

#pragma once

// Post-fit checks for Cox models: Schoenfeld and martingale residuals, the
// score test of proportional hazards against a transform of time, and Wald /
// likelihood-ratio tests.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/chi_squared.hpp>

#include "survkit/cox.hpp"

namespace survkit {

inline double chi_squared_pvalue(double statistic, double df) {
  if (!(statistic > 0.0)) return 1.0;
  return boost::math::cdf(boost::math::complement(boost::math::chi_squared(df), statistic));
}

struct SchoenfeldResiduals {
  std::vector<std::string> names;
  std::vector<double> times;     // one entry per event
  std::vector<int> strata;
  Eigen::MatrixXd residuals;     // events x coefficients: Z_event - risk-set weighted mean
  Eigen::MatrixXd scaled;        // n_events * covariance * residual; add beta to estimate beta(t)
};

namespace detail {

/// Per-event rows with their risk-set mean and covariance (Breslow weights).
struct EventMoments {
  std::vector<double> times;
  std::vector<int> strata;
  std::vector<std::size_t> rows;
  Eigen::MatrixXd residuals;
  std::vector<Eigen::MatrixXd> variances;
};

inline EventMoments event_moments(const CoxFit& fit) {
  const CoxDesign& d = *fit.design;
  const Eigen::Index p = d.cols();
  EventMoments out;
  std::vector<Eigen::VectorXd> res;
  const Eigen::MatrixXd xc = d.x.rowwise() - d.center.transpose();
  sweep(d, fit.beta, true, [&](const RiskSet& rs) {
    const Eigen::VectorXd mean = rs.s1 / rs.s0;
    const Eigen::MatrixXd var = rs.s2 / rs.s0 - mean * mean.transpose();
    for (auto r : rs.deaths) {
      out.times.push_back(rs.time);
      out.strata.push_back(rs.stratum);
      out.rows.push_back(r);
      res.push_back(xc.row(static_cast<Eigen::Index>(r)).transpose() - mean);
      out.variances.push_back(var);
    }
  });
  // sweep runs backwards in time within each stratum; report in time order
  std::vector<std::size_t> order(out.times.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
    if (out.times[a] != out.times[b]) return out.times[a] < out.times[b];
    if (out.strata[a] != out.strata[b]) return out.strata[a] < out.strata[b];
    return out.rows[a] < out.rows[b];
  });
  EventMoments sorted;
  sorted.residuals.resize(static_cast<Eigen::Index>(order.size()), p);
  for (std::size_t k = 0; k < order.size(); ++k) {
    sorted.times.push_back(out.times[order[k]]);
    sorted.strata.push_back(out.strata[order[k]]);
    sorted.rows.push_back(out.rows[order[k]]);
    sorted.residuals.row(static_cast<Eigen::Index>(k)) = res[order[k]].transpose();
    sorted.variances.push_back(out.variances[order[k]]);
  }
  return sorted;
}

}  // namespace detail

inline SchoenfeldResiduals schoenfeld_residuals(const CoxFit& fit) {
  auto m = detail::event_moments(fit);
  SchoenfeldResiduals out;
  out.names = fit.names;
  out.times = std::move(m.times);
  out.strata = std::move(m.strata);
  out.residuals = std::move(m.residuals);
  out.scaled = static_cast<double>(fit.n_events) * out.residuals * fit.covariance;
  return out;
}

enum class TimeTransform { identity, rank, km };

inline std::string to_string(TimeTransform t) {
  switch (t) {
    case TimeTransform::identity: return "identity";
    case TimeTransform::rank: return "rank";
    case TimeTransform::km: return "km";
  }
  return "km";
}

struct PhTest {
  std::vector<std::string> names;
  std::vector<double> chisq;  // one degree of freedom each
  std::vector<double> p;
  double global_chisq = 0.0;
  int global_df = 0;
  double global_p = 1.0;
  TimeTransform transform = TimeTransform::km;
};

namespace detail {

/// 1 - KM(t-) of the fitted data, pooled over strata, at each event time.
inline std::vector<double> km_transform(const CoxDesign& d, const std::vector<double>& times) {
  std::vector<double> starts = d.tstart, stops = d.tstop, event_times;
  for (std::size_t i = 0; i < d.event.size(); ++i)
    if (d.event[i]) event_times.push_back(d.tstop[i]);
  std::sort(starts.begin(), starts.end());
  std::sort(stops.begin(), stops.end());
  std::sort(event_times.begin(), event_times.end());
  std::map<double, double> before;  // S(t-) at each distinct event time
  double surv = 1.0;
  for (std::size_t i = 0; i < event_times.size();) {
    const double t = event_times[i];
    double deaths = 0;
    for (; i < event_times.size() && event_times[i] == t; ++i) deaths += 1.0;
    const double y = static_cast<double>((std::lower_bound(starts.begin(), starts.end(), t) - starts.begin()) -
                                         (std::lower_bound(stops.begin(), stops.end(), t) - stops.begin()));
    before[t] = surv;
    surv *= 1.0 - deaths / y;
  }
  std::vector<double> out;
  for (double t : times) out.push_back(1.0 - before.at(t));
  return out;
}

inline std::vector<double> average_ranks(const std::vector<double>& times) {
  std::vector<std::size_t> order(times.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return times[a] < times[b]; });
  std::vector<double> ranks(times.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && times[order[j]] == times[order[i]]) ++j;
    const double r = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = r;
    i = j;
  }
  return ranks;
}

}  // namespace detail

/// Score test for adding Z * g(t) to the model, evaluated at the fitted beta:
/// U = sum_k g_k r_k with r_k the Schoenfeld residuals, variance
/// I_gg - I_gb I_bb^-1 I_bg built from the risk-set covariances. Per-covariate
/// statistics add only that covariate's interaction.
inline PhTest ph_test(const CoxFit& fit, TimeTransform transform = TimeTransform::km) {
  if (fit.n_events < 3) throw DataError("proportional hazards test needs at least 3 events");
  const auto m = detail::event_moments(fit);
  const Eigen::Index p = static_cast<Eigen::Index>(fit.names.size());
  std::vector<double> g;
  switch (transform) {
    case TimeTransform::identity: g = m.times; break;
    case TimeTransform::rank: g = detail::average_ranks(m.times); break;
    case TimeTransform::km: g = detail::km_transform(*fit.design, m.times); break;
  }
  const double mean = std::accumulate(g.begin(), g.end(), 0.0) / static_cast<double>(g.size());
  for (double& v : g) v -= mean;

  Eigen::VectorXd u = Eigen::VectorXd::Zero(p);
  Eigen::MatrixXd igg = Eigen::MatrixXd::Zero(p, p), igb = Eigen::MatrixXd::Zero(p, p),
                  ibb = Eigen::MatrixXd::Zero(p, p);
  for (std::size_t k = 0; k < g.size(); ++k) {
    const auto& v = m.variances[k];
    u += g[k] * m.residuals.row(static_cast<Eigen::Index>(k)).transpose();
    igg += g[k] * g[k] * v;
    igb += g[k] * v;
    ibb += v;
  }
  const Eigen::MatrixXd ibb_inv = ibb.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
  const Eigen::MatrixXd var = igg - igb * ibb_inv * igb.transpose();

  PhTest out;
  out.names = fit.names;
  out.transform = transform;
  for (Eigen::Index j = 0; j < p; ++j) {
    const double stat = var(j, j) > 0 ? u(j) * u(j) / var(j, j) : 0.0;
    out.chisq.push_back(stat);
    out.p.push_back(chi_squared_pvalue(stat, 1.0));
  }
  out.global_chisq = u.dot(var.ldlt().solve(u));
  out.global_df = static_cast<int>(p);
  out.global_p = chi_squared_pvalue(out.global_chisq, static_cast<double>(p));
  return out;
}

/// Martingale residual per subject (ordered like the fit's subject ids):
/// observed events minus sum over rows of exp(x'beta) * (L0(tstop) - L0(tstart)).
inline std::vector<double> martingale_residuals(const CoxFit& fit) {
  const CoxDesign& d = *fit.design;
  std::vector<double> out(d.subject_ids.size(), 0.0);
  const Eigen::VectorXd eta = d.x * fit.beta;
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    const auto r = static_cast<std::size_t>(i);
    const auto& base = fit.baseline[static_cast<std::size_t>(d.stratum[r])];
    const double expected = std::exp(eta(i)) * (base(d.tstop[r]) - base(d.tstart[r]));
    out[d.subject[r]] += (d.event[r] ? 1.0 : 0.0) - expected;
  }
  return out;
}

struct WaldTerm {
  std::string name;
  double chisq;
  double p;
};

struct ModelTests {
  std::vector<WaldTerm> wald;
  double wald_chisq = 0.0;
  int wald_df = 0;
  double wald_p = 1.0;
  double lr_chisq = 0.0;  // against `nested`, or the null model when none given
  int lr_df = 0;
  double lr_p = 1.0;
};

/// Wald statistics per coefficient and overall, plus a likelihood-ratio test
/// against a nested model (the beta = 0 model when `nested` is empty).
inline ModelTests model_tests(const CoxFit& fit, const CoxFit* nested = nullptr) {
  ModelTests out;
  const Eigen::Index p = fit.beta.size();
  for (Eigen::Index j = 0; j < p; ++j) {
    const double z = fit.beta(j) / fit.se(static_cast<std::size_t>(j));
    out.wald.push_back({fit.names[static_cast<std::size_t>(j)], z * z, chi_squared_pvalue(z * z, 1.0)});
  }
  out.wald_chisq = fit.beta.dot(fit.covariance.ldlt().solve(fit.beta));
  out.wald_df = static_cast<int>(p);
  out.wald_p = chi_squared_pvalue(out.wald_chisq, static_cast<double>(p));
  if (!nested) {
    out.lr_chisq = 2.0 * (fit.loglik - fit.loglik_null);
    out.lr_df = static_cast<int>(p);
  } else {
    const bool same_data = nested->n_events == fit.n_events && nested->n_subjects == fit.n_subjects &&
                           nested->spec.cause == fit.spec.cause && nested->spec.strata == fit.spec.strata;
    const bool subset = std::all_of(nested->names.begin(), nested->names.end(), [&](const auto& n) {
      return std::find(fit.names.begin(), fit.names.end(), n) != fit.names.end();
    });
    if (!same_data || !subset || nested->names.size() >= fit.names.size())
      throw ConfigError("likelihood-ratio test needs a nested model fitted to the same data");
    out.lr_chisq = 2.0 * (fit.loglik - nested->loglik);
    out.lr_df = static_cast<int>(fit.names.size() - nested->names.size());
  }
  out.lr_p = chi_squared_pvalue(out.lr_chisq, static_cast<double>(out.lr_df));
  return out;
}

}  // namespace survkit

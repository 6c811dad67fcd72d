#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "survkit/survkit.hpp"

namespace testing_support {

using survkit::CohortTable;
using survkit::Episode;

inline Episode ep(std::string id, double a, double b, int status, std::vector<double> z = {},
                  std::optional<std::string> stratum = std::nullopt) {
  return Episode{std::move(id), a, b, status, std::move(stratum), std::move(z)};
}

inline std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::path(SURVKIT_SCRATCH_DIR) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Log partial likelihood straight from the definition: for each event time
/// and stratum, compare the events against the episodes with tstart < t <= tstop.
/// `x` holds one covariate row per episode (episode order of the cohort).
inline double brute_loglik(const CohortTable& cohort, const Eigen::MatrixXd& x, const Eigen::VectorXd& beta,
                           bool efron, std::optional<int> cause = 1) {
  const auto& eps = cohort.episodes();
  const auto is_event = [&](const Episode& e) { return e.status != 0 && (!cause || e.status == *cause); };
  std::set<std::pair<std::string, double>> keys;
  for (const auto& e : eps)
    if (is_event(e)) keys.insert({e.stratum.value_or(""), e.tstop});
  double ll = 0.0;
  for (const auto& [stratum, t] : keys) {
    double risk = 0.0, tied = 0.0, linear = 0.0;
    int d = 0;
    for (std::size_t i = 0; i < eps.size(); ++i) {
      const auto& e = eps[i];
      if (e.stratum.value_or("") != stratum || !(e.tstart < t && t <= e.tstop)) continue;
      const double eta = x.row(static_cast<Eigen::Index>(i)).dot(beta);
      risk += std::exp(eta);
      if (e.tstop == t && is_event(e)) {
        ++d;
        tied += std::exp(eta);
        linear += eta;
      }
    }
    ll += linear;
    for (int l = 0; l < d; ++l) ll -= std::log(risk - (efron ? static_cast<double>(l) / d * tied : 0.0));
  }
  return ll;
}

/// Covariate matrix of the named columns, one row per episode.
inline Eigen::MatrixXd columns(const CohortTable& cohort, const std::vector<std::string>& names) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(cohort.size()), static_cast<Eigen::Index>(names.size()));
  for (std::size_t j = 0; j < names.size(); ++j) {
    const auto c = cohort.covariate_index(names[j]);
    for (std::size_t i = 0; i < cohort.size(); ++i)
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = cohort.episodes()[i].covariates[c];
  }
  return x;
}

/// Random right-censored, delayed-entry cohort with integer-rounded times (so ties occur).
inline CohortTable random_cohort(std::uint64_t seed, std::size_t n, std::size_t p, bool ties = true,
                                 bool delayed_entry = true, int causes = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<Episode> eps;
  std::vector<std::string> names;
  for (std::size_t j = 0; j < p; ++j) names.push_back("x" + std::to_string(j + 1));
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> cov;
    for (std::size_t j = 0; j < p; ++j) cov.push_back(j == 0 ? (u(rng) < 0.5 ? 1.0 : 0.0) : z(rng));
    double entry = delayed_entry ? std::floor(3.0 * u(rng)) : 0.0;
    double t = -std::log(u(rng)) * 5.0 * std::exp(-0.5 * cov[0]);
    double c = -std::log(u(rng)) * 8.0;
    if (ties) {
      t = std::ceil(t);
      c = std::ceil(c);
    }
    const double stop = entry + std::max(std::min(t, c), ties ? 1.0 : 1e-3);
    const int status = t <= c ? 1 + static_cast<int>(u(rng) * causes) : 0;
    eps.push_back(ep("id" + std::to_string(i), entry, stop, status, cov));
  }
  return CohortTable(std::move(eps), names);
}

}  // namespace testing_support

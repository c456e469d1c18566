#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "recdf/errors.hpp"
#include "recdf/rng.hpp"

namespace recdf {

enum class PopulationModel { Xi1, Xi2, Xi3, Xi4, External };

inline std::string to_string(PopulationModel m) {
  switch (m) {
    case PopulationModel::Xi1: return "xi1";
    case PopulationModel::Xi2: return "xi2";
    case PopulationModel::Xi3: return "xi3";
    case PopulationModel::Xi4: return "xi4";
    case PopulationModel::External: return "external";
  }
  return "?";
}

inline PopulationModel parse_population_model(const std::string& s) {
  if (s == "xi1") return PopulationModel::Xi1;
  if (s == "xi2") return PopulationModel::Xi2;
  if (s == "xi3") return PopulationModel::Xi3;
  if (s == "xi4") return PopulationModel::Xi4;
  throw ConfigError("unknown population model '" + s +
                    "' (expected xi1|xi2|xi3|xi4)");
}

// The complete simulation universe: response vector plus covariate matrix.
struct FinitePopulation {
  Eigen::VectorXd y;
  Eigen::MatrixXd x;
  PopulationModel model_id = PopulationModel::External;
  std::uint64_t seed = 0;
  // Xi4 takes ln|X1|; magnitudes below 1e-12 are clamped before the log and
  // counted here so reports can flag it.
  std::int64_t log_clamp_count = 0;

  Eigen::Index size() const { return y.size(); }
  Eigen::Index num_covariates() const { return x.cols(); }

  void validate() const {
    if (y.size() == 0) throw ValidationError("population is empty");
    if (y.size() != x.rows()) {
      throw ValidationError("population response/covariate row mismatch");
    }
  }
};

namespace detail {

inline double xi4_log_abs(double v, std::int64_t& clamp_count) {
  double a = std::fabs(v);
  if (a < 1e-12) {
    a = 1e-12;
    ++clamp_count;
  }
  return std::log(a);
}

}  // namespace detail

// Draws n i.i.d. rows from one of the four generating models. Each covariate
// column and the error column use their own substream of `seed`, so any
// column can be regenerated independently.
inline FinitePopulation generate_population(PopulationModel model,
                                            Eigen::Index n,
                                            std::uint64_t seed) {
  if (n < 1) throw ArgumentError("population size must be >= 1");
  const int p = (model == PopulationModel::Xi4) ? 6 : 4;
  FinitePopulation pop;
  pop.model_id = model;
  pop.seed = seed;
  pop.x.resize(n, p);
  pop.y.resize(n);

  for (int k = 0; k < p; ++k) {
    RngStream col(seed, "pop.col", static_cast<std::uint64_t>(k));
    switch (model) {
      case PopulationModel::Xi1:
        for (Eigen::Index i = 0; i < n; ++i) {
          pop.x(i, k) = col.normal(k < 2 ? 2.0 : 4.0, 1.0);
        }
        break;
      case PopulationModel::Xi2:
        for (Eigen::Index i = 0; i < n; ++i) {
          pop.x(i, k) = (k < 2) ? col.uniform(0.0, 4.0) : col.uniform(4.0, 8.0);
        }
        break;
      case PopulationModel::Xi3:
        for (Eigen::Index i = 0; i < n; ++i) pop.x(i, k) = col.uniform(-1.0, 1.0);
        break;
      case PopulationModel::Xi4:
        for (Eigen::Index i = 0; i < n; ++i) pop.x(i, k) = col.normal(0.0, 1.0);
        break;
      case PopulationModel::External:
        throw ConfigError("cannot generate an external population");
    }
  }

  RngStream eps(seed, "pop.eps");
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& X = pop.x;
    double mean = 0.0;
    double sigma = 1.0;
    switch (model) {
      case PopulationModel::Xi1:
        mean = 4 * X(i, 0) + 4 * X(i, 1) + 2 * X(i, 2) + 2 * X(i, 3);
        sigma = 3.0;
        break;
      case PopulationModel::Xi2: {
        const double s01 = X(i, 0) + X(i, 1);
        const double s23 = X(i, 2) + X(i, 3);
        mean = 4 * X(i, 0) * X(i, 0) + 4 * X(i, 1) * X(i, 1) +
               2 * X(i, 2) * X(i, 2) + 2 * X(i, 3) * X(i, 3) + s01 * s01 +
               s23 * s23;
        sigma = 50.0;
        break;
      }
      case PopulationModel::Xi3:
        mean = -std::sin(X(i, 0)) + X(i, 1) * X(i, 1) + X(i, 2) -
               std::exp(-X(i, 3) * X(i, 3));
        sigma = std::sqrt(0.5);
        break;
      case PopulationModel::Xi4:
        mean = X(i, 0) + 0.707 * X(i, 1) * X(i, 1) + 2.0 * (X(i, 2) > 0) +
               0.873 * detail::xi4_log_abs(X(i, 0), pop.log_clamp_count) *
                   std::fabs(X(i, 2)) +
               0.894 * X(i, 1) * X(i, 3) + 2.0 * (X(i, 4) > 0) +
               0.46 * std::exp(X(i, 5));
        sigma = 1.0;
        break;
      case PopulationModel::External:
        break;
    }
    pop.y(i) = eps.normal(mean, sigma);
  }
  return pop;
}

// Proportion of population responses at or below t.
inline double finite_cdf(const FinitePopulation& pop, double t) {
  std::int64_t count = 0;
  for (Eigen::Index i = 0; i < pop.y.size(); ++i) count += (pop.y(i) <= t);
  return static_cast<double>(count) / static_cast<double>(pop.y.size());
}

// Smallest value v in `sorted` with (#{x <= v} / n) >= alpha.
inline double quantile_of_sorted(const std::vector<double>& sorted,
                                 double alpha) {
  if (sorted.empty()) throw ArgumentError("quantile of empty vector");
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw ArgumentError("quantile level must lie in (0,1]");
  }
  const auto n = static_cast<double>(sorted.size());
  auto k = static_cast<std::size_t>(std::ceil(alpha * n));
  if (k < 1) k = 1;
  if (k > sorted.size()) k = sorted.size();
  return sorted[k - 1];
}

inline double finite_quantile(const FinitePopulation& pop, double alpha) {
  std::vector<double> sorted(pop.y.data(), pop.y.data() + pop.y.size());
  std::sort(sorted.begin(), sorted.end());
  return quantile_of_sorted(sorted, alpha);
}

}  // namespace recdf

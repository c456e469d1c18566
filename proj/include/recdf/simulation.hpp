#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "recdf/errors.hpp"
#include "recdf/estimators.hpp"
#include "recdf/parallel.hpp"
#include "recdf/population.hpp"
#include "recdf/regression.hpp"
#include "recdf/rng.hpp"
#include "recdf/sampling.hpp"
#include "recdf/variance.hpp"

namespace recdf {

// One Monte Carlo study: a single fixed population per model, fresh A/B
// sample pairs per replicate, all requested estimators evaluated at the
// population quantiles of the configured percentiles.
struct SimConfig {
  PopulationModel model_id = PopulationModel::Xi1;
  std::int64_t n_pop = 10000;
  std::int64_t n_a = 500;
  std::vector<std::int64_t> n_b_multipliers = {1, 10, 20};
  std::vector<Mechanism> mechanisms = {Mechanism::MAR, Mechanism::MNAR};
  std::vector<double> percentiles = {.01, .10, .25, .50, .75, .90, .99};
  std::int64_t n_sim = 200;
  std::vector<EstimatorKind> estimators = {EstimatorKind::HT,
                                           EstimatorKind::Naive,
                                           EstimatorKind::PlugIn,
                                           EstimatorKind::Residual};
  std::vector<VarianceMethod> variance_methods;  // residual-estimator targets
  std::int64_t bootstrap_l = 750;
  ReplicateWeightMethod weight_method = ReplicateWeightMethod::RaoWu;
  double gamma = 0.90;
  double upper_frac = 0.85;
  VarianceFunction nu = VarianceFunction::constant();
  std::uint64_t seed = 20240801;
  unsigned threads = 0;  // 0 = hardware concurrency
  double max_failure_fraction = 0.05;
  // model_id == External only: universe read from CSV instead of generated
  std::string population_csv;
  std::string population_response = "y";

  void validate() const {
    if (n_pop < 1) throw ConfigError("population size must be >= 1");
    if (n_a < 2 || n_a > n_pop) {
      throw ConfigError("probability sample size must satisfy 2 <= n_a <= N");
    }
    if (n_sim < 1) throw ConfigError("replicate count must be >= 1");
    if (n_b_multipliers.empty()) throw ConfigError("no sample-B multipliers");
    for (auto m : n_b_multipliers) {
      if (m < 1) throw ConfigError("sample-B multipliers must be >= 1");
      if (m * n_a > n_pop) {
        throw ConfigError("n_b = " + std::to_string(m * n_a) +
                          " exceeds population size");
      }
    }
    if (mechanisms.empty()) throw ConfigError("no mechanisms configured");
    if (percentiles.empty()) throw ConfigError("no percentiles configured");
    for (double a : percentiles) {
      if (!(a > 0.0 && a < 1.0)) {
        throw ConfigError("percentiles must lie strictly in (0,1)");
      }
    }
    if (estimators.empty()) throw ConfigError("no estimators configured");
    if (!(upper_frac > 0.0 && upper_frac < 1.0)) {
      throw ConfigError("upper stratum fraction must lie in (0,1)");
    }
    if (!(gamma > 0.0 && gamma < 1.0)) {
      throw ConfigError("confidence level must lie in (0,1)");
    }
    if (bootstrap_l < 2) throw ConfigError("bootstrap replicates must be >= 2");
    for (auto m : variance_methods) {
      if (m == VarianceMethod::AsympGeneral) {
        throw ConfigError(
            "simulation variance study supports asymp_srs and bootstrap");
      }
    }
    if (!variance_methods.empty() &&
        std::find(estimators.begin(), estimators.end(),
                  EstimatorKind::Residual) == estimators.end()) {
      throw ConfigError(
          "variance study targets the residual estimator; add it to the "
          "estimator set");
    }
  }

  // Laptop-scale defaults: quick, MAR+MNAR, no variance study.
  static SimConfig desk_scale(PopulationModel model) {
    SimConfig c;
    c.model_id = model;
    c.n_pop = 10000;
    c.n_a = 500;
    c.n_b_multipliers = {1, 10};
    c.n_sim = 200;
    return c;
  }

  // Full study-scale defaults.
  static SimConfig paper_scale(PopulationModel model) {
    SimConfig c;
    c.model_id = model;
    c.n_pop = 100000;
    c.n_a = 1000;
    c.n_b_multipliers = {1, 10, 20};
    c.n_sim = 1500;
    return c;
  }
};

// sqrt(MSE ratio) against the design-weighted reference estimator.
inline double rmser(double mse_est, double mse_ht) {
  if (mse_est < 0) throw ArgumentError("MSE must be nonnegative");
  if (!(mse_ht > 0)) {
    throw UndefinedRatioError("reference MSE must be positive");
  }
  return std::sqrt(mse_est / mse_ht);
}

struct CoverageStats {
  double coverage_pct = 0.0;
  double avg_length = 0.0;
};

inline CoverageStats coverage_stats(
    const std::vector<std::pair<double, double>>& intervals, double truth) {
  if (intervals.empty()) throw ArgumentError("no intervals");
  std::int64_t hit = 0;
  double len = 0.0;
  for (const auto& [lo, hi] : intervals) {
    hit += (lo <= truth && truth <= hi);
    len += hi - lo;
  }
  const auto n = static_cast<double>(intervals.size());
  return {100.0 * static_cast<double>(hit) / n, len / n};
}

inline double relative_bias_pct(double mean_vhat, double v_mc) {
  if (!(v_mc > 0)) throw UndefinedRatioError("Monte Carlo variance must be positive");
  return 100.0 * (mean_vhat - v_mc) / v_mc;
}

// Fixed-population design expectation of the naive estimator's bias at t:
// (1/N) sum_u (Pr(u in B)/f_B - 1) 1(y_u <= t). The per-unit indicator is the
// realized value of the error-distribution term, so this matches the Monte
// Carlo bias of the naive eCDF exactly up to sampling noise.
inline double naive_bias_oracle(const FinitePopulation& pop,
                                const std::vector<double>& pr_in_b,
                                std::int64_t n_b, double t) {
  const auto n = pop.size();
  if (static_cast<Eigen::Index>(pr_in_b.size()) != n) {
    throw ArgumentError("inclusion probability vector length mismatch");
  }
  const double f_b = static_cast<double>(n_b) / static_cast<double>(n);
  double acc = 0.0;
  for (Eigen::Index u = 0; u < n; ++u) {
    if (pop.y(u) <= t) {
      acc += pr_in_b[static_cast<std::size_t>(u)] / f_b - 1.0;
    }
  }
  return acc / static_cast<double>(n);
}

inline double naive_bias_oracle(const FinitePopulation& pop,
                                const StratifiedDesign& design,
                                std::int64_t n_b, double upper_frac, double t) {
  if (design.mechanism == Mechanism::External) {
    throw ArgumentError("bias oracle is unsupported for external mechanisms");
  }
  return naive_bias_oracle(
      pop, design.inclusion_probabilities(n_b, upper_frac), n_b, t);
}

// Aggregates per (mechanism, n_b, estimator, percentile).
struct EstimatorMetrics {
  double cdf_mean = 0.0;
  double cdf_mse = 0.0;
  double cdf_var_mc = 0.0;
  double cdf_rmser = std::numeric_limits<double>::quiet_NaN();
  double quantile_mean = std::numeric_limits<double>::quiet_NaN();
  double quantile_mse = std::numeric_limits<double>::quiet_NaN();
  double quantile_var_mc = std::numeric_limits<double>::quiet_NaN();
  double quantile_rmser = std::numeric_limits<double>::quiet_NaN();
  std::int64_t quantile_absent = 0;
  std::int64_t quantile_present = 0;
};

// Aggregates per (mechanism, n_b, variance method, percentile); the target is
// always the residual estimator.
struct VarianceMetrics {
  double cdf_coverage_pct = 0.0;
  double cdf_ci_length = 0.0;
  double cdf_var_mean = 0.0;
  double cdf_var_mc = 0.0;
  double cdf_rb_pct = std::numeric_limits<double>::quiet_NaN();
  double quantile_coverage_pct = std::numeric_limits<double>::quiet_NaN();
  double quantile_ci_length = std::numeric_limits<double>::quiet_NaN();
  double quantile_var_mean = std::numeric_limits<double>::quiet_NaN();
  double quantile_var_mc = std::numeric_limits<double>::quiet_NaN();
  double quantile_rb_pct = std::numeric_limits<double>::quiet_NaN();
  std::int64_t quantile_ci_count = 0;
};

struct ScenarioResult {
  Mechanism mechanism = Mechanism::MAR;
  std::int64_t n_b = 0;
  // indexed [estimator][percentile] following the config orderings
  std::vector<std::vector<EstimatorMetrics>> estimator_metrics;
  // indexed [variance method][percentile]
  std::vector<std::vector<VarianceMetrics>> variance_metrics;
  std::int64_t replicate_failures = 0;
};

struct SimReport {
  SimConfig config;
  std::vector<double> truth_quantile;  // T_N(alpha) per percentile
  std::vector<double> truth_cdf;       // F_N(T_N(alpha))
  std::int64_t log_clamp_count = 0;
  std::vector<ScenarioResult> scenarios;

  const ScenarioResult& scenario(Mechanism mech, std::int64_t n_b) const {
    for (const auto& s : scenarios) {
      if (s.mechanism == mech && s.n_b == n_b) return s;
    }
    throw ArgumentError("no such scenario in report");
  }

  const EstimatorMetrics& metrics(Mechanism mech, std::int64_t n_b,
                                  EstimatorKind est, double alpha) const {
    const auto& s = scenario(mech, n_b);
    return s.estimator_metrics[estimator_index(est)][percentile_index(alpha)];
  }

  const VarianceMetrics& var_metrics(Mechanism mech, std::int64_t n_b,
                                     VarianceMethod method,
                                     double alpha) const {
    const auto& s = scenario(mech, n_b);
    for (std::size_t m = 0; m < config.variance_methods.size(); ++m) {
      if (config.variance_methods[m] == method) {
        return s.variance_metrics[m][percentile_index(alpha)];
      }
    }
    throw ArgumentError("variance method not in report");
  }

  std::size_t estimator_index(EstimatorKind est) const {
    for (std::size_t e = 0; e < config.estimators.size(); ++e) {
      if (config.estimators[e] == est) return e;
    }
    throw ArgumentError("estimator not in report");
  }

  std::size_t percentile_index(double alpha) const {
    for (std::size_t k = 0; k < config.percentiles.size(); ++k) {
      if (std::fabs(config.percentiles[k] - alpha) < 1e-12) return k;
    }
    throw ArgumentError("percentile not in report");
  }
};

namespace detail {

// Raw per-replicate outcomes for one scenario, filled by index so the
// parallel schedule cannot affect the result.
struct ReplicateRow {
  std::uint8_t failed = 0;
  std::vector<double> cdf;       // [est*K + k]
  std::vector<double> quantile;  // NaN = absent
  std::vector<double> var_cdf;   // [method*K + k]
  std::vector<double> cdf_lo, cdf_hi;
  std::vector<double> var_q, q_lo, q_hi;  // NaN when quantile absent
};

inline double mean_of(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return v.empty() ? std::numeric_limits<double>::quiet_NaN()
                   : acc / static_cast<double>(v.size());
}

inline double mse_against(const std::vector<double>& v, double truth) {
  double acc = 0.0;
  for (double x : v) acc += (x - truth) * (x - truth);
  return v.empty() ? std::numeric_limits<double>::quiet_NaN()
                   : acc / static_cast<double>(v.size());
}

inline double sample_variance(const std::vector<double>& v) {
  if (v.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  const double m = mean_of(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return acc / (static_cast<double>(v.size()) - 1.0);
}

}  // namespace detail

inline SimReport run_monte_carlo(const SimConfig& config,
                                 const FinitePopulation& pop) {
  config.validate();
  if (pop.size() != config.n_pop) {
    throw ConfigError("population size does not match the configuration");
  }

  SimReport report;
  report.config = config;
  report.log_clamp_count = pop.log_clamp_count;
  const std::size_t num_alpha = config.percentiles.size();
  {
    std::vector<double> sorted(pop.y.data(), pop.y.data() + pop.y.size());
    std::sort(sorted.begin(), sorted.end());
    for (double alpha : config.percentiles) {
      const double t = quantile_of_sorted(sorted, alpha);
      report.truth_quantile.push_back(t);
      report.truth_cdf.push_back(finite_cdf(pop, t));
    }
  }

  const std::size_t num_est = config.estimators.size();
  const std::size_t num_method = config.variance_methods.size();
  const double z = z_two_sided(config.gamma);
  const double nan = std::numeric_limits<double>::quiet_NaN();

  for (Mechanism mech : config.mechanisms) {
    const StratifiedDesign design = make_stratified_design(pop, mech);
    const std::uint64_t mech_seed =
        derive_seed(config.seed, mech == Mechanism::MAR ? "scenario.mar"
                                                        : "scenario.mnar");
    for (std::int64_t mult : config.n_b_multipliers) {
      const std::int64_t n_b = mult * config.n_a;
      design.allocate(n_b, config.upper_frac);  // fail before the loop
      const std::uint64_t scen_seed =
          derive_seed(mech_seed, "nb", static_cast<std::uint64_t>(n_b));

      const auto n_sim = static_cast<std::size_t>(config.n_sim);
      std::vector<detail::ReplicateRow> rows(n_sim);
      parallel_for(n_sim, config.threads, [&](std::size_t r) {
        auto& row = rows[r];
        row.cdf.assign(num_est * num_alpha, nan);
        row.quantile.assign(num_est * num_alpha, nan);
        row.var_cdf.assign(num_method * num_alpha, nan);
        row.cdf_lo.assign(num_method * num_alpha, nan);
        row.cdf_hi.assign(num_method * num_alpha, nan);
        row.var_q.assign(num_method * num_alpha, nan);
        row.q_lo.assign(num_method * num_alpha, nan);
        row.q_hi.assign(num_method * num_alpha, nan);
        try {
          RngStream rng_a(scen_seed, "rep.a", r);
          RngStream rng_b1(scen_seed, "rep.b1", r);
          RngStream rng_b2(scen_seed, "rep.b2", r);
          const ProbabilitySample a = draw_srs_wor(pop, config.n_a, rng_a);
          const ConvenienceSample b = draw_convenience(
              pop, design, n_b, config.upper_frac, rng_b1, rng_b2);
          const FittedModel model = fit_linear(b.x, b.y, config.nu);
          const ResidualCdf rc(a, model);

          for (std::size_t e = 0; e < num_est; ++e) {
            const EstimatorKind est = config.estimators[e];
            CdfCurve curve;
            switch (est) {
              case EstimatorKind::HT: curve = curve_ht(a); break;
              case EstimatorKind::Naive: curve = curve_naive(b); break;
              case EstimatorKind::PlugIn: curve = curve_plugin(a, model); break;
              case EstimatorKind::Residual: break;  // handled lazily
            }
            for (std::size_t k = 0; k < num_alpha; ++k) {
              const double t = report.truth_quantile[k];
              const double alpha = config.percentiles[k];
              double value = 0.0;
              std::optional<double> quant;
              if (est == EstimatorKind::Residual) {
                value = rc.cdf(t);
                if (const auto inv = rc.quantile(alpha)) quant = inv->t;
              } else {
                value = (est == EstimatorKind::HT) ? cdf_ht(a, t)
                        : (est == EstimatorKind::Naive)
                            ? cdf_naive(b, t)
                            : cdf_plugin(a, model, t);
                quant = invert_quantile(curve, alpha);
              }
              row.cdf[e * num_alpha + k] = value;
              if (quant) row.quantile[e * num_alpha + k] = *quant;
            }
          }

          if (num_method > 0) {
            BootstrapResult boot;
            bool have_boot = false;
            for (std::size_t m = 0; m < num_method; ++m) {
              const VarianceMethod method = config.variance_methods[m];
              if (method == VarianceMethod::Bootstrap && !have_boot) {
                BootstrapOptions opt;
                opt.replicates = config.bootstrap_l;
                opt.gamma = config.gamma;
                opt.weight_method = config.weight_method;
                opt.nu = config.nu;
                boot = run_bootstrap_multi(a, b, report.truth_quantile,
                                           config.percentiles, opt,
                                           derive_seed(scen_seed, "rep.boot", r));
                have_boot = true;
              }
              for (std::size_t k = 0; k < num_alpha; ++k) {
                const double t = report.truth_quantile[k];
                const double alpha = config.percentiles[k];
                const std::size_t slot = m * num_alpha + k;
                if (method == VarianceMethod::AsympSRS) {
                  const double v = var_cdf_srs(a, model, t).total;
                  const double point = rc.cdf(t);
                  row.var_cdf[slot] = v;
                  row.cdf_lo[slot] = point - z * std::sqrt(v);
                  row.cdf_hi[slot] = point + z * std::sqrt(v);
                  if (const auto inv = rc.quantile(alpha)) {
                    const double se =
                        std::sqrt(var_cdf_srs(a, model, inv->t).total);
                    const auto w =
                        woodruff_interval(rc, alpha, se, config.gamma);
                    row.q_lo[slot] = w.lower;
                    row.q_hi[slot] = w.upper;
                    row.var_q[slot] =
                        var_quantile_woodruff(w.lower, w.upper, config.gamma);
                  }
                } else {
                  const auto& c = boot.cdf[k];
                  row.var_cdf[slot] = c.variance;
                  row.cdf_lo[slot] = c.point - z * std::sqrt(c.variance);
                  row.cdf_hi[slot] = c.point + z * std::sqrt(c.variance);
                  const auto& q = boot.quantile[k];
                  if (!q.absent) {
                    row.q_lo[slot] = q.interval.lower;
                    row.q_hi[slot] = q.interval.upper;
                    row.var_q[slot] = q.variance;
                  }
                }
              }
            }
          }
        } catch (const std::exception&) {
          row.failed = 1;
        }
      });

      ScenarioResult scen;
      scen.mechanism = mech;
      scen.n_b = n_b;
      for (const auto& row : rows) scen.replicate_failures += row.failed;
      if (static_cast<double>(scen.replicate_failures) >
          config.max_failure_fraction * static_cast<double>(n_sim)) {
        throw SimulationError(
            std::to_string(scen.replicate_failures) + " of " +
            std::to_string(n_sim) + " replicates failed (mechanism " +
            to_string(mech) + ", n_b " + std::to_string(n_b) + ")");
      }

      scen.estimator_metrics.assign(
          num_est, std::vector<EstimatorMetrics>(num_alpha));
      std::vector<std::vector<double>> cdf_mse_by_est(
          num_est, std::vector<double>(num_alpha, nan));
      std::vector<std::vector<double>> q_mse_by_est(
          num_est, std::vector<double>(num_alpha, nan));
      for (std::size_t e = 0; e < num_est; ++e) {
        for (std::size_t k = 0; k < num_alpha; ++k) {
          std::vector<double> cdf_vals, q_vals;
          std::int64_t absent = 0;
          for (const auto& row : rows) {
            if (row.failed) continue;
            cdf_vals.push_back(row.cdf[e * num_alpha + k]);
            const double q = row.quantile[e * num_alpha + k];
            if (std::isnan(q)) {
              ++absent;
            } else {
              q_vals.push_back(q);
            }
          }
          auto& cell = scen.estimator_metrics[e][k];
          cell.cdf_mean = detail::mean_of(cdf_vals);
          cell.cdf_mse = detail::mse_against(cdf_vals, report.truth_cdf[k]);
          cell.cdf_var_mc = detail::sample_variance(cdf_vals);
          cell.quantile_absent = absent;
          cell.quantile_present = static_cast<std::int64_t>(q_vals.size());
          if (!q_vals.empty()) {
            cell.quantile_mean = detail::mean_of(q_vals);
            cell.quantile_mse =
                detail::mse_against(q_vals, report.truth_quantile[k]);
            cell.quantile_var_mc = detail::sample_variance(q_vals);
          }
          cdf_mse_by_est[e][k] = cell.cdf_mse;
          q_mse_by_est[e][k] = cell.quantile_mse;
        }
      }
      // RMSER against the reference estimator when it is in the run
      for (std::size_t e_ht = 0; e_ht < num_est; ++e_ht) {
        if (config.estimators[e_ht] != EstimatorKind::HT) continue;
        for (std::size_t e = 0; e < num_est; ++e) {
          for (std::size_t k = 0; k < num_alpha; ++k) {
            auto& cell = scen.estimator_metrics[e][k];
            if (cdf_mse_by_est[e_ht][k] > 0) {
              cell.cdf_rmser =
                  std::sqrt(cell.cdf_mse / cdf_mse_by_est[e_ht][k]);
            }
            if (!std::isnan(cell.quantile_mse) &&
                q_mse_by_est[e_ht][k] > 0) {
              cell.quantile_rmser =
                  std::sqrt(cell.quantile_mse / q_mse_by_est[e_ht][k]);
            }
          }
        }
      }

      scen.variance_metrics.assign(
          num_method, std::vector<VarianceMetrics>(num_alpha));
      const std::size_t res_idx =
          num_method > 0 ? report.estimator_index(EstimatorKind::Residual)
                         : 0;
      for (std::size_t m = 0; m < num_method; ++m) {
        for (std::size_t k = 0; k < num_alpha; ++k) {
          std::vector<std::pair<double, double>> cdf_ci, q_ci;
          std::vector<double> vars_cdf, vars_q, points_cdf, points_q;
          for (const auto& row : rows) {
            if (row.failed) continue;
            const std::size_t slot = m * num_alpha + k;
            vars_cdf.push_back(row.var_cdf[slot]);
            cdf_ci.emplace_back(row.cdf_lo[slot], row.cdf_hi[slot]);
            points_cdf.push_back(row.cdf[res_idx * num_alpha + k]);
            if (!std::isnan(row.var_q[slot])) {
              vars_q.push_back(row.var_q[slot]);
              q_ci.emplace_back(row.q_lo[slot], row.q_hi[slot]);
            }
            const double q = row.quantile[res_idx * num_alpha + k];
            if (!std::isnan(q)) points_q.push_back(q);
          }
          auto& cell = scen.variance_metrics[m][k];
          const auto cs = coverage_stats(cdf_ci, report.truth_cdf[k]);
          cell.cdf_coverage_pct = cs.coverage_pct;
          cell.cdf_ci_length = cs.avg_length;
          cell.cdf_var_mean = detail::mean_of(vars_cdf);
          cell.cdf_var_mc = detail::sample_variance(points_cdf);
          if (cell.cdf_var_mc > 0) {
            cell.cdf_rb_pct =
                relative_bias_pct(cell.cdf_var_mean, cell.cdf_var_mc);
          }
          cell.quantile_ci_count = static_cast<std::int64_t>(q_ci.size());
          if (!q_ci.empty()) {
            const auto qs = coverage_stats(q_ci, report.truth_quantile[k]);
            cell.quantile_coverage_pct = qs.coverage_pct;
            cell.quantile_ci_length = qs.avg_length;
            cell.quantile_var_mean = detail::mean_of(vars_q);
            cell.quantile_var_mc = detail::sample_variance(points_q);
            if (cell.quantile_var_mc > 0) {
              cell.quantile_rb_pct = relative_bias_pct(cell.quantile_var_mean,
                                                       cell.quantile_var_mc);
            }
          }
        }
      }
      report.scenarios.push_back(std::move(scen));
    }
  }
  return report;
}

inline SimReport run_monte_carlo(const SimConfig& config) {
  if (config.model_id == PopulationModel::External) {
    throw ConfigError(
        "an external population must be loaded and passed in explicitly");
  }
  return run_monte_carlo(
      config, generate_population(config.model_id, config.n_pop,
                                  derive_seed(config.seed, "population")));
}

}  // namespace recdf

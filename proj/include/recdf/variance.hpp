#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "recdf/errors.hpp"
#include "recdf/estimators.hpp"
#include "recdf/parallel.hpp"
#include "recdf/rng.hpp"

namespace recdf {

enum class VarianceMethod { AsympGeneral, AsympSRS, Bootstrap };

inline std::string to_string(VarianceMethod m) {
  switch (m) {
    case VarianceMethod::AsympGeneral: return "asymp_general";
    case VarianceMethod::AsympSRS: return "asymp_srs";
    case VarianceMethod::Bootstrap: return "bootstrap";
  }
  return "?";
}

inline VarianceMethod parse_variance_method(const std::string& s) {
  if (s == "asymp_general") return VarianceMethod::AsympGeneral;
  if (s == "asymp_srs") return VarianceMethod::AsympSRS;
  if (s == "bootstrap") return VarianceMethod::Bootstrap;
  throw ConfigError("unknown variance method '" + s +
                    "' (expected asymp_general|asymp_srs|bootstrap)");
}

struct VarianceReport {
  double v1 = 0.0;
  double v2 = 0.0;
  double total = 0.0;
  VarianceMethod method = VarianceMethod::AsympSRS;
  std::int64_t replicates_used = 0;  // 0 for asymptotic methods
  std::vector<std::string> notes;
};

namespace detail {

// (1/N^2) sum_{h,i in A} (1/pi_hi)(pi_hi/(pi_h pi_i) - 1) g_h g_i
inline double v1_double_sum(const std::vector<double>& g,
                            const JointInclusion& joint, double pop_size) {
  const auto n = static_cast<Eigen::Index>(g.size());
  double acc = 0.0;
  for (Eigen::Index h = 0; h < n; ++h) {
    const double pi_h = joint.first_order(h);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double pi_hi = joint.joint(h, i);
      if (!(pi_hi > 0.0)) {
        throw ArgumentError("zero joint inclusion probability");
      }
      const double factor =
          (pi_hi / (pi_h * joint.first_order(i)) - 1.0) / pi_hi;
      acc += factor * g[static_cast<std::size_t>(h)] *
             g[static_cast<std::size_t>(i)];
    }
  }
  return acc / (pop_size * pop_size);
}

// (1/(n_B N^2)) sum_{h,i} (g_min - g_h g_i) / (pi_h pi_i); the eCDF is
// monotone in its threshold, so its value at min(R_h,R_i) is min(g_h,g_i)
// exactly, read from the same pool.
inline double v2_double_sum(const std::vector<double>& g,
                            const JointInclusion& joint, double pop_size,
                            double n_b) {
  const auto n = static_cast<Eigen::Index>(g.size());
  double acc = 0.0;
  for (Eigen::Index h = 0; h < n; ++h) {
    const double pi_h = joint.first_order(h);
    const double gh = g[static_cast<std::size_t>(h)];
    for (Eigen::Index i = 0; i < n; ++i) {
      const double gi = g[static_cast<std::size_t>(i)];
      acc += (std::min(gh, gi) - gh * gi) / (pi_h * joint.first_order(i));
    }
  }
  return acc / (n_b * pop_size * pop_size);
}

// ((1-f)/n) * sample variance of the g values (divisor n-1).
inline double srs_variance_from_g(const std::vector<double>& g,
                                  double sampling_fraction) {
  const auto n = static_cast<double>(g.size());
  if (g.size() < 2) throw ArgumentError("SRS variance needs at least 2 units");
  double mean = 0.0;
  for (double v : g) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : g) ss += (v - mean) * (v - mean);
  return (1.0 - sampling_fraction) / n * (ss / (n - 1.0));
}

inline std::vector<double> g_values_at(const ProbabilitySample& a,
                                       const FittedModel& model, double t) {
  std::vector<double> g(static_cast<std::size_t>(a.size()));
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    g[static_cast<std::size_t>(i)] =
        residual_ecdf(model, standardized_threshold(model, a.x.row(i), t));
  }
  return g;
}

}  // namespace detail

// Double-sum variance estimator (both components) for the residual CDF
// estimator at t. O(n_A^2); a note is attached above 20,000 units.
inline VarianceReport var_cdf_asymptotic(const ProbabilitySample& a,
                                         const FittedModel& model, double t,
                                         const JointInclusion& joint) {
  const std::vector<double> g = detail::g_values_at(a, model, t);
  VarianceReport r;
  r.method = VarianceMethod::AsympGeneral;
  r.v1 = detail::v1_double_sum(g, joint, a.pop_size);
  r.v2 = detail::v2_double_sum(
      g, joint, a.pop_size,
      static_cast<double>(model.residuals_sorted.size()));
  r.total = r.v1 + r.v2;
  if (a.size() > 20000) {
    r.notes.push_back("double-sum variance is O(n_A^2); n_A = " +
                      std::to_string(a.size()));
  }
  return r;
}

// SRS simplification: ((1-f_A)/n_A) times the sample variance of the
// residual-eCDF values over A. The second component is dropped by
// construction.
inline VarianceReport var_cdf_srs(const ProbabilitySample& a,
                                  const FittedModel& model, double t) {
  if (a.design != SampleDesign::SrsWor) {
    throw ArgumentError(
        "SRS variance requires an SRS-without-replacement design");
  }
  if (a.size() < 2) throw ArgumentError("SRS variance needs at least 2 units");
  const std::vector<double> g = detail::g_values_at(a, model, t);
  VarianceReport r;
  r.method = VarianceMethod::AsympSRS;
  r.v1 =
      detail::srs_variance_from_g(g, static_cast<double>(a.size()) / a.pop_size);
  r.v2 = 0.0;
  r.total = r.v1;
  return r;
}

// Quantile variance from a Woodruff interval: ((upper-lower)/(2 z))^2.
inline double var_quantile_woodruff(double lower, double upper, double gamma) {
  if (upper < lower) throw ArgumentError("interval bounds out of order");
  const double z = z_two_sided(gamma);
  const double half = (upper - lower) / (2.0 * z);
  return half * half;
}

enum class ReplicateWeightMethod { RaoWu, WithReplacement };

inline std::string to_string(ReplicateWeightMethod m) {
  return m == ReplicateWeightMethod::RaoWu ? "rao_wu" : "with_replacement";
}

inline ReplicateWeightMethod parse_weight_method(const std::string& s) {
  if (s == "rao_wu") return ReplicateWeightMethod::RaoWu;
  if (s == "with_replacement") return ReplicateWeightMethod::WithReplacement;
  throw ConfigError("unknown replicate weight method '" + s +
                    "' (expected rao_wu|with_replacement)");
}

struct BootstrapOptions {
  std::int64_t replicates = 750;
  double gamma = 0.90;
  ReplicateWeightMethod weight_method = ReplicateWeightMethod::RaoWu;
  double max_drop_fraction = 0.10;
  unsigned threads = 1;
  bool keep_replicates = false;  // retain per-replicate values for diagnostics
  VarianceFunction nu = VarianceFunction::constant();
};

struct BootstrapTarget {
  enum class Kind { CdfAt, QuantileAt };
  Kind kind = Kind::CdfAt;
  double value = 0.0;  // t for CdfAt, alpha for QuantileAt

  static BootstrapTarget cdf_at(double t) { return {Kind::CdfAt, t}; }
  static BootstrapTarget quantile_at(double alpha) {
    return {Kind::QuantileAt, alpha};
  }
};

struct BootstrapCdfOutcome {
  double t = 0.0;
  double point = 0.0;     // original estimate at t
  double variance = 0.0;  // mean squared replicate deviation
  std::int64_t replicates_used = 0;
  std::vector<double> replicate_values;
};

struct BootstrapQuantileOutcome {
  double alpha = 0.0;
  bool absent = false;           // quantile unreachable on the original curve
  double point = 0.0;            // original quantile
  double cdf_at_quantile = 0.0;  // original curve value at the quantile
  double variance = 0.0;         // from the Woodruff width
  WoodruffInterval interval;
  std::int64_t replicates_used = 0;
  std::vector<double> replicate_values;
};

struct BootstrapResult {
  std::vector<BootstrapCdfOutcome> cdf;
  std::vector<BootstrapQuantileOutcome> quantile;
  std::int64_t dropped = 0;  // replicates whose refit failed
  ReplicateWeightMethod weight_method = ReplicateWeightMethod::RaoWu;
};

// Paired bootstrap over one replicate set, evaluated at every requested
// target. Per replicate: with-replacement counts resample A's weights
// (Rao-Wu rescaled with n-1 draws by default), B rows are resampled with
// replacement at full size, and the model is refit.
//   CDF target t:    V = mean over replicates of (Fhat_l(t) - Fhat(t))^2.
//   Quantile target: the replicate curve is inverted at alpha; the bootstrap
//   SE of the curve value attained there feeds a Woodruff inversion of the
//   ORIGINAL curve, and the variance is the squared half-width. Replicate
//   quantiles themselves are never variance-pooled.
inline BootstrapResult run_bootstrap_multi(const ProbabilitySample& a,
                                           const ConvenienceSample& b,
                                           const std::vector<double>& cdf_ts,
                                           const std::vector<double>& alphas,
                                           const BootstrapOptions& options,
                                           std::uint64_t seed) {
  if (options.replicates < 2) {
    throw ArgumentError("bootstrap needs at least 2 replicates");
  }
  const auto n_a = static_cast<std::size_t>(a.size());
  const auto n_b = static_cast<std::size_t>(b.size());
  if (n_a < 2) throw ArgumentError("bootstrap needs at least 2 units in A");
  const FittedModel original_model = fit_linear(b.x, b.y, options.nu);
  const ResidualCdf original(a, original_model);

  BootstrapResult out;
  out.weight_method = options.weight_method;
  out.cdf.resize(cdf_ts.size());
  out.quantile.resize(alphas.size());
  for (std::size_t k = 0; k < cdf_ts.size(); ++k) {
    out.cdf[k].t = cdf_ts[k];
    out.cdf[k].point = original.cdf(cdf_ts[k]);
  }
  for (std::size_t k = 0; k < alphas.size(); ++k) {
    auto& q = out.quantile[k];
    q.alpha = alphas[k];
    const auto inv = original.quantile(alphas[k]);
    if (inv) {
      q.point = inv->t;
      q.cdf_at_quantile = inv->value;
    } else {
      q.absent = true;
    }
  }

  const auto L = static_cast<std::size_t>(options.replicates);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::vector<double>> cdf_vals(cdf_ts.size(),
                                            std::vector<double>(L, nan));
  std::vector<std::vector<double>> q_vals(alphas.size(),
                                          std::vector<double>(L, nan));
  const std::size_t draws =
      options.weight_method == ReplicateWeightMethod::RaoWu ? n_a - 1 : n_a;
  const double rescale =
      options.weight_method == ReplicateWeightMethod::RaoWu
          ? static_cast<double>(n_a) / static_cast<double>(n_a - 1)
          : 1.0;

  std::vector<std::uint8_t> failed(L, 0);
  parallel_for(L, options.threads, [&](std::size_t l) {
    RngStream rng_a(seed, "boot.a", l);
    RngStream rng_b(seed, "boot.b", l);
    std::vector<double> counts(n_a, 0.0);
    for (std::size_t k = 0; k < draws; ++k) {
      counts[static_cast<std::size_t>(rng_a.bounded(n_a))] += 1.0;
    }
    std::vector<double> weights(n_a);
    for (std::size_t i = 0; i < n_a; ++i) {
      weights[i] = a.weight[i] * counts[i] * rescale;
    }
    Eigen::MatrixXd xb(b.x.rows(), b.x.cols());
    Eigen::VectorXd yb(b.y.size());
    for (std::size_t j = 0; j < n_b; ++j) {
      const auto src = static_cast<Eigen::Index>(rng_b.bounded(n_b));
      xb.row(static_cast<Eigen::Index>(j)) = b.x.row(src);
      yb(static_cast<Eigen::Index>(j)) = b.y(src);
    }
    FittedModel refit;
    try {
      refit =
          fit_linear(xb, yb, original_model.nu, original_model.column_names);
    } catch (const EstimationError&) {
      failed[l] = 1;  // rank-deficient resample
      return;
    }
    ProbabilitySample rep = a;
    rep.weight = std::move(weights);
    rep.design = SampleDesign::ExternalWeights;  // replicate weights vary
    const ResidualCdf rc(rep, refit);
    for (std::size_t k = 0; k < cdf_ts.size(); ++k) {
      cdf_vals[k][l] = rc.cdf(cdf_ts[k]);
    }
    for (std::size_t k = 0; k < alphas.size(); ++k) {
      const auto inv = rc.invert(alphas[k]);
      if (inv) q_vals[k][l] = inv->value;
    }
  });

  for (std::size_t l = 0; l < L; ++l) out.dropped += failed[l];
  if (static_cast<double>(out.dropped) >
      options.max_drop_fraction * static_cast<double>(L)) {
    throw EstimationError("bootstrap dropped " + std::to_string(out.dropped) +
                          " of " + std::to_string(L) + " replicates");
  }

  auto mean_sq_dev = [](const std::vector<double>& vals, double center,
                        std::int64_t& used) {
    double acc = 0.0;
    used = 0;
    for (double v : vals) {
      if (std::isnan(v)) continue;
      acc += (v - center) * (v - center);
      ++used;
    }
    return used > 0 ? acc / static_cast<double>(used) : 0.0;
  };

  for (std::size_t k = 0; k < cdf_ts.size(); ++k) {
    auto& c = out.cdf[k];
    c.variance = mean_sq_dev(cdf_vals[k], c.point, c.replicates_used);
    if (options.keep_replicates) {
      for (double v : cdf_vals[k]) {
        if (!std::isnan(v)) c.replicate_values.push_back(v);
      }
    }
  }
  const double z = z_two_sided(options.gamma);
  for (std::size_t k = 0; k < alphas.size(); ++k) {
    auto& q = out.quantile[k];
    if (q.absent) continue;
    const double se = std::sqrt(
        mean_sq_dev(q_vals[k], q.cdf_at_quantile, q.replicates_used));
    q.interval = woodruff_interval(original, q.alpha, se, options.gamma);
    const double half = (q.interval.upper - q.interval.lower) / (2.0 * z);
    q.variance = half * half;
    if (options.keep_replicates) {
      for (double v : q_vals[k]) {
        if (!std::isnan(v)) q.replicate_values.push_back(v);
      }
    }
  }
  return out;
}

// Single-target form of the bootstrap, packaged as a VarianceReport.
inline VarianceReport bootstrap_variance(const ProbabilitySample& a,
                                         const ConvenienceSample& b,
                                         BootstrapTarget target,
                                         const BootstrapOptions& options,
                                         std::uint64_t seed) {
  VarianceReport r;
  r.method = VarianceMethod::Bootstrap;
  r.notes.push_back("replicate_weights=" + to_string(options.weight_method));
  if (target.kind == BootstrapTarget::Kind::CdfAt) {
    const auto res =
        run_bootstrap_multi(a, b, {target.value}, {}, options, seed);
    r.total = res.cdf[0].variance;
    r.replicates_used = res.cdf[0].replicates_used;
  } else {
    const auto res =
        run_bootstrap_multi(a, b, {}, {target.value}, options, seed);
    if (res.quantile[0].absent) {
      throw EstimationError(
          "quantile is absent on the original sample; no bootstrap target");
    }
    r.total = res.quantile[0].variance;
    r.replicates_used = res.quantile[0].replicates_used;
  }
  return r;
}

inline VarianceReport bootstrap_variance(const ProbabilitySample& a,
                                         const ConvenienceSample& b,
                                         BootstrapTarget target,
                                         std::int64_t replicates,
                                         std::uint64_t seed) {
  BootstrapOptions opt;
  opt.replicates = replicates;
  return bootstrap_variance(a, b, target, opt, seed);
}

}  // namespace recdf

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "recdf/errors.hpp"
#include "recdf/regression.hpp"
#include "recdf/sampling.hpp"

namespace recdf {

enum class EstimatorKind { HT, Naive, PlugIn, Residual };

inline std::string to_string(EstimatorKind e) {
  switch (e) {
    case EstimatorKind::HT: return "ht";
    case EstimatorKind::Naive: return "naive";
    case EstimatorKind::PlugIn: return "plugin";
    case EstimatorKind::Residual: return "residual";
  }
  return "?";
}

inline EstimatorKind parse_estimator(const std::string& s) {
  if (s == "ht") return EstimatorKind::HT;
  if (s == "naive") return EstimatorKind::Naive;
  if (s == "plugin") return EstimatorKind::PlugIn;
  if (s == "residual") return EstimatorKind::Residual;
  throw ConfigError("unknown estimator '" + s +
                    "' (expected ht|naive|plugin|residual)");
}

// Empirical CDF of the fitted standardized residuals at r, by binary search
// over the sorted pool. Weak inequality, no interpolation.
inline double residual_ecdf(const FittedModel& model, double r) {
  const auto& res = model.residuals_sorted;
  if (res.empty()) throw ArgumentError("model has no residual pool");
  const auto count = std::upper_bound(res.begin(), res.end(), r) - res.begin();
  return static_cast<double>(count) / static_cast<double>(res.size());
}

inline double cdf_ht(const ProbabilitySample& a, double t) {
  if (!a.has_response()) {
    throw ArgumentError("design-weighted reference CDF needs responses on A");
  }
  double acc = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (a.y(i) <= t) acc += a.weight[static_cast<std::size_t>(i)];
  }
  return acc / a.pop_size;
}

inline double cdf_naive(const ConvenienceSample& b, double t) {
  if (b.size() < 1) throw ArgumentError("convenience sample is empty");
  std::int64_t count = 0;
  for (Eigen::Index j = 0; j < b.size(); ++j) count += (b.y(j) <= t);
  return static_cast<double>(count) / static_cast<double>(b.size());
}

inline double cdf_plugin(const ProbabilitySample& a, const FittedModel& model,
                         double t) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (predict(model, a.x.row(i)) <= t) {
      acc += a.weight[static_cast<std::size_t>(i)];
    }
  }
  return acc / a.pop_size;
}

inline double cdf_residual(const ProbabilitySample& a, const FittedModel& model,
                           double t) {
  if (model.residuals_sorted.empty()) {
    throw ArgumentError("model has no residual pool");
  }
  double acc = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    acc += a.weight[static_cast<std::size_t>(i)] *
           residual_ecdf(model, standardized_threshold(model, a.x.row(i), t));
  }
  return acc / a.pop_size;
}

struct CdfCurve {
  std::vector<double> grid;   // ascending evaluation points
  std::vector<double> value;  // nondecreasing estimates
  EstimatorKind estimator_tag = EstimatorKind::HT;
  double weight_bound = 1.0;  // sum(d)/N for weighted estimators, 1 for naive

  void validate() const {
    if (grid.size() != value.size()) {
      throw ValidationError("curve grid/value length mismatch");
    }
    if (!std::is_sorted(grid.begin(), grid.end())) {
      throw ValidationError("curve grid must be ascending");
    }
    if (!std::is_sorted(value.begin(), value.end())) {
      throw ValidationError("curve values must be nondecreasing");
    }
    const double tol = 1e-9 * std::max(1.0, weight_bound);
    for (double v : value) {
      if (v < -tol || v > weight_bound + tol) {
        throw ValidationError("curve value outside [0, weight bound]");
      }
    }
  }
};

namespace detail {

// Step curve from point masses: grid = sorted unique locations, value =
// cumulative mass / denominator.
inline CdfCurve step_curve(std::vector<std::pair<double, double>> mass,
                           double denom, EstimatorKind tag) {
  std::sort(mass.begin(), mass.end(),
            [](const auto& l, const auto& r) { return l.first < r.first; });
  CdfCurve c;
  c.estimator_tag = tag;
  double total = 0.0;
  for (const auto& [loc, w] : mass) total += w;
  c.weight_bound = total / denom;
  double acc = 0.0;
  for (std::size_t i = 0; i < mass.size(); ++i) {
    acc += mass[i].second;
    if (i + 1 < mass.size() && mass[i + 1].first == mass[i].first) continue;
    c.grid.push_back(mass[i].first);
    c.value.push_back(acc / denom);
  }
  return c;
}

// First index in [0,n) with value(i) >= threshold, assuming value is
// nondecreasing in i; n when no index qualifies.
template <typename ValueAt>
std::size_t first_index_at_least(std::size_t n, ValueAt&& value,
                                 double threshold) {
  std::size_t lo = 0;
  std::size_t hi = n;
  while (lo < hi) {
    const std::size_t mid = lo + (hi - lo) / 2;
    if (value(mid) >= threshold) {
      hi = mid;
    } else {
      lo = mid + 1;
    }
  }
  return lo;
}

}  // namespace detail

inline CdfCurve curve_ht(const ProbabilitySample& a) {
  if (!a.has_response()) {
    throw ArgumentError("design-weighted reference curve needs responses on A");
  }
  std::vector<std::pair<double, double>> mass;
  mass.reserve(static_cast<std::size_t>(a.size()));
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    mass.emplace_back(a.y(i), a.weight[static_cast<std::size_t>(i)]);
  }
  return detail::step_curve(std::move(mass), a.pop_size, EstimatorKind::HT);
}

inline CdfCurve curve_naive(const ConvenienceSample& b) {
  std::vector<std::pair<double, double>> mass;
  mass.reserve(static_cast<std::size_t>(b.size()));
  for (Eigen::Index j = 0; j < b.size(); ++j) mass.emplace_back(b.y(j), 1.0);
  return detail::step_curve(std::move(mass), static_cast<double>(b.size()),
                            EstimatorKind::Naive);
}

inline CdfCurve curve_plugin(const ProbabilitySample& a,
                             const FittedModel& model) {
  std::vector<std::pair<double, double>> mass;
  mass.reserve(static_cast<std::size_t>(a.size()));
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    mass.emplace_back(predict(model, a.x.row(i)),
                      a.weight[static_cast<std::size_t>(i)]);
  }
  return detail::step_curve(std::move(mass), a.pop_size, EstimatorKind::PlugIn);
}

// Precomputed state for repeated residual-CDF evaluation over one sample/model
// pair: predictions, scales, and the sorted residual pool. cdf(t) costs
// O(n_A log n_B); quantile inversion searches the sorted predictions, the
// support on which the estimator's step heights are anchored.
class ResidualCdf {
 public:
  ResidualCdf(const ProbabilitySample& a, const FittedModel& model)
      : residuals_(model.residuals_sorted),
        weight_(a.weight),
        pop_size_(a.pop_size) {
    if (residuals_.empty()) throw ArgumentError("model has no residual pool");
    const auto n = a.size();
    yhat_.resize(static_cast<std::size_t>(n));
    inv_scale_.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      const double scale = model.nu(a.x.row(i));
      if (!(scale > 0.0)) {
        throw ValidationError("variance function must be strictly positive");
      }
      yhat_[static_cast<std::size_t>(i)] = predict(model, a.x.row(i));
      inv_scale_[static_cast<std::size_t>(i)] = 1.0 / scale;
    }
    support_ = yhat_;
    std::sort(support_.begin(), support_.end());
    double sum_w = 0.0;
    for (double w : weight_) sum_w += w;
    max_value_ = sum_w / pop_size_;
  }

  double cdf(double t) const {
    const double n_b = static_cast<double>(residuals_.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < yhat_.size(); ++i) {
      const double r = (t - yhat_[i]) * inv_scale_[i];
      const auto count =
          std::upper_bound(residuals_.begin(), residuals_.end(), r) -
          residuals_.begin();
      acc += weight_[i] * (static_cast<double>(count) / n_b);
    }
    return acc / pop_size_;
  }

  // Attained bound sum(d)/N; cdf(t) approaches it as t grows.
  double max_value() const { return max_value_; }

  const std::vector<double>& support() const { return support_; }

  struct Inversion {
    double t = 0.0;
    double value = 0.0;  // cdf(t), the first curve value >= the threshold
  };

  // Smallest support point whose estimate reaches `threshold`.
  std::optional<Inversion> invert(double threshold) const {
    const std::size_t idx = detail::first_index_at_least(
        support_.size(), [&](std::size_t i) { return cdf(support_[i]); },
        threshold);
    if (idx == support_.size()) return std::nullopt;
    return Inversion{support_[idx], cdf(support_[idx])};
  }

  std::optional<Inversion> quantile(double alpha) const {
    if (!(alpha > 0.0 && alpha <= 1.0)) {
      throw ArgumentError("quantile level must lie in (0,1]");
    }
    return invert(alpha);
  }

 private:
  std::vector<double> residuals_;
  std::vector<double> weight_;
  double pop_size_;
  std::vector<double> yhat_;
  std::vector<double> inv_scale_;
  std::vector<double> support_;
  double max_value_ = 0.0;
};

inline CdfCurve curve_residual(const ProbabilitySample& a,
                               const FittedModel& model) {
  ResidualCdf rc(a, model);
  CdfCurve c;
  c.estimator_tag = EstimatorKind::Residual;
  c.weight_bound = rc.max_value();
  c.grid = rc.support();
  c.grid.erase(std::unique(c.grid.begin(), c.grid.end()), c.grid.end());
  c.value.reserve(c.grid.size());
  for (double t : c.grid) c.value.push_back(rc.cdf(t));
  return c;
}

// Smallest grid point whose estimate reaches alpha; nullopt when the curve
// never gets there (possible for the residual estimator at extreme alpha).
inline std::optional<double> invert_quantile(const CdfCurve& curve,
                                             double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw ArgumentError("quantile level must lie in (0,1]");
  }
  const auto it =
      std::lower_bound(curve.value.begin(), curve.value.end(), alpha);
  if (it == curve.value.end()) return std::nullopt;
  return curve.grid[static_cast<std::size_t>(it - curve.value.begin())];
}

struct WoodruffInterval {
  double lower = 0.0;
  double upper = 0.0;
  bool lower_saturated = false;  // threshold fell below the curve's first value
  bool upper_saturated = false;  // threshold exceeded the curve's maximum
};

namespace detail {

template <typename ValueAt>
WoodruffInterval woodruff_search(std::size_t n, ValueAt&& value,
                                 const std::vector<double>& grid, double alpha,
                                 double se, double z) {
  if (se < 0.0) throw ArgumentError("standard error must be nonnegative");
  if (n == 0) throw ArgumentError("empty curve");
  WoodruffInterval w;
  const double lo_thr = alpha - z * se;
  const double hi_thr = alpha + z * se;
  std::size_t lo_idx = first_index_at_least(n, value, lo_thr);
  if (lo_idx == n) {
    lo_idx = n - 1;
    w.lower_saturated = true;
  }
  std::size_t hi_idx = first_index_at_least(n, value, hi_thr);
  if (hi_idx == n) {
    hi_idx = n - 1;
    w.upper_saturated = true;
  }
  w.lower = grid[lo_idx];
  w.upper = grid[hi_idx];
  return w;
}

}  // namespace detail

// Quantile confidence interval by inverting the CDF band alpha +/- z*se.
// Bounds saturate at the grid extremes (flagged) when a threshold is not
// attained.
inline WoodruffInterval woodruff_interval(const CdfCurve& curve, double alpha,
                                          double se_at_quantile, double gamma) {
  const double z = z_two_sided(gamma);
  return detail::woodruff_search(
      curve.value.size(), [&](std::size_t i) { return curve.value[i]; },
      curve.grid, alpha, se_at_quantile, z);
}

inline WoodruffInterval woodruff_interval(const ResidualCdf& rc, double alpha,
                                          double se_at_quantile, double gamma) {
  const double z = z_two_sided(gamma);
  return detail::woodruff_search(
      rc.support().size(),
      [&](std::size_t i) { return rc.cdf(rc.support()[i]); }, rc.support(),
      alpha, se_at_quantile, z);
}

}  // namespace recdf

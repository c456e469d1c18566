#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "recdf/errors.hpp"
#include "recdf/sampling.hpp"

namespace recdf {

// The working model is Y = m(X;beta) + nu(X)*eps with m linear in X and
// nu a known, strictly positive function. nu defaults to the constant 1 and
// can alternatively be |x_k|^gamma on a single column.
struct VarianceFunction {
  enum class Kind { Constant, PowerColumn };
  Kind kind = Kind::Constant;
  int column = 0;
  double exponent = 1.0;

  static VarianceFunction constant() { return {}; }

  static VarianceFunction power_column(int column, double exponent) {
    VarianceFunction v;
    v.kind = Kind::PowerColumn;
    v.column = column;
    v.exponent = exponent;
    return v;
  }

  template <typename Row>
  double operator()(const Row& x_row) const {
    if (kind == Kind::Constant) return 1.0;
    if (column < 0 || column >= static_cast<int>(x_row.size())) {
      throw ArgumentError("variance function column out of range");
    }
    return std::pow(std::fabs(x_row[column]), exponent);
  }
};

struct FittedModel {
  Eigen::VectorXd beta;  // intercept first
  VarianceFunction nu;
  std::vector<double> residuals_sorted;  // ascending standardized residuals
  std::vector<std::string> column_names;

  Eigen::Index num_covariates() const { return beta.size() - 1; }

  void validate() const {
    if (beta.size() < 1 || !beta.allFinite()) {
      throw ValidationError("model coefficients must be finite");
    }
    if (!std::is_sorted(residuals_sorted.begin(), residuals_sorted.end())) {
      throw ValidationError("residual pool must be sorted ascending");
    }
  }
};

template <typename Row>
double predict(const FittedModel& model, const Row& x_row) {
  if (static_cast<Eigen::Index>(x_row.size()) != model.beta.size() - 1) {
    throw ArgumentError("covariate row length does not match fitted model");
  }
  double v = model.beta(0);
  for (Eigen::Index k = 0; k + 1 < model.beta.size(); ++k) {
    v += model.beta(k + 1) * x_row[k];
  }
  return v;
}

// (t - m(x;beta)) / nu(x): the argument at which the residual eCDF is read.
template <typename Row>
double standardized_threshold(const FittedModel& model, const Row& x_row,
                              double t) {
  const double scale = model.nu(x_row);
  if (!(scale > 0.0)) {
    throw ValidationError("variance function must be strictly positive");
  }
  return (t - predict(model, x_row)) / scale;
}

// Weighted least squares on the convenience sample: beta solves
// sum_j (y_j - m(x_j;beta)) x_j / nu^2(x_j) = 0, via a rank-revealing QR that
// fails loudly on collinearity instead of regularizing. Standardized
// residuals (y_j - m(x_j;beta))/nu(x_j) are stored sorted.
inline FittedModel fit_linear(const Eigen::MatrixXd& x,
                              const Eigen::VectorXd& y,
                              VarianceFunction nu = VarianceFunction::constant(),
                              std::vector<std::string> column_names = {}) {
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();
  if (y.size() != n) throw ArgumentError("response length does not match rows");
  if (n < p + 1) {
    throw ArgumentError("need at least as many rows as coefficients: n=" +
                        std::to_string(n) + ", p+1=" + std::to_string(p + 1));
  }
  FittedModel model;
  model.nu = nu;
  if (column_names.empty()) {
    for (Eigen::Index k = 0; k < p; ++k) {
      column_names.push_back("x" + std::to_string(k + 1));
    }
  }
  if (static_cast<Eigen::Index>(column_names.size()) != p) {
    throw ArgumentError("column name count does not match covariates");
  }
  model.column_names = std::move(column_names);

  Eigen::VectorXd scale(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    scale(j) = nu(x.row(j));
    if (!(scale(j) > 0.0) || !std::isfinite(scale(j))) {
      throw ValidationError("variance function must be strictly positive");
    }
  }

  Eigen::MatrixXd design(n, p + 1);
  design.col(0).setOnes();
  design.rightCols(p) = x;
  const Eigen::VectorXd inv_scale = scale.cwiseInverse();
  const Eigen::MatrixXd weighted = inv_scale.asDiagonal() * design;
  const Eigen::VectorXd target = inv_scale.cwiseProduct(y);

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(weighted);
  if (qr.rank() < p + 1) {
    const auto perm = qr.colsPermutation().indices();
    std::string names;
    for (Eigen::Index k = qr.rank(); k < p + 1; ++k) {
      if (!names.empty()) names += ", ";
      const Eigen::Index col = perm(k);
      names += (col == 0) ? "(intercept)" : model.column_names[col - 1];
    }
    throw EstimationError("design matrix is rank deficient; collinear: " + names);
  }
  model.beta = qr.solve(target);

  model.residuals_sorted.resize(static_cast<std::size_t>(n));
  const Eigen::VectorXd fitted = design * model.beta;
  for (Eigen::Index j = 0; j < n; ++j) {
    model.residuals_sorted[static_cast<std::size_t>(j)] =
        (y(j) - fitted(j)) / scale(j);
  }
  std::sort(model.residuals_sorted.begin(), model.residuals_sorted.end());
  return model;
}

inline FittedModel fit_linear(const ConvenienceSample& b,
                              VarianceFunction nu = VarianceFunction::constant(),
                              std::vector<std::string> column_names = {}) {
  return fit_linear(b.x, b.y, nu, std::move(column_names));
}

}  // namespace recdf

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "recdf/errors.hpp"
#include "recdf/population.hpp"
#include "recdf/rng.hpp"

namespace recdf {

enum class SampleDesign { SrsWor, ExternalWeights };
enum class Mechanism { MAR, MNAR, External };

inline std::string to_string(Mechanism m) {
  switch (m) {
    case Mechanism::MAR: return "mar";
    case Mechanism::MNAR: return "mnar";
    case Mechanism::External: return "external";
  }
  return "?";
}

inline Mechanism parse_mechanism(const std::string& s) {
  if (s == "mar") return Mechanism::MAR;
  if (s == "mnar") return Mechanism::MNAR;
  throw ConfigError("unknown mechanism '" + s + "' (expected mar|mnar)");
}

// Design-weighted sample: covariates and weights, response only when a
// simulation attached it for reference estimates.
struct ProbabilitySample {
  std::vector<std::int64_t> idx;  // population rows; empty for external data
  std::vector<double> weight;     // d_i = 1/pi_i
  SampleDesign design = SampleDesign::SrsWor;
  double pop_size = 0;  // N
  Eigen::MatrixXd x;
  Eigen::VectorXd y;  // size 0 when the response is unobserved

  Eigen::Index size() const { return x.rows(); }
  bool has_response() const { return y.size() == x.rows() && y.size() > 0; }

  void validate() const {
    if (x.rows() == 0) throw ValidationError("probability sample is empty");
    if (static_cast<Eigen::Index>(weight.size()) != x.rows()) {
      throw ValidationError("weight length does not match sample rows");
    }
    if (pop_size <= 0) throw ValidationError("population size must be positive");
    for (double w : weight) {
      if (!(w > 0) || !std::isfinite(w)) {
        throw ValidationError("weights must be positive and finite");
      }
    }
    if (!idx.empty()) {
      std::vector<std::int64_t> sorted = idx;
      std::sort(sorted.begin(), sorted.end());
      if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        throw ValidationError("sample indices must be unique");
      }
    }
    if (design == SampleDesign::SrsWor) {
      const double expected = pop_size / static_cast<double>(x.rows());
      for (double w : weight) {
        if (w != expected) {
          throw ValidationError("SRS sample must carry weights N/n");
        }
      }
    }
  }
};

struct ConvenienceSample {
  std::vector<std::int64_t> idx;
  Mechanism mechanism = Mechanism::External;
  Eigen::MatrixXd x;
  Eigen::VectorXd y;

  Eigen::Index size() const { return x.rows(); }

  void validate() const {
    if (x.rows() == 0) throw ValidationError("convenience sample is empty");
    if (y.size() != x.rows()) {
      throw ValidationError("convenience sample must carry a response per row");
    }
    if (!idx.empty()) {
      std::vector<std::int64_t> sorted = idx;
      std::sort(sorted.begin(), sorted.end());
      if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        throw ValidationError("sample indices must be unique");
      }
    }
  }
};

// Pairwise inclusion probabilities, either closed-form SRS or a caller
// supplied matrix aligned with the sample rows.
class JointInclusion {
 public:
  static JointInclusion srs_wor(std::int64_t n, std::int64_t big_n) {
    if (n < 2 || big_n < n) {
      throw ArgumentError(
          "SRS joint inclusion requires 2 <= n <= N (pairwise probabilities "
          "vanish for n < 2)");
    }
    JointInclusion j;
    j.srs_ = true;
    j.n_ = static_cast<double>(n);
    j.big_n_ = static_cast<double>(big_n);
    return j;
  }

  static JointInclusion explicit_matrix(Eigen::MatrixXd pi) {
    if (pi.rows() != pi.cols()) {
      throw ValidationError("joint inclusion matrix must be square");
    }
    for (Eigen::Index a = 0; a < pi.rows(); ++a) {
      for (Eigen::Index b = 0; b < pi.cols(); ++b) {
        if (pi(a, b) != pi(b, a)) {
          throw ValidationError("joint inclusion matrix must be symmetric");
        }
        if (!(pi(a, b) > 0.0) || pi(a, b) > 1.0) {
          throw ValidationError("joint inclusion entries must lie in (0,1]");
        }
      }
    }
    JointInclusion j;
    j.srs_ = false;
    j.pi_ = std::move(pi);
    return j;
  }

  bool is_srs() const { return srs_; }

  double first_order(Eigen::Index h) const {
    return srs_ ? n_ / big_n_ : pi_(h, h);
  }

  double joint(Eigen::Index h, Eigen::Index i) const {
    if (srs_) {
      return (h == i) ? n_ / big_n_
                      : n_ * (n_ - 1.0) / (big_n_ * (big_n_ - 1.0));
    }
    return pi_(h, i);
  }

 private:
  bool srs_ = true;
  double n_ = 0;
  double big_n_ = 0;
  Eigen::MatrixXd pi_;
};

inline JointInclusion joint_inclusion(const ProbabilitySample& a) {
  if (a.design != SampleDesign::SrsWor) {
    throw ArgumentError(
        "joint inclusion probabilities are only derivable for SRS designs; "
        "supply an explicit matrix for other designs");
  }
  return JointInclusion::srs_wor(static_cast<std::int64_t>(a.size()),
                                 static_cast<std::int64_t>(a.pop_size));
}

namespace detail {

// First n entries of a partial Fisher-Yates pass, returned sorted.
inline std::vector<std::int64_t> srs_indices(std::vector<std::int64_t>& urn,
                                             std::size_t n, RngStream& rng) {
  const std::size_t big_n = urn.size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.bounded(big_n - i));
    std::swap(urn[i], urn[j]);
  }
  std::vector<std::int64_t> out(urn.begin(), urn.begin() + n);
  std::sort(out.begin(), out.end());
  return out;
}

inline Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& x,
                                   const std::vector<std::int64_t>& idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(r) = x.row(idx[r]);
  return out;
}

inline Eigen::VectorXd gather(const Eigen::VectorXd& y,
                              const std::vector<std::int64_t>& idx) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t r = 0; r < idx.size(); ++r) out(r) = y(idx[r]);
  return out;
}

}  // namespace detail

inline ProbabilitySample draw_srs_wor(const FinitePopulation& pop,
                                      std::int64_t n, RngStream& rng) {
  const auto big_n = static_cast<std::int64_t>(pop.size());
  if (n < 1 || n > big_n) {
    throw ArgumentError("SRS sample size must satisfy 1 <= n <= N");
  }
  std::vector<std::int64_t> urn(big_n);
  std::iota(urn.begin(), urn.end(), 0);
  ProbabilitySample a;
  a.idx = detail::srs_indices(urn, static_cast<std::size_t>(n), rng);
  a.design = SampleDesign::SrsWor;
  a.pop_size = static_cast<double>(big_n);
  a.weight.assign(a.idx.size(), static_cast<double>(big_n) / static_cast<double>(n));
  a.x = detail::gather_rows(pop.x, a.idx);
  a.y = detail::gather(pop.y, a.idx);
  return a;
}

inline ProbabilitySample draw_srs_wor(const FinitePopulation& pop,
                                      std::int64_t n, std::uint64_t seed) {
  RngStream rng(seed, "srs");
  return draw_srs_wor(pop, n, rng);
}

// Two-stratum selection frame for convenience draws. Strata are fixed
// population quantities: under MAR the split is on the covariate most
// correlated with Y (ties to the lowest column index) at its median; under
// MNAR it is on Y itself at the population median. Built once per population,
// before any draws.
struct StratifiedDesign {
  Mechanism mechanism = Mechanism::External;
  int x_star_column = -1;  // -1 under MNAR
  double threshold = 0.0;
  std::vector<std::int64_t> stratum_lower;  // discriminant <= threshold
  std::vector<std::int64_t> stratum_upper;

  struct Allocation {
    std::int64_t n_lower = 0;
    std::int64_t n_upper = 0;
  };

  Allocation allocate(std::int64_t n_b, double upper_frac) const {
    if (!(upper_frac > 0.0 && upper_frac < 1.0)) {
      throw ArgumentError("upper stratum fraction must lie in (0,1)");
    }
    Allocation al;
    al.n_lower = std::llround((1.0 - upper_frac) * static_cast<double>(n_b));
    al.n_upper = n_b - al.n_lower;
    if (al.n_lower > static_cast<std::int64_t>(stratum_lower.size()) ||
        al.n_upper > static_cast<std::int64_t>(stratum_upper.size())) {
      throw SamplingError(
          "stratum smaller than its allocation: lower has " +
          std::to_string(stratum_lower.size()) + " units (need " +
          std::to_string(al.n_lower) + "), upper has " +
          std::to_string(stratum_upper.size()) + " units (need " +
          std::to_string(al.n_upper) + ")");
    }
    return al;
  }

  // True Pr(u in B) per population unit; a simulation-only quantity used by
  // the naive-bias diagnostic, never handed to estimators.
  std::vector<double> inclusion_probabilities(std::int64_t n_b,
                                              double upper_frac) const {
    const Allocation al = allocate(n_b, upper_frac);
    const double pr_lower = static_cast<double>(al.n_lower) /
                            static_cast<double>(stratum_lower.size());
    const double pr_upper = static_cast<double>(al.n_upper) /
                            static_cast<double>(stratum_upper.size());
    std::vector<double> pr(stratum_lower.size() + stratum_upper.size(), 0.0);
    for (auto u : stratum_lower) pr[static_cast<std::size_t>(u)] = pr_lower;
    for (auto u : stratum_upper) pr[static_cast<std::size_t>(u)] = pr_upper;
    return pr;
  }
};

inline StratifiedDesign make_stratified_design(const FinitePopulation& pop,
                                               Mechanism mechanism) {
  StratifiedDesign d;
  d.mechanism = mechanism;
  const auto n = pop.size();
  Eigen::VectorXd discriminant;
  if (mechanism == Mechanism::MAR) {
    const Eigen::VectorXd yc = pop.y.array() - pop.y.mean();
    double best = -1.0;
    for (int k = 0; k < pop.x.cols(); ++k) {
      const Eigen::VectorXd xc = pop.x.col(k).array() - pop.x.col(k).mean();
      const double denom = std::sqrt(xc.squaredNorm() * yc.squaredNorm());
      const double r = denom > 0 ? std::fabs(xc.dot(yc) / denom) : 0.0;
      if (r > best) {
        best = r;
        d.x_star_column = k;
      }
    }
    discriminant = pop.x.col(d.x_star_column);
  } else if (mechanism == Mechanism::MNAR) {
    discriminant = pop.y;
  } else {
    throw ArgumentError("stratified design requires a MAR or MNAR mechanism");
  }
  std::vector<double> sorted(discriminant.data(), discriminant.data() + n);
  std::sort(sorted.begin(), sorted.end());
  d.threshold = quantile_of_sorted(sorted, 0.5);
  for (Eigen::Index u = 0; u < n; ++u) {
    (discriminant(u) <= d.threshold ? d.stratum_lower : d.stratum_upper)
        .push_back(u);
  }
  if (d.stratum_lower.empty() || d.stratum_upper.empty()) {
    throw SamplingError("degenerate stratification: one stratum is empty");
  }
  return d;
}

// Stratified SRS draw of n_b units. Only the stratum membership lists are
// consulted, so under MAR the draw provably never reads Y.
inline ConvenienceSample draw_convenience(const FinitePopulation& pop,
                                          const StratifiedDesign& design,
                                          std::int64_t n_b, double upper_frac,
                                          RngStream& rng_lower,
                                          RngStream& rng_upper) {
  if (n_b > static_cast<std::int64_t>(pop.size())) {
    throw ArgumentError("convenience sample size exceeds population size");
  }
  const auto al = design.allocate(n_b, upper_frac);
  std::vector<std::int64_t> lower = design.stratum_lower;
  std::vector<std::int64_t> upper = design.stratum_upper;
  ConvenienceSample b;
  b.mechanism = design.mechanism;
  b.idx = detail::srs_indices(lower, static_cast<std::size_t>(al.n_lower),
                              rng_lower);
  auto from_upper = detail::srs_indices(
      upper, static_cast<std::size_t>(al.n_upper), rng_upper);
  b.idx.insert(b.idx.end(), from_upper.begin(), from_upper.end());
  b.x = detail::gather_rows(pop.x, b.idx);
  b.y = detail::gather(pop.y, b.idx);
  return b;
}

inline ConvenienceSample draw_convenience(const FinitePopulation& pop,
                                          std::int64_t n_b,
                                          Mechanism mechanism,
                                          double upper_frac,
                                          std::uint64_t seed) {
  const StratifiedDesign design = make_stratified_design(pop, mechanism);
  RngStream lower(seed, "conv.lower");
  RngStream upper(seed, "conv.upper");
  return draw_convenience(pop, design, n_b, upper_frac, lower, upper);
}

}  // namespace recdf

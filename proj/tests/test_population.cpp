#include <catch_amalgamated.hpp>

#include <cmath>

#include "recdf/population.hpp"
#include "recdf/rng.hpp"

using namespace recdf;

namespace {

FinitePopulation pop_from(std::vector<double> y) {
  FinitePopulation p;
  const auto n = static_cast<Eigen::Index>(y.size());
  p.y = Eigen::Map<Eigen::VectorXd>(y.data(), n);
  p.x = Eigen::MatrixXd::Zero(n, 1);
  return p;
}

}  // namespace

TEST_CASE("xi1 moments match the generating model") {
  const auto pop = generate_population(PopulationModel::Xi1, 1000000, 4242);
  REQUIRE(pop.size() == 1000000);
  REQUIRE(pop.num_covariates() == 4);
  const double mean = pop.y.mean();
  CHECK(std::fabs(mean - 32.0) < 0.1);  // E[Y] = 4*2 + 4*2 + 2*4 + 2*4
  const double var = (pop.y.array() - mean).square().sum() / (pop.size() - 1);
  CHECK(std::fabs(var - 49.0) / 49.0 < 0.02);  // 16+16+4+4+9
}

TEST_CASE("xi3 covariates stay inside the unit box") {
  const auto pop = generate_population(PopulationModel::Xi3, 200000, 7);
  CHECK(pop.x.minCoeff() >= -1.0);
  CHECK(pop.x.maxCoeff() <= 1.0);
}

TEST_CASE("xi4 has six covariates and finite responses") {
  const auto pop = generate_population(PopulationModel::Xi4, 50000, 99);
  REQUIRE(pop.num_covariates() == 6);
  CHECK(pop.y.allFinite());
}

TEST_CASE("regeneration with the same arguments is bit-identical") {
  const auto a = generate_population(PopulationModel::Xi2, 5000, 31337);
  const auto b = generate_population(PopulationModel::Xi2, 5000, 31337);
  CHECK(a.y == b.y);
  CHECK(a.x == b.x);
  const auto c = generate_population(PopulationModel::Xi2, 5000, 31338);
  CHECK(a.y != c.y);
}

TEST_CASE("generation rejects invalid requests") {
  CHECK_THROWS_AS(generate_population(PopulationModel::External, 10, 1),
                  ConfigError);
  CHECK_THROWS_AS(generate_population(PopulationModel::Xi1, 0, 1),
                  ArgumentError);
  CHECK_THROWS_AS(parse_population_model("xi9"), ConfigError);
}

TEST_CASE("finite cdf counts at-or-below proportions") {
  const auto pop = pop_from({1, 2, 3, 4});
  CHECK(finite_cdf(pop, 0.5) == 0.0);
  CHECK(finite_cdf(pop, 4.0) == 1.0);
  CHECK(finite_cdf(pop, 2.5) == 0.5);
  CHECK(finite_cdf(pop, 2.0) == 0.5);  // weak inequality
}

TEST_CASE("finite quantile returns the smallest qualifying member") {
  const auto pop = pop_from({4, 2, 1, 3});
  CHECK(finite_quantile(pop, 0.5) == 2.0);
  CHECK(finite_quantile(pop, 1.0) == 4.0);
  CHECK(finite_quantile(pop, 0.26) == 2.0);
  const auto flat = pop_from({5, 5, 5});
  CHECK(finite_quantile(flat, 0.1) == 5.0);
  CHECK(finite_quantile(flat, 0.9) == 5.0);
  CHECK_THROWS_AS(finite_quantile(pop, 0.0), ArgumentError);
  CHECK_THROWS_AS(finite_quantile(pop, 1.5), ArgumentError);
}

TEST_CASE("cdf and quantile form a Galois connection") {
  const auto pop = generate_population(PopulationModel::Xi3, 2000, 5);
  RngStream s(17, "galois");
  double prev = -1e300;
  for (double alpha : {0.001, 0.01, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99, 1.0}) {
    const double q = finite_quantile(pop, alpha);
    CHECK(finite_cdf(pop, q) + 1e-12 >= alpha);
    CHECK(q >= prev);  // nondecreasing in alpha
    prev = q;
  }
  for (int i = 0; i < 200; ++i) {
    const double alpha = s.uniform01();
    const double q = finite_quantile(pop, alpha);
    REQUIRE(finite_cdf(pop, q) + 1e-12 >= alpha);
  }
}

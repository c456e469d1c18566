// Acceptance suite: every release criterion in one binary, one PASS/FAIL
// line per criterion. Exits nonzero when any criterion fails.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "recdf/cli.hpp"
#include "recdf/estimators.hpp"
#include "recdf/simulation.hpp"
#include "recdf/variance.hpp"

using namespace recdf;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report_line(int id, bool pass, const std::string& what,
                 const std::string& detail) {
  std::printf("%s criterion %2d: %s%s%s\n", pass ? "PASS" : "FAIL", id,
              what.c_str(), detail.empty() ? "" : " -- ", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

FittedModel identity_model(std::vector<double> residuals) {
  FittedModel m;
  m.beta = (Eigen::VectorXd(2) << 0, 1).finished();
  m.column_names = {"x1"};
  std::sort(residuals.begin(), residuals.end());
  m.residuals_sorted = std::move(residuals);
  return m;
}

ProbabilitySample random_sample(RngStream& s, std::size_t n, double pop_size) {
  ProbabilitySample a;
  a.x.resize(static_cast<Eigen::Index>(n), 1);
  a.weight.resize(n);
  a.pop_size = pop_size;
  a.design = SampleDesign::ExternalWeights;
  for (std::size_t i = 0; i < n; ++i) {
    a.x(static_cast<Eigen::Index>(i), 0) = s.normal(0, 1.5);
    a.weight[i] = s.uniform(0.5, 4.0);
  }
  return a;
}

double brute_force_residual_cdf(const ProbabilitySample& a,
                                const FittedModel& model, double t) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double r = standardized_threshold(model, a.x.row(i), t);
    double count = 0.0;
    for (double e : model.residuals_sorted) count += (e <= r) ? 1.0 : 0.0;
    acc += a.weight[static_cast<std::size_t>(i)] * count /
           static_cast<double>(model.residuals_sorted.size());
  }
  return acc / a.pop_size;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

// --- criteria 1 and 2 -------------------------------------------------------

void criterion_1() {
  RngStream s(1001, "acc1");
  double worst = 0.0;
  for (int rep = 0; rep < 1000; ++rep) {
    const std::size_t na = 1 + s.bounded(50);
    const std::size_t nb = 1 + s.bounded(50);
    auto a = random_sample(s, na, static_cast<double>(2 * na));
    std::vector<double> pool(nb);
    for (auto& e : pool) e = s.normal(0, 1);
    const auto m = identity_model(pool);
    for (int q = 0; q < 4; ++q) {
      const double t = s.normal(0, 2);
      worst = std::max(worst, std::fabs(cdf_residual(a, m, t) -
                                        brute_force_residual_cdf(a, m, t)));
    }
  }
  report_line(1, worst <= 1e-12,
              "binary-search residual CDF equals the brute-force double loop",
              "max abs diff " + format_double(worst));
}

void criterion_2() {
  RngStream s(1002, "acc2");
  bool exact = true;
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t na = 1 + s.bounded(40);
    auto a = random_sample(s, na, static_cast<double>(3 * na));
    const auto m = identity_model(std::vector<double>(1 + s.bounded(20), 0.0));
    for (int q = 0; q < 5; ++q) {
      const double t = s.normal(0, 2);
      exact &= (cdf_residual(a, m, t) == cdf_plugin(a, m, t));
    }
  }
  report_line(2, exact,
              "saturated model: residual estimator equals plug-in exactly", "");
}

// --- criteria 3..7: xi1/xi2 point-estimation study --------------------------

struct StudyReports {
  SimReport xi1;  // MAR+MNAR, mults {1,10}
  SimReport xi2;  // MAR, mults {1,10}
  SimReport xi3;  // MAR, mult {1}
};

StudyReports run_point_studies() {
  StudyReports out;
  SimConfig c1;
  c1.model_id = PopulationModel::Xi1;
  c1.n_pop = 10000;
  c1.n_a = 500;
  c1.n_b_multipliers = {1, 10};
  c1.mechanisms = {Mechanism::MAR, Mechanism::MNAR};
  c1.n_sim = 200;
  c1.seed = 811;
  out.xi1 = run_monte_carlo(c1);

  SimConfig c2 = c1;
  c2.model_id = PopulationModel::Xi2;
  c2.mechanisms = {Mechanism::MAR};
  c2.seed = 812;
  out.xi2 = run_monte_carlo(c2);

  SimConfig c3 = c1;
  c3.model_id = PopulationModel::Xi3;
  c3.mechanisms = {Mechanism::MAR};
  c3.n_b_multipliers = {1};
  c3.seed = 813;
  out.xi3 = run_monte_carlo(c3);
  return out;
}

void criterion_3(const SimReport& xi1) {
  bool pass = true;
  std::string detail;
  for (std::size_t k = 0; k < xi1.config.percentiles.size(); ++k) {
    const double alpha = xi1.config.percentiles[k];
    const auto& m = xi1.metrics(Mechanism::MAR, 500, EstimatorKind::HT, alpha);
    const double se = std::sqrt(m.cdf_var_mc / xi1.config.n_sim);
    const double bias = m.cdf_mean - xi1.truth_cdf[k];
    if (std::fabs(bias) >= 3 * se) {
      pass = false;
      detail += " alpha=" + format_double(alpha);
    }
  }
  report_line(3, pass, "reference estimator is design-unbiased at all 7 "
              "percentiles", detail);
}

// The unbiasedness claim takes expectation over the generating model as well
// as the designs, so each replicate here regenerates the population. With a
// single fixed population the replicate mean converges to the smoothed
// population functional, which sits O(N^-1/2) away from the realized F_N --
// visibly outside 3 SE at tail percentiles for most population seeds.
void criterion_4() {
  const std::vector<double> alphas = {.01, .10, .25, .50, .75, .90, .99};
  const int n_sim = 200;
  const std::int64_t n_pop = 10000, n_a = 500, n_b = 5000;
  const std::uint64_t seed = 814;
  std::vector<std::vector<double>> diffs(alphas.size());
  for (int r = 0; r < n_sim; ++r) {
    const auto pop = generate_population(
        PopulationModel::Xi1, n_pop, derive_seed(seed, "pop", r));
    const auto design = make_stratified_design(pop, Mechanism::MAR);
    std::vector<double> sorted(pop.y.data(), pop.y.data() + pop.y.size());
    std::sort(sorted.begin(), sorted.end());
    RngStream rng_a(seed, "rep.a", r);
    RngStream rb1(seed, "rep.b1", r), rb2(seed, "rep.b2", r);
    const auto a = draw_srs_wor(pop, n_a, rng_a);
    const auto b = draw_convenience(pop, design, n_b, 0.85, rb1, rb2);
    const auto model = fit_linear(b.x, b.y);
    const ResidualCdf rc(a, model);
    for (std::size_t k = 0; k < alphas.size(); ++k) {
      const double t = quantile_of_sorted(sorted, alphas[k]);
      diffs[k].push_back(rc.cdf(t) - finite_cdf(pop, t));
    }
  }
  bool pass = true;
  std::string detail;
  for (std::size_t k = 0; k < alphas.size(); ++k) {
    double mean = 0;
    for (double d : diffs[k]) mean += d;
    mean /= n_sim;
    double var = 0;
    for (double d : diffs[k]) var += (d - mean) * (d - mean);
    var /= (n_sim - 1);
    const double se = std::sqrt(var / n_sim);
    if (std::fabs(mean) >= 3 * se) {
      pass = false;
      detail += " alpha=" + format_double(alphas[k]) + " bias/se=" +
                format_double(mean / (se > 0 ? se : 1e-300));
    }
  }
  report_line(4, pass,
              "residual estimator is unbiased under ignorability with a "
              "correct model", detail);
}

void criterion_5(const SimReport& xi1, const SimReport& xi2) {
  bool pass = true;
  std::string detail;
  for (const auto* rep : {&xi1, &xi2}) {
    for (std::int64_t n_b : {500, 5000}) {
      for (double alpha : {0.25, 0.5, 0.75}) {
        const auto& r =
            rep->metrics(Mechanism::MAR, n_b, EstimatorKind::Residual, alpha);
        const auto& p =
            rep->metrics(Mechanism::MAR, n_b, EstimatorKind::PlugIn, alpha);
        const auto& b =
            rep->metrics(Mechanism::MAR, n_b, EstimatorKind::Naive, alpha);
        if (!(r.cdf_rmser < p.cdf_rmser && r.cdf_rmser < b.cdf_rmser)) {
          pass = false;
          detail += " " + to_string(rep->config.model_id) + "/nb" +
                    std::to_string(n_b) + "/a" + format_double(alpha);
        }
      }
    }
  }
  report_line(5, pass,
              "residual estimator outperforms plug-in and naive under MAR "
              "(RMSER ordering)", detail);
}

void criterion_6(const SimReport& xi1) {
  const auto& m = xi1.metrics(Mechanism::MNAR, 500, EstimatorKind::Naive, 0.5);
  const std::size_t k50 = xi1.percentile_index(0.5);
  const double se = std::sqrt(m.cdf_var_mc / xi1.config.n_sim);
  const double bias = m.cdf_mean - xi1.truth_cdf[k50];

  const FinitePopulation pop = generate_population(
      xi1.config.model_id, xi1.config.n_pop,
      derive_seed(xi1.config.seed, "population"));
  const auto design = make_stratified_design(pop, Mechanism::MNAR);
  const double oracle = naive_bias_oracle(pop, design, 500,
                                          xi1.config.upper_frac,
                                          xi1.truth_quantile[k50]);
  const bool large = std::fabs(bias) > 5 * se;
  const bool matches = std::fabs(bias - oracle) < 3 * se + 1e-12;
  report_line(6, large && matches,
              "naive estimator bias under MNAR is large and matches the "
              "design-expectation oracle",
              "bias " + format_double(bias) + ", oracle " +
                  format_double(oracle) + ", 5*se " + format_double(5 * se));
}

void criterion_7(const SimReport& xi1) {
  const std::size_t k50 = xi1.percentile_index(0.5);
  const std::size_t k99 = xi1.percentile_index(0.99);
  const auto& m50 = xi1.metrics(Mechanism::MNAR, 500, EstimatorKind::Naive, 0.5);
  const auto& m99 = xi1.metrics(Mechanism::MNAR, 500, EstimatorKind::Naive, 0.99);
  const double b50 = std::fabs(m50.cdf_mean - xi1.truth_cdf[k50]);
  const double b99 = std::fabs(m99.cdf_mean - xi1.truth_cdf[k99]);
  report_line(7, b99 < b50,
              "naive bias shrinks in the far tail under MNAR",
              "|bias| .99 = " + format_double(b99) + " < |bias| .50 = " +
                  format_double(b50));
}

// --- criteria 8..10: variance studies ---------------------------------------

void criteria_8_9() {
  SimConfig c;
  c.model_id = PopulationModel::Xi1;
  c.n_pop = 10000;
  c.n_a = 500;
  c.n_b_multipliers = {1};
  c.mechanisms = {Mechanism::MAR, Mechanism::MNAR};
  c.percentiles = {0.5};
  c.n_sim = 200;
  c.variance_methods = {VarianceMethod::Bootstrap};
  c.bootstrap_l = 750;
  c.seed = 821;
  const auto rep = run_monte_carlo(c);
  const auto& mar =
      rep.var_metrics(Mechanism::MAR, 500, VarianceMethod::Bootstrap, 0.5);
  const bool pass8 =
      mar.cdf_coverage_pct >= 85.5 && mar.cdf_coverage_pct <= 94.5;
  report_line(8, pass8,
              "bootstrap CDF coverage under MAR is near the nominal 90%",
              format_double(mar.cdf_coverage_pct) + "%");
  const auto& mnar =
      rep.var_metrics(Mechanism::MNAR, 500, VarianceMethod::Bootstrap, 0.5);
  report_line(9, mnar.cdf_coverage_pct < 80.0,
              "coverage degrades under MNAR",
              format_double(mnar.cdf_coverage_pct) + "%");
}

void criterion_10() {
  // n_b = 20 n_a needs a population with room in the upper stratum, so the
  // desk run doubles N relative to criteria 3..9.
  SimConfig c;
  c.model_id = PopulationModel::Xi1;
  c.n_pop = 20000;
  c.n_a = 500;
  c.n_b_multipliers = {20};
  c.mechanisms = {Mechanism::MAR};
  c.percentiles = {0.5};
  c.n_sim = 200;
  c.variance_methods = {VarianceMethod::Bootstrap};
  c.bootstrap_l = 750;
  c.seed = 822;
  const auto rep = run_monte_carlo(c);
  const auto& v =
      rep.var_metrics(Mechanism::MAR, 10000, VarianceMethod::Bootstrap, 0.5);
  report_line(10, v.quantile_var_mean < v.quantile_var_mc,
              "bootstrap quantile variance underestimates the Monte Carlo "
              "truth at n_b = 20 n_a",
              "mean " + format_double(v.quantile_var_mean) + " vs MC " +
                  format_double(v.quantile_var_mc));
}

void criterion_11(const SimReport& xi3) {
  const auto& m =
      xi3.metrics(Mechanism::MAR, 500, EstimatorKind::Residual, 0.99);
  const bool pass = m.quantile_absent * 2 > xi3.config.n_sim;
  report_line(11, pass,
              "misspecified 99th-percentile quantile is absent in most runs",
              std::to_string(m.quantile_absent) + " of " +
                  std::to_string(xi3.config.n_sim));
}

void criterion_12() {
  RngStream s(1012, "acc12");
  double worst = 0.0;
  for (int rep = 0; rep < 500; ++rep) {
    const std::size_t n = 2 + s.bounded(29);
    const auto big_n = static_cast<std::int64_t>(n + 1 + s.bounded(200));
    std::vector<double> g(n);
    for (auto& v : g) v = s.uniform01();
    const auto joint = JointInclusion::srs_wor(static_cast<std::int64_t>(n),
                                               big_n);
    const double direct = detail::srs_variance_from_g(
        g, static_cast<double>(n) / static_cast<double>(big_n));
    const double dsum =
        detail::v1_double_sum(g, joint, static_cast<double>(big_n));
    if (direct != 0.0) {
      worst = std::max(worst, std::fabs(direct - dsum) / std::fabs(direct));
    } else {
      worst = std::max(worst, std::fabs(dsum));
    }
  }
  report_line(12, worst <= 1e-10,
              "SRS variance shortcut equals the general double sum",
              "worst rel diff " + format_double(worst));
}

void criterion_13() {
  const fs::path dir = fs::temp_directory_path() / "recdf_acceptance_13";
  fs::remove_all(dir);
  fs::create_directories(dir);
  {
    std::ofstream cfg(dir / "sim.cfg");
    cfg << "model = xi1\nn_pop = 4000\nn_a = 200\nn_b_multipliers = 1,10\n"
           "mechanisms = mar,mnar\npercentiles = 0.25,0.5,0.75\nn_sim = 25\n"
           "variance_methods = asymp_srs\nseed = 4242\n";
  }
  {
    std::ofstream cfg(dir / "est.cfg");
    cfg << "probability_csv = " << RECDF_TEST_DATA_DIR << "/prob_sample.csv\n"
        << "convenience_csv = " << RECDF_TEST_DATA_DIR << "/conv_sample.csv\n"
        << "pop_size = 100\npercentiles = 0.25,0.5,0.75\nbootstrap_l = 80\n"
           "seed = 7\n";
  }
  const std::string cli = RECDF_CLI_PATH;
  auto run = [&](const std::string& args) {
    const std::string cmd = "\"" + cli + "\" " + args + " > /dev/null 2>&1";
    return std::system(cmd.c_str()) == 0;
  };
  bool pass = true;
  std::string detail;
  pass &= run("simulate --config \"" + (dir / "sim.cfg").string() +
              "\" --out \"" + (dir / "s1").string() + "\" --threads 1");
  pass &= run("simulate --config \"" + (dir / "sim.cfg").string() +
              "\" --out \"" + (dir / "s2").string() + "\" --threads 4");
  pass &= run("simulate --config \"" + (dir / "sim.cfg").string() +
              "\" --out \"" + (dir / "s3").string() + "\" --threads 4");
  if (!pass) detail = "CLI invocation failed";
  for (const char* name : {"sim_report.csv", "sim_report.json"}) {
    const auto a = slurp(dir / "s1" / name);
    if (a.empty() || a != slurp(dir / "s2" / name) ||
        a != slurp(dir / "s3" / name)) {
      pass = false;
      detail += std::string(" mismatch:") + name;
    }
  }
  bool est_ok = run("estimate --config \"" + (dir / "est.cfg").string() +
                    "\" --out \"" + (dir / "e1").string() + "\" --threads 1");
  est_ok &= run("estimate --config \"" + (dir / "est.cfg").string() +
                "\" --out \"" + (dir / "e2").string() + "\" --threads 4");
  pass &= est_ok;
  for (const char* name :
       {"estimate_report.csv", "estimate_report.json", "curves.csv",
        "model.json"}) {
    const auto a = slurp(dir / "e1" / name);
    if (a.empty() || a != slurp(dir / "e2" / name)) {
      pass = false;
      detail += std::string(" mismatch:") + name;
    }
  }
  report_line(13, pass,
              "repeated runs are byte-identical, serial and parallel", detail);
}

}  // namespace

int main() {
  std::printf("acceptance suite\n");
  criterion_1();
  criterion_2();
  const StudyReports studies = run_point_studies();
  criterion_3(studies.xi1);
  criterion_4();
  criterion_5(studies.xi1, studies.xi2);
  criterion_6(studies.xi1);
  criterion_7(studies.xi1);
  criteria_8_9();
  criterion_10();
  criterion_11(studies.xi3);
  criterion_12();
  criterion_13();
  if (g_failures == 0) {
    std::printf("all 13 criteria passed\n");
  } else {
    std::printf("%d criteria FAILED\n", g_failures);
  }
  return g_failures == 0 ? 0 : 1;
}

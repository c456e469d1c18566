// Command-line front end: simulate | estimate | variance.

#include <CLI11.hpp>

#include "recdf/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{
      "recdf: finite-population CDF and quantile estimation from a "
      "design-weighted probability sample plus a convenience sample"};
  app.require_subcommand(1);

  recdf::RunManifest manifest;
  std::string config_path;
  std::string preset;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_given = false;
  unsigned threads = 0;
  bool fallback = false;

  auto add_common = [&](CLI::App* sub, bool allow_preset) {
    sub->add_option("--config", config_path, "key = value configuration file");
    if (allow_preset) {
      sub->add_option("--preset", preset,
                      "named configuration (desk-xi1..4, paper-xi1..4)");
    }
    sub->add_option("--out", out_dir, "output directory")->required();
    sub->add_option("--seed", seed, "override the configured RNG seed")
        ->each([&](const std::string&) { seed_given = true; });
    sub->add_option("--threads", threads,
                    "worker thread cap (0 = hardware concurrency)");
    sub->add_flag("--fallback-naive-quantile", fallback,
                  "substitute the naive quantile when the residual quantile "
                  "is absent");
  };

  CLI::App* sim = app.add_subcommand(
      "simulate", "run the Monte Carlo study on a generated population");
  add_common(sim, true);
  CLI::App* est = app.add_subcommand(
      "estimate", "estimate CDF/quantiles from probability + convenience CSVs");
  add_common(est, false);
  CLI::App* var = app.add_subcommand(
      "variance", "variance estimates for the residual estimator from CSVs");
  add_common(var, false);

  CLI11_PARSE(app, argc, argv);

  if (sim->parsed()) manifest.command = recdf::RunManifest::Command::Simulate;
  if (est->parsed()) manifest.command = recdf::RunManifest::Command::Estimate;
  if (var->parsed()) manifest.command = recdf::RunManifest::Command::Variance;
  manifest.config_path = config_path;
  manifest.preset = preset;
  manifest.out_dir = out_dir;
  if (seed_given) manifest.seed_override = seed;
  manifest.threads = threads;
  manifest.fallback_naive_quantile = fallback;

  return recdf::run_command(manifest);
}

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "recdf/config.hpp"
#include "recdf/csv.hpp"
#include "recdf/errors.hpp"
#include "recdf/estimators.hpp"
#include "recdf/simulation.hpp"
#include "recdf/variance.hpp"

namespace recdf {

struct RunManifest {
  enum class Command { Simulate, Estimate, Variance };
  Command command = Command::Simulate;
  std::string config_path;
  std::string preset;  // simulate only; built-in named configs
  std::string out_dir;
  std::optional<std::uint64_t> seed_override;
  unsigned threads = 0;
  bool fallback_naive_quantile = false;
};

namespace cli_detail {

inline std::string format_cell(double v) {
  return std::isnan(v) ? std::string() : format_double(v);
}

inline nlohmann::json json_number(double v) {
  if (std::isnan(v)) return nullptr;
  return v;
}

inline SimConfig preset_config(const std::string& name) {
  const auto dash = name.find('-');
  if (dash != std::string::npos) {
    const std::string scale = name.substr(0, dash);
    const std::string model = name.substr(dash + 1);
    if (scale == "desk") return SimConfig::desk_scale(parse_population_model(model));
    if (scale == "paper") return SimConfig::paper_scale(parse_population_model(model));
  }
  throw ConfigError("unknown preset '" + name +
                    "' (expected desk-xi1..desk-xi4 or paper-xi1..paper-xi4)");
}

inline VarianceFunction parse_nu(const KeyValueConfig& cfg) {
  const std::string kind = cfg.get_string("nu", "constant");
  if (kind == "constant") return VarianceFunction::constant();
  if (kind == "power") {
    return VarianceFunction::power_column(
        static_cast<int>(cfg.get_int("nu_column")),
        cfg.get_real("nu_exponent"));
  }
  throw ConfigError("key 'nu': expected constant or power");
}

inline SimConfig parse_sim_config(const KeyValueConfig& cfg,
                                  const std::string& preset) {
  SimConfig c = preset.empty() ? SimConfig() : preset_config(preset);
  if (cfg.has("model")) {
    const std::string name = cfg.get_string("model");
    if (name == "external") {
      c.model_id = PopulationModel::External;
      c.population_csv = cfg.get_string("population_csv");
      c.population_response = cfg.get_string("population_response_column", "y");
    } else {
      c.model_id = parse_population_model(name);
    }
  }
  c.n_pop = cfg.get_int("n_pop", c.n_pop);
  c.n_a = cfg.get_int("n_a", c.n_a);
  if (cfg.has("n_b_multipliers")) {
    c.n_b_multipliers = cfg.get_int_list("n_b_multipliers", "");
  }
  if (cfg.has("mechanisms")) {
    c.mechanisms.clear();
    for (const auto& s : cfg.get_list("mechanisms")) {
      c.mechanisms.push_back(parse_mechanism(s));
    }
  }
  if (cfg.has("percentiles")) {
    c.percentiles = cfg.get_real_list("percentiles", "");
  }
  c.n_sim = cfg.get_int("n_sim", c.n_sim);
  if (cfg.has("estimators")) {
    c.estimators.clear();
    for (const auto& s : cfg.get_list("estimators")) {
      c.estimators.push_back(parse_estimator(s));
    }
  }
  if (cfg.has("variance_methods")) {
    c.variance_methods.clear();
    for (const auto& s : cfg.get_list("variance_methods")) {
      c.variance_methods.push_back(parse_variance_method(s));
    }
  }
  c.bootstrap_l = cfg.get_int("bootstrap_l", c.bootstrap_l);
  if (cfg.has("replicate_weight_method")) {
    c.weight_method = parse_weight_method(cfg.get_string("replicate_weight_method"));
  }
  c.gamma = cfg.get_real("gamma", c.gamma);
  c.upper_frac = cfg.get_real("upper_frac", c.upper_frac);
  c.nu = parse_nu(cfg);
  if (cfg.has("nu_column")) cfg.get_int("nu_column");
  if (cfg.has("nu_exponent")) cfg.get_real("nu_exponent");
  c.seed = static_cast<std::uint64_t>(cfg.get_int("seed", static_cast<std::int64_t>(c.seed)));
  cfg.reject_unknown_keys();
  return c;
}

// Canonical key=value echo of the effective simulate configuration; hashing
// this ties every output to the exact settings that produced it.
inline KeyValueConfig effective_sim_config(const SimConfig& c) {
  KeyValueConfig out;
  out.set("model", to_string(c.model_id));
  if (c.model_id == PopulationModel::External) {
    out.set("population_csv", c.population_csv);
    out.set("population_response_column", c.population_response);
  }
  out.set("n_pop", std::to_string(c.n_pop));
  out.set("n_a", std::to_string(c.n_a));
  std::string mults;
  for (auto m : c.n_b_multipliers) {
    if (!mults.empty()) mults += ',';
    mults += std::to_string(m);
  }
  out.set("n_b_multipliers", mults);
  std::string mechs;
  for (auto m : c.mechanisms) {
    if (!mechs.empty()) mechs += ',';
    mechs += to_string(m);
  }
  out.set("mechanisms", mechs);
  std::string pcts;
  for (double a : c.percentiles) {
    if (!pcts.empty()) pcts += ',';
    pcts += format_double(a);
  }
  out.set("percentiles", pcts);
  out.set("n_sim", std::to_string(c.n_sim));
  std::string ests;
  for (auto e : c.estimators) {
    if (!ests.empty()) ests += ',';
    ests += to_string(e);
  }
  out.set("estimators", ests);
  std::string vms;
  for (auto m : c.variance_methods) {
    if (!vms.empty()) vms += ',';
    vms += to_string(m);
  }
  if (!vms.empty()) out.set("variance_methods", vms);
  out.set("bootstrap_l", std::to_string(c.bootstrap_l));
  out.set("replicate_weight_method", to_string(c.weight_method));
  out.set("gamma", format_double(c.gamma));
  out.set("upper_frac", format_double(c.upper_frac));
  if (c.nu.kind == VarianceFunction::Kind::PowerColumn) {
    out.set("nu", "power");
    out.set("nu_column", std::to_string(c.nu.column));
    out.set("nu_exponent", format_double(c.nu.exponent));
  } else {
    out.set("nu", "constant");
  }
  out.set("seed", std::to_string(c.seed));
  return out;
}

inline std::map<std::string, std::string> report_metadata(
    std::uint64_t seed, const std::string& config_hash) {
  return {{"config_hash", config_hash},
          {"schema_version", kSchemaVersion},
          {"seed", std::to_string(seed)}};
}

inline CsvTable sim_report_to_csv(const SimReport& r,
                                  const std::map<std::string, std::string>& meta) {
  CsvTable t;
  t.metadata = meta;
  t.header = {"mechanism", "n_b", "estimator", "alpha", "method", "metric",
              "value"};
  auto push = [&](const std::string& mech, std::int64_t n_b,
                  const std::string& est, const std::string& alpha,
                  const std::string& method, const std::string& metric,
                  const std::string& value) {
    t.rows.push_back({mech, std::to_string(n_b), est, alpha, method, metric,
                      value});
  };
  const auto& cfg = r.config;
  for (const auto& s : r.scenarios) {
    const std::string mech = to_string(s.mechanism);
    for (std::size_t k = 0; k < cfg.percentiles.size(); ++k) {
      const std::string alpha = format_double(cfg.percentiles[k]);
      push(mech, s.n_b, "", alpha, "", "quantile_truth",
           format_double(r.truth_quantile[k]));
      push(mech, s.n_b, "", alpha, "", "cdf_truth",
           format_double(r.truth_cdf[k]));
    }
    for (std::size_t e = 0; e < cfg.estimators.size(); ++e) {
      const std::string est = to_string(cfg.estimators[e]);
      for (std::size_t k = 0; k < cfg.percentiles.size(); ++k) {
        const std::string alpha = format_double(cfg.percentiles[k]);
        const auto& m = s.estimator_metrics[e][k];
        push(mech, s.n_b, est, alpha, "", "cdf_mean", format_cell(m.cdf_mean));
        push(mech, s.n_b, est, alpha, "", "cdf_mse", format_cell(m.cdf_mse));
        push(mech, s.n_b, est, alpha, "", "cdf_var_mc",
             format_cell(m.cdf_var_mc));
        push(mech, s.n_b, est, alpha, "", "cdf_rmser",
             format_cell(m.cdf_rmser));
        push(mech, s.n_b, est, alpha, "", "quantile_mean",
             format_cell(m.quantile_mean));
        push(mech, s.n_b, est, alpha, "", "quantile_mse",
             format_cell(m.quantile_mse));
        push(mech, s.n_b, est, alpha, "", "quantile_var_mc",
             format_cell(m.quantile_var_mc));
        push(mech, s.n_b, est, alpha, "", "quantile_rmser",
             format_cell(m.quantile_rmser));
        push(mech, s.n_b, est, alpha, "", "quantile_absent_count",
             std::to_string(m.quantile_absent));
      }
    }
    for (std::size_t v = 0; v < cfg.variance_methods.size(); ++v) {
      const std::string method = to_string(cfg.variance_methods[v]);
      for (std::size_t k = 0; k < cfg.percentiles.size(); ++k) {
        const std::string alpha = format_double(cfg.percentiles[k]);
        const auto& m = s.variance_metrics[v][k];
        push(mech, s.n_b, "residual", alpha, method, "cdf_coverage_pct",
             format_cell(m.cdf_coverage_pct));
        push(mech, s.n_b, "residual", alpha, method, "cdf_ci_length",
             format_cell(m.cdf_ci_length));
        push(mech, s.n_b, "residual", alpha, method, "cdf_var_mean",
             format_cell(m.cdf_var_mean));
        push(mech, s.n_b, "residual", alpha, method, "cdf_var_mc",
             format_cell(m.cdf_var_mc));
        push(mech, s.n_b, "residual", alpha, method, "cdf_var_rb_pct",
             format_cell(m.cdf_rb_pct));
        push(mech, s.n_b, "residual", alpha, method, "quantile_coverage_pct",
             format_cell(m.quantile_coverage_pct));
        push(mech, s.n_b, "residual", alpha, method, "quantile_ci_length",
             format_cell(m.quantile_ci_length));
        push(mech, s.n_b, "residual", alpha, method, "quantile_var_mean",
             format_cell(m.quantile_var_mean));
        push(mech, s.n_b, "residual", alpha, method, "quantile_var_mc",
             format_cell(m.quantile_var_mc));
        push(mech, s.n_b, "residual", alpha, method, "quantile_var_rb_pct",
             format_cell(m.quantile_rb_pct));
        push(mech, s.n_b, "residual", alpha, method, "quantile_ci_count",
             std::to_string(m.quantile_ci_count));
      }
    }
    push(mech, s.n_b, "", "", "", "replicate_failures",
         std::to_string(s.replicate_failures));
  }
  return t;
}

inline nlohmann::json sim_report_to_json(
    const SimReport& r, const std::map<std::string, std::string>& meta,
    const KeyValueConfig& effective) {
  nlohmann::json j;
  for (const auto& [k, v] : meta) j[k] = v;
  j["command"] = "simulate";
  {
    nlohmann::json cfg;
    std::istringstream in(effective.canonical());
    std::string line;
    while (std::getline(in, line)) {
      const auto eq = line.find('=');
      if (eq != std::string::npos) cfg[line.substr(0, eq)] = line.substr(eq + 1);
    }
    j["config"] = cfg;
  }
  j["log_clamp_count"] = r.log_clamp_count;
  nlohmann::json truths = nlohmann::json::array();
  for (std::size_t k = 0; k < r.config.percentiles.size(); ++k) {
    truths.push_back({{"alpha", r.config.percentiles[k]},
                      {"quantile", r.truth_quantile[k]},
                      {"cdf", r.truth_cdf[k]}});
  }
  j["truth"] = truths;
  nlohmann::json scens = nlohmann::json::array();
  for (const auto& s : r.scenarios) {
    nlohmann::json js;
    js["mechanism"] = to_string(s.mechanism);
    js["n_b"] = s.n_b;
    js["replicate_failures"] = s.replicate_failures;
    nlohmann::json ests = nlohmann::json::array();
    for (std::size_t e = 0; e < r.config.estimators.size(); ++e) {
      for (std::size_t k = 0; k < r.config.percentiles.size(); ++k) {
        const auto& m = s.estimator_metrics[e][k];
        ests.push_back({{"estimator", to_string(r.config.estimators[e])},
                        {"alpha", r.config.percentiles[k]},
                        {"cdf_mean", json_number(m.cdf_mean)},
                        {"cdf_mse", json_number(m.cdf_mse)},
                        {"cdf_var_mc", json_number(m.cdf_var_mc)},
                        {"cdf_rmser", json_number(m.cdf_rmser)},
                        {"quantile_mean", json_number(m.quantile_mean)},
                        {"quantile_mse", json_number(m.quantile_mse)},
                        {"quantile_var_mc", json_number(m.quantile_var_mc)},
                        {"quantile_rmser", json_number(m.quantile_rmser)},
                        {"quantile_absent_count", m.quantile_absent}});
      }
    }
    js["estimators"] = ests;
    nlohmann::json vars = nlohmann::json::array();
    for (std::size_t v = 0; v < r.config.variance_methods.size(); ++v) {
      for (std::size_t k = 0; k < r.config.percentiles.size(); ++k) {
        const auto& m = s.variance_metrics[v][k];
        vars.push_back(
            {{"method", to_string(r.config.variance_methods[v])},
             {"alpha", r.config.percentiles[k]},
             {"cdf_coverage_pct", json_number(m.cdf_coverage_pct)},
             {"cdf_ci_length", json_number(m.cdf_ci_length)},
             {"cdf_var_mean", json_number(m.cdf_var_mean)},
             {"cdf_var_mc", json_number(m.cdf_var_mc)},
             {"cdf_var_rb_pct", json_number(m.cdf_rb_pct)},
             {"quantile_coverage_pct", json_number(m.quantile_coverage_pct)},
             {"quantile_ci_length", json_number(m.quantile_ci_length)},
             {"quantile_var_mean", json_number(m.quantile_var_mean)},
             {"quantile_var_mc", json_number(m.quantile_var_mc)},
             {"quantile_var_rb_pct", json_number(m.quantile_rb_pct)},
             {"quantile_ci_count", m.quantile_ci_count}});
      }
    }
    js["variance"] = vars;
    scens.push_back(js);
  }
  j["scenarios"] = scens;
  return j;
}

inline void write_text_file(const std::filesystem::path& path,
                            const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open output file: " + path.string());
  out << content;
}

}  // namespace cli_detail

// ---------------------------------------------------------------------------
// estimate / variance: CSV-backed workflow
// ---------------------------------------------------------------------------

struct LoadedSamples {
  ProbabilitySample a;
  ConvenienceSample b;
  std::vector<std::string> covariates;  // shared column order (from B)
  bool has_reference = false;           // A carried the response column
};

inline LoadedSamples load_samples(const std::string& prob_csv,
                                  const std::string& conv_csv,
                                  const std::string& weight_column,
                                  const std::string& response_column,
                                  double pop_size, SampleDesign design) {
  const CsvTable bt = read_csv_file(conv_csv);
  const int b_resp = bt.column(response_column);
  if (b_resp < 0) {
    throw ConfigError("convenience CSV lacks response column '" +
                      response_column + "'");
  }
  LoadedSamples out;
  for (std::size_t c = 0; c < bt.header.size(); ++c) {
    if (static_cast<int>(c) != b_resp) out.covariates.push_back(bt.header[c]);
  }
  if (out.covariates.empty()) {
    throw ConfigError("convenience CSV has no covariate columns");
  }

  const CsvTable at = read_csv_file(prob_csv);
  const int a_weight = at.column(weight_column);
  if (a_weight < 0) {
    throw ConfigError("probability CSV lacks weight column '" + weight_column +
                      "'");
  }
  const int a_resp = at.column(response_column);
  std::set<std::string> a_cov;
  for (std::size_t c = 0; c < at.header.size(); ++c) {
    if (static_cast<int>(c) == a_weight || static_cast<int>(c) == a_resp) continue;
    a_cov.insert(at.header[c]);
  }
  std::set<std::string> b_cov(out.covariates.begin(), out.covariates.end());
  if (a_cov != b_cov) {
    std::string only_a, only_b;
    for (const auto& c : a_cov) {
      if (!b_cov.count(c)) only_a += (only_a.empty() ? "" : ", ") + c;
    }
    for (const auto& c : b_cov) {
      if (!a_cov.count(c)) only_b += (only_b.empty() ? "" : ", ") + c;
    }
    throw ConfigError("covariate columns differ between files; only in "
                      "probability CSV: [" + only_a +
                      "], only in convenience CSV: [" + only_b + "]");
  }

  const auto nb = static_cast<Eigen::Index>(bt.rows.size());
  out.b.mechanism = Mechanism::External;
  out.b.x.resize(nb, static_cast<Eigen::Index>(out.covariates.size()));
  out.b.y.resize(nb);
  for (Eigen::Index r = 0; r < nb; ++r) {
    const auto& row = bt.rows[static_cast<std::size_t>(r)];
    out.b.y(r) = parse_double(row[static_cast<std::size_t>(b_resp)]);
    Eigen::Index k = 0;
    for (std::size_t c = 0; c < bt.header.size(); ++c) {
      if (static_cast<int>(c) == b_resp) continue;
      out.b.x(r, k++) = parse_double(row[c]);
    }
  }

  const auto na = static_cast<Eigen::Index>(at.rows.size());
  out.a.design = design;
  out.a.pop_size = pop_size;
  out.a.x.resize(na, static_cast<Eigen::Index>(out.covariates.size()));
  out.a.weight.resize(static_cast<std::size_t>(na));
  out.has_reference = a_resp >= 0;
  if (out.has_reference) out.a.y.resize(na);
  std::vector<int> a_col_for;  // covariate order follows B
  for (const auto& name : out.covariates) a_col_for.push_back(at.column(name));
  for (Eigen::Index r = 0; r < na; ++r) {
    const auto& row = at.rows[static_cast<std::size_t>(r)];
    out.a.weight[static_cast<std::size_t>(r)] =
        parse_double(row[static_cast<std::size_t>(a_weight)]);
    if (out.has_reference) {
      out.a.y(r) = parse_double(row[static_cast<std::size_t>(a_resp)]);
    }
    for (std::size_t k = 0; k < a_col_for.size(); ++k) {
      out.a.x(r, static_cast<Eigen::Index>(k)) =
          parse_double(row[static_cast<std::size_t>(a_col_for[k])]);
    }
  }
  out.a.validate();
  out.b.validate();
  return out;
}

inline double percent_absolute_relative_bias(double estimate, double reference) {
  if (reference == 0.0) {
    throw UndefinedRatioError("reference estimate is zero");
  }
  return std::fabs((estimate - reference) / reference) * 100.0;
}

inline CsvTable curves_to_csv(const std::vector<CdfCurve>& curves,
                              const std::map<std::string, std::string>& meta) {
  CsvTable t;
  t.metadata = meta;
  t.header = {"estimator", "t", "value"};
  for (const auto& c : curves) {
    for (std::size_t i = 0; i < c.grid.size(); ++i) {
      t.rows.push_back({to_string(c.estimator_tag), format_double(c.grid[i]),
                        format_double(c.value[i])});
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// Subcommand drivers. Each returns the process exit code and writes its
// report files under manifest.out_dir.
// ---------------------------------------------------------------------------

inline int cmd_simulate(const RunManifest& manifest) {
  KeyValueConfig file_cfg;
  if (!manifest.config_path.empty()) {
    file_cfg = KeyValueConfig::parse_file(manifest.config_path);
  } else if (manifest.preset.empty()) {
    throw ConfigError("simulate needs --config or --preset");
  }
  SimConfig cfg = cli_detail::parse_sim_config(file_cfg, manifest.preset);
  if (manifest.seed_override) cfg.seed = *manifest.seed_override;
  cfg.threads = manifest.threads;
  cfg.validate();

  const KeyValueConfig effective = cli_detail::effective_sim_config(cfg);
  const auto meta = cli_detail::report_metadata(cfg.seed, effective.hash_hex());

  const SimReport report = run_monte_carlo(cfg);

  std::filesystem::create_directories(manifest.out_dir);
  const auto out = std::filesystem::path(manifest.out_dir);
  write_csv_file((out / "sim_report.csv").string(),
                 cli_detail::sim_report_to_csv(report, meta));
  cli_detail::write_text_file(
      out / "sim_report.json",
      cli_detail::sim_report_to_json(report, meta, effective).dump(2) + "\n");
  return 0;
}

namespace cli_detail {

struct EstimateRow {
  double alpha = 0.0;
  std::string estimator;
  double t_star = std::numeric_limits<double>::quiet_NaN();
  double cdf_value = std::numeric_limits<double>::quiet_NaN();
  double quantile_value = std::numeric_limits<double>::quiet_NaN();
  double arb_cdf = std::numeric_limits<double>::quiet_NaN();
  double arb_quantile = std::numeric_limits<double>::quiet_NaN();
  double cdf_ci_lower = std::numeric_limits<double>::quiet_NaN();
  double cdf_ci_upper = std::numeric_limits<double>::quiet_NaN();
  double cdf_var_boot = std::numeric_limits<double>::quiet_NaN();
  double quantile_ci_lower = std::numeric_limits<double>::quiet_NaN();
  double quantile_ci_upper = std::numeric_limits<double>::quiet_NaN();
  double quantile_var_boot = std::numeric_limits<double>::quiet_NaN();
  bool quantile_absent = false;
  bool quantile_fallback = false;
  bool interval_saturated = false;
};

inline nlohmann::json model_to_json(
    const FittedModel& model, const std::map<std::string, std::string>& meta) {
  nlohmann::json j;
  for (const auto& [k, v] : meta) j[k] = v;
  nlohmann::json beta = nlohmann::json::array();
  for (Eigen::Index i = 0; i < model.beta.size(); ++i) beta.push_back(model.beta(i));
  j["coefficients"] = beta;
  j["columns"] = model.column_names;
  if (model.nu.kind == VarianceFunction::Kind::PowerColumn) {
    j["nu"] = {{"kind", "power"},
               {"column", model.nu.column},
               {"exponent", model.nu.exponent}};
  } else {
    j["nu"] = {{"kind", "constant"}};
  }
  j["residuals_sorted"] = model.residuals_sorted;
  return j;
}

}  // namespace cli_detail

inline int cmd_estimate(const RunManifest& manifest) {
  if (manifest.config_path.empty()) {
    throw ConfigError("estimate needs --config");
  }
  KeyValueConfig cfg = KeyValueConfig::parse_file(manifest.config_path);
  const auto cfg_dir =
      std::filesystem::path(manifest.config_path).parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path.string() : (cfg_dir / path).string();
  };
  const std::string prob_csv = resolve(cfg.get_string("probability_csv"));
  const std::string conv_csv = resolve(cfg.get_string("convenience_csv"));
  const double pop_size = cfg.get_real("pop_size");
  const std::string weight_column = cfg.get_string("weight_column", "weight");
  const std::string response_column = cfg.get_string("response_column", "y");
  const std::vector<double> percentiles =
      cfg.get_real_list("percentiles", ".01,.10,.25,.50,.75,.90,.99");
  const auto bootstrap_l = cfg.get_int("bootstrap_l", 750);
  const double gamma = cfg.get_real("gamma", 0.90);
  auto seed = static_cast<std::uint64_t>(cfg.get_int("seed", 20240801));
  if (manifest.seed_override) seed = *manifest.seed_override;
  const std::string design_name = cfg.get_string("design", "external");
  if (design_name != "srs" && design_name != "external") {
    throw ConfigError("key 'design': expected srs or external");
  }
  const VarianceFunction nu = cli_detail::parse_nu(cfg);
  if (cfg.has("nu_column")) cfg.get_int("nu_column");
  if (cfg.has("nu_exponent")) cfg.get_real("nu_exponent");
  ReplicateWeightMethod wm = ReplicateWeightMethod::RaoWu;
  if (cfg.has("replicate_weight_method")) {
    wm = parse_weight_method(cfg.get_string("replicate_weight_method"));
  }
  cfg.reject_unknown_keys();
  for (double a : percentiles) {
    if (!(a > 0 && a < 1)) throw ConfigError("percentiles must lie in (0,1)");
  }

  const LoadedSamples data = load_samples(
      prob_csv, conv_csv, weight_column, response_column, pop_size,
      design_name == "srs" ? SampleDesign::SrsWor : SampleDesign::ExternalWeights);

  // Echo the effective settings into the report hash.
  KeyValueConfig effective;
  effective.set("command", "estimate");
  effective.set("probability_csv", prob_csv);
  effective.set("convenience_csv", conv_csv);
  effective.set("pop_size", format_double(pop_size));
  effective.set("weight_column", weight_column);
  effective.set("response_column", response_column);
  {
    std::string pcts;
    for (double a : percentiles) {
      if (!pcts.empty()) pcts += ',';
      pcts += format_double(a);
    }
    effective.set("percentiles", pcts);
  }
  effective.set("bootstrap_l", std::to_string(bootstrap_l));
  effective.set("replicate_weight_method", to_string(wm));
  effective.set("gamma", format_double(gamma));
  effective.set("seed", std::to_string(seed));
  effective.set("design", design_name);
  effective.set("fallback_naive_quantile",
                manifest.fallback_naive_quantile ? "true" : "false");
  const auto meta = cli_detail::report_metadata(seed, effective.hash_hex());

  const FittedModel model =
      fit_linear(data.b.x, data.b.y, nu, data.covariates);
  const ResidualCdf rc(data.a, model);
  const CdfCurve naive_curve = curve_naive(data.b);
  const CdfCurve plugin_curve = curve_plugin(data.a, model);
  const CdfCurve residual_curve = curve_residual(data.a, model);
  std::optional<CdfCurve> ht_curve;
  if (data.has_reference) ht_curve = curve_ht(data.a);

  // Evaluation points: the reference quantile when A carries the response,
  // otherwise the residual estimator's own quantile.
  std::vector<double> t_stars(percentiles.size(),
                              std::numeric_limits<double>::quiet_NaN());
  for (std::size_t k = 0; k < percentiles.size(); ++k) {
    if (ht_curve) {
      if (const auto q = invert_quantile(*ht_curve, percentiles[k])) {
        t_stars[k] = *q;
        continue;
      }
    }
    if (const auto inv = rc.quantile(percentiles[k])) t_stars[k] = inv->t;
  }

  BootstrapOptions bopt;
  bopt.replicates = bootstrap_l;
  bopt.gamma = gamma;
  bopt.weight_method = wm;
  bopt.threads = manifest.threads;
  bopt.nu = nu;
  std::vector<double> boot_ts;
  std::vector<std::size_t> boot_t_slot;
  for (std::size_t k = 0; k < t_stars.size(); ++k) {
    if (!std::isnan(t_stars[k])) {
      boot_ts.push_back(t_stars[k]);
      boot_t_slot.push_back(k);
    }
  }
  const BootstrapResult boot = run_bootstrap_multi(
      data.a, data.b, boot_ts, percentiles, bopt, derive_seed(seed, "boot"));

  const double z = z_two_sided(gamma);
  std::vector<cli_detail::EstimateRow> rows;
  for (std::size_t k = 0; k < percentiles.size(); ++k) {
    const double alpha = percentiles[k];
    const double t_star = t_stars[k];
    double ref_cdf = std::numeric_limits<double>::quiet_NaN();
    double ref_q = std::numeric_limits<double>::quiet_NaN();
    if (ht_curve && !std::isnan(t_star)) {
      // t_star is an HT grid point, so this lookup is exact
      ref_cdf = cdf_ht(data.a, t_star);
      if (const auto q = invert_quantile(*ht_curve, alpha)) ref_q = *q;
    }
    auto make_row = [&](EstimatorKind kind, const CdfCurve* curve) {
      cli_detail::EstimateRow row;
      row.alpha = alpha;
      row.estimator = to_string(kind);
      row.t_star = t_star;
      if (!std::isnan(t_star)) {
        switch (kind) {
          case EstimatorKind::HT: row.cdf_value = ref_cdf; break;
          case EstimatorKind::Naive: row.cdf_value = cdf_naive(data.b, t_star); break;
          case EstimatorKind::PlugIn:
            row.cdf_value = cdf_plugin(data.a, model, t_star);
            break;
          case EstimatorKind::Residual: row.cdf_value = rc.cdf(t_star); break;
        }
      }
      std::optional<double> quant;
      if (kind == EstimatorKind::Residual) {
        if (const auto inv = rc.quantile(alpha)) quant = inv->t;
      } else if (curve) {
        quant = invert_quantile(*curve, alpha);
      }
      if (quant) {
        row.quantile_value = *quant;
      } else {
        row.quantile_absent = true;
        if (manifest.fallback_naive_quantile) {
          if (const auto fb = invert_quantile(naive_curve, alpha)) {
            row.quantile_value = *fb;
            row.quantile_fallback = true;
          }
        }
      }
      if (!std::isnan(ref_cdf) && ref_cdf != 0.0 && !std::isnan(row.cdf_value) &&
          kind != EstimatorKind::HT) {
        row.arb_cdf = percent_absolute_relative_bias(row.cdf_value, ref_cdf);
      }
      if (!std::isnan(ref_q) && ref_q != 0.0 && !std::isnan(row.quantile_value) &&
          kind != EstimatorKind::HT) {
        row.arb_quantile =
            percent_absolute_relative_bias(row.quantile_value, ref_q);
      }
      return row;
    };
    if (ht_curve) {
      rows.push_back(make_row(EstimatorKind::HT, &*ht_curve));
    }
    rows.push_back(make_row(EstimatorKind::Naive, &naive_curve));
    rows.push_back(make_row(EstimatorKind::PlugIn, &plugin_curve));
    auto res = make_row(EstimatorKind::Residual, &residual_curve);
    // bootstrap CI for the residual estimator
    for (std::size_t bk = 0; bk < boot_t_slot.size(); ++bk) {
      if (boot_t_slot[bk] != k) continue;
      const auto& c = boot.cdf[bk];
      res.cdf_var_boot = c.variance;
      res.cdf_ci_lower = c.point - z * std::sqrt(c.variance);
      res.cdf_ci_upper = c.point + z * std::sqrt(c.variance);
    }
    const auto& q = boot.quantile[k];
    if (!q.absent) {
      res.quantile_var_boot = q.variance;
      res.quantile_ci_lower = q.interval.lower;
      res.quantile_ci_upper = q.interval.upper;
      res.interval_saturated =
          q.interval.lower_saturated || q.interval.upper_saturated;
    }
    rows.push_back(res);
  }

  CsvTable t;
  t.metadata = meta;
  t.header = {"alpha",         "estimator",      "t_star",
              "cdf_value",     "arb_cdf_pct",    "cdf_ci_lower",
              "cdf_ci_upper",  "cdf_var_boot",   "quantile_value",
              "arb_quantile_pct", "quantile_ci_lower", "quantile_ci_upper",
              "quantile_var_boot", "quantile_absent", "quantile_fallback",
              "interval_saturated"};
  for (const auto& row : rows) {
    t.rows.push_back({format_double(row.alpha), row.estimator,
                      cli_detail::format_cell(row.t_star),
                      cli_detail::format_cell(row.cdf_value),
                      cli_detail::format_cell(row.arb_cdf),
                      cli_detail::format_cell(row.cdf_ci_lower),
                      cli_detail::format_cell(row.cdf_ci_upper),
                      cli_detail::format_cell(row.cdf_var_boot),
                      cli_detail::format_cell(row.quantile_value),
                      cli_detail::format_cell(row.arb_quantile),
                      cli_detail::format_cell(row.quantile_ci_lower),
                      cli_detail::format_cell(row.quantile_ci_upper),
                      cli_detail::format_cell(row.quantile_var_boot),
                      row.quantile_absent ? "true" : "false",
                      row.quantile_fallback ? "true" : "false",
                      row.interval_saturated ? "true" : "false"});
  }

  nlohmann::json j;
  for (const auto& [k, v] : meta) j[k] = v;
  j["command"] = "estimate";
  j["has_reference"] = data.has_reference;
  j["n_a"] = data.a.size();
  j["n_b"] = data.b.size();
  j["pop_size"] = pop_size;
  j["bootstrap_dropped"] = boot.dropped;
  nlohmann::json jrows = nlohmann::json::array();
  for (const auto& row : rows) {
    jrows.push_back({{"alpha", row.alpha},
                     {"estimator", row.estimator},
                     {"t_star", cli_detail::json_number(row.t_star)},
                     {"cdf_value", cli_detail::json_number(row.cdf_value)},
                     {"arb_cdf_pct", cli_detail::json_number(row.arb_cdf)},
                     {"cdf_ci_lower", cli_detail::json_number(row.cdf_ci_lower)},
                     {"cdf_ci_upper", cli_detail::json_number(row.cdf_ci_upper)},
                     {"cdf_var_boot", cli_detail::json_number(row.cdf_var_boot)},
                     {"quantile_value", cli_detail::json_number(row.quantile_value)},
                     {"arb_quantile_pct", cli_detail::json_number(row.arb_quantile)},
                     {"quantile_ci_lower",
                      cli_detail::json_number(row.quantile_ci_lower)},
                     {"quantile_ci_upper",
                      cli_detail::json_number(row.quantile_ci_upper)},
                     {"quantile_var_boot",
                      cli_detail::json_number(row.quantile_var_boot)},
                     {"quantile_absent", row.quantile_absent},
                     {"quantile_fallback", row.quantile_fallback},
                     {"interval_saturated", row.interval_saturated}});
  }
  j["estimates"] = jrows;

  std::filesystem::create_directories(manifest.out_dir);
  const auto out = std::filesystem::path(manifest.out_dir);
  write_csv_file((out / "estimate_report.csv").string(), t);
  cli_detail::write_text_file(out / "estimate_report.json", j.dump(2) + "\n");
  std::vector<CdfCurve> curves = {naive_curve, plugin_curve, residual_curve};
  if (ht_curve) curves.insert(curves.begin(), *ht_curve);
  write_csv_file((out / "curves.csv").string(), curves_to_csv(curves, meta));
  cli_detail::write_text_file(
      out / "model.json", cli_detail::model_to_json(model, meta).dump(2) + "\n");
  return 0;
}

inline int cmd_variance(const RunManifest& manifest) {
  if (manifest.config_path.empty()) {
    throw ConfigError("variance needs --config");
  }
  KeyValueConfig cfg = KeyValueConfig::parse_file(manifest.config_path);
  const auto cfg_dir =
      std::filesystem::path(manifest.config_path).parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path.string() : (cfg_dir / path).string();
  };
  const std::string prob_csv = resolve(cfg.get_string("probability_csv"));
  const std::string conv_csv = resolve(cfg.get_string("convenience_csv"));
  const double pop_size = cfg.get_real("pop_size");
  const std::string weight_column = cfg.get_string("weight_column", "weight");
  const std::string response_column = cfg.get_string("response_column", "y");
  const std::vector<double> percentiles =
      cfg.get_real_list("percentiles", ".01,.10,.25,.50,.75,.90,.99");
  std::vector<double> t_values;
  if (cfg.has("t_values")) t_values = cfg.get_real_list("t_values", "");
  const auto bootstrap_l = cfg.get_int("bootstrap_l", 750);
  const double gamma = cfg.get_real("gamma", 0.90);
  auto seed = static_cast<std::uint64_t>(cfg.get_int("seed", 20240801));
  if (manifest.seed_override) seed = *manifest.seed_override;
  const std::string design_name = cfg.get_string("design", "external");
  if (design_name != "srs" && design_name != "external") {
    throw ConfigError("key 'design': expected srs or external");
  }
  std::string joint_csv = cfg.get_string("joint_inclusion_csv", "");
  if (!joint_csv.empty()) joint_csv = resolve(joint_csv);
  const std::string methods_spec = cfg.get_string("variance_methods", "auto");
  const VarianceFunction nu = cli_detail::parse_nu(cfg);
  if (cfg.has("nu_column")) cfg.get_int("nu_column");
  if (cfg.has("nu_exponent")) cfg.get_real("nu_exponent");
  ReplicateWeightMethod wm = ReplicateWeightMethod::RaoWu;
  if (cfg.has("replicate_weight_method")) {
    wm = parse_weight_method(cfg.get_string("replicate_weight_method"));
  }
  cfg.reject_unknown_keys();

  const LoadedSamples data = load_samples(
      prob_csv, conv_csv, weight_column, response_column, pop_size,
      design_name == "srs" ? SampleDesign::SrsWor : SampleDesign::ExternalWeights);

  std::optional<JointInclusion> joint;
  if (design_name == "srs") {
    joint = joint_inclusion(data.a);
  } else if (!joint_csv.empty()) {
    const CsvTable jt = read_csv_file(joint_csv);
    const auto n = static_cast<Eigen::Index>(jt.rows.size());
    if (static_cast<Eigen::Index>(jt.header.size()) != n || n != data.a.size()) {
      throw ConfigError(
          "joint inclusion CSV must be square and match sample A's rows");
    }
    Eigen::MatrixXd pi(n, n);
    for (Eigen::Index r = 0; r < n; ++r) {
      for (Eigen::Index c = 0; c < n; ++c) {
        pi(r, c) = parse_double(jt.rows[static_cast<std::size_t>(r)]
                                       [static_cast<std::size_t>(c)]);
      }
    }
    joint = JointInclusion::explicit_matrix(std::move(pi));
  }

  bool want_asymp = false;
  bool want_boot = false;
  if (methods_spec == "auto") {
    want_asymp = joint.has_value();
    want_boot = true;
  } else {
    KeyValueConfig dummy;  // reuse list parsing
    dummy.set("variance_methods", methods_spec);
    for (const auto& s : dummy.get_list("variance_methods")) {
      const VarianceMethod m = parse_variance_method(s);
      if (m == VarianceMethod::Bootstrap) {
        want_boot = true;
      } else {
        want_asymp = true;
      }
    }
    if (want_asymp && !joint) {
      throw ConfigError(
          "asymptotic variance requested, but second-order inclusion "
          "probabilities are unknown (declare design = srs or supply "
          "joint_inclusion_csv)");
    }
  }

  KeyValueConfig effective;
  effective.set("command", "variance");
  effective.set("probability_csv", prob_csv);
  effective.set("convenience_csv", conv_csv);
  effective.set("pop_size", format_double(pop_size));
  effective.set("design", design_name);
  effective.set("bootstrap_l", std::to_string(bootstrap_l));
  effective.set("replicate_weight_method", to_string(wm));
  effective.set("gamma", format_double(gamma));
  effective.set("seed", std::to_string(seed));
  const auto meta = cli_detail::report_metadata(seed, effective.hash_hex());

  const FittedModel model =
      fit_linear(data.b.x, data.b.y, nu, data.covariates);
  const ResidualCdf rc(data.a, model);

  // CDF targets: explicit t values, or the residual quantiles when absent.
  std::vector<double> ts = t_values;
  std::vector<std::string> t_source(ts.size(), "config");
  if (ts.empty()) {
    for (double alpha : percentiles) {
      if (const auto inv = rc.quantile(alpha)) {
        ts.push_back(inv->t);
        t_source.push_back("quantile " + format_double(alpha));
      }
    }
  }

  CsvTable t;
  t.metadata = meta;
  t.header = {"target", "value", "method", "v1", "v2", "total",
              "replicates_used", "ci_lower", "ci_upper", "note"};
  auto push = [&](const std::string& target, double value,
                  const VarianceReport& r, double lo, double hi,
                  const std::string& note) {
    t.rows.push_back({target, format_double(value), to_string(r.method),
                      cli_detail::format_cell(r.v1),
                      cli_detail::format_cell(r.v2), format_double(r.total),
                      std::to_string(r.replicates_used),
                      cli_detail::format_cell(lo), cli_detail::format_cell(hi),
                      note});
  };
  const double nan = std::numeric_limits<double>::quiet_NaN();

  if (want_asymp) {
    for (std::size_t i = 0; i < ts.size(); ++i) {
      VarianceReport r =
          data.a.design == SampleDesign::SrsWor && joint->is_srs()
              ? var_cdf_srs(data.a, model, ts[i])
              : var_cdf_asymptotic(data.a, model, ts[i], *joint);
      push("cdf_at_t", ts[i], r, nan, nan, t_source[i]);
    }
    for (double alpha : percentiles) {
      const auto inv = rc.quantile(alpha);
      if (!inv) {
        VarianceReport r;
        r.method = joint->is_srs() ? VarianceMethod::AsympSRS
                                   : VarianceMethod::AsympGeneral;
        r.total = nan;
        push("quantile_at_alpha", alpha, r, nan, nan, "quantile absent");
        continue;
      }
      VarianceReport base =
          data.a.design == SampleDesign::SrsWor && joint->is_srs()
              ? var_cdf_srs(data.a, model, inv->t)
              : var_cdf_asymptotic(data.a, model, inv->t, *joint);
      const auto w =
          woodruff_interval(rc, alpha, std::sqrt(base.total), gamma);
      VarianceReport r;
      r.method = base.method;
      r.v1 = base.v1;
      r.v2 = base.v2;
      r.total = var_quantile_woodruff(w.lower, w.upper, gamma);
      push("quantile_at_alpha", alpha, r, w.lower, w.upper,
           (w.lower_saturated || w.upper_saturated) ? "interval saturated"
                                                    : "");
    }
  }
  std::int64_t boot_dropped = 0;
  if (want_boot) {
    BootstrapOptions bopt;
    bopt.replicates = bootstrap_l;
    bopt.gamma = gamma;
    bopt.weight_method = wm;
    bopt.threads = manifest.threads;
    bopt.nu = nu;
    const BootstrapResult boot = run_bootstrap_multi(
        data.a, data.b, ts, percentiles, bopt, derive_seed(seed, "boot"));
    boot_dropped = boot.dropped;
    const double z = z_two_sided(gamma);
    for (std::size_t i = 0; i < ts.size(); ++i) {
      const auto& c = boot.cdf[i];
      VarianceReport r;
      r.method = VarianceMethod::Bootstrap;
      r.total = c.variance;
      r.replicates_used = c.replicates_used;
      push("cdf_at_t", c.t, r, c.point - z * std::sqrt(c.variance),
           c.point + z * std::sqrt(c.variance), t_source[i]);
    }
    for (const auto& q : boot.quantile) {
      VarianceReport r;
      r.method = VarianceMethod::Bootstrap;
      if (q.absent) {
        r.total = nan;
        push("quantile_at_alpha", q.alpha, r, nan, nan, "quantile absent");
        continue;
      }
      r.total = q.variance;
      r.replicates_used = q.replicates_used;
      push("quantile_at_alpha", q.alpha, r, q.interval.lower,
           q.interval.upper,
           (q.interval.lower_saturated || q.interval.upper_saturated)
               ? "interval saturated"
               : "");
    }
  }

  nlohmann::json j;
  for (const auto& [k, v] : meta) j[k] = v;
  j["command"] = "variance";
  j["methods"] = nlohmann::json::array();
  if (want_asymp) {
    j["methods"].push_back(joint->is_srs() ? "asymp_srs" : "asymp_general");
  }
  if (want_boot) j["methods"].push_back("bootstrap");
  j["bootstrap_dropped"] = boot_dropped;
  nlohmann::json jrows = nlohmann::json::array();
  for (const auto& row : t.rows) {
    nlohmann::json jr;
    for (std::size_t c = 0; c < t.header.size(); ++c) jr[t.header[c]] = row[c];
    jrows.push_back(jr);
  }
  j["rows"] = jrows;

  std::filesystem::create_directories(manifest.out_dir);
  const auto out = std::filesystem::path(manifest.out_dir);
  write_csv_file((out / "variance_report.csv").string(), t);
  cli_detail::write_text_file(out / "variance_report.json", j.dump(2) + "\n");
  return 0;
}

// Dispatch plus exception-to-exit-code mapping; failures emit one JSON error
// object on stdout.
inline int run_command(const RunManifest& manifest) {
  try {
    switch (manifest.command) {
      case RunManifest::Command::Simulate: return cmd_simulate(manifest);
      case RunManifest::Command::Estimate: return cmd_estimate(manifest);
      case RunManifest::Command::Variance: return cmd_variance(manifest);
    }
    return 1;
  } catch (const SimulationError& e) {
    std::cout << nlohmann::json{{"error", {{"type", "simulation"}, {"message", e.what()}}}}.dump() << "\n";
    return 3;
  } catch (const EstimationError& e) {
    std::cout << nlohmann::json{{"error", {{"type", "estimation"}, {"message", e.what()}}}}.dump() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    std::cout << nlohmann::json{{"error", {{"type", "config"}, {"message", e.what()}}}}.dump() << "\n";
    return 2;
  } catch (const ArgumentError& e) {
    std::cout << nlohmann::json{{"error", {{"type", "argument"}, {"message", e.what()}}}}.dump() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cout << nlohmann::json{{"error", {{"type", "validation"}, {"message", e.what()}}}}.dump() << "\n";
    return 2;
  } catch (const SamplingError& e) {
    std::cout << nlohmann::json{{"error", {{"type", "sampling"}, {"message", e.what()}}}}.dump() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cout << nlohmann::json{{"error", {{"type", "internal"}, {"message", e.what()}}}}.dump() << "\n";
    return 1;
  }
}

}  // namespace recdf

#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ipsw/domain.hpp"
#include "ipsw/estimators.hpp"
#include "ipsw/io.hpp"
#include "ipsw/scenarios.hpp"
#include "ipsw/simulate.hpp"
#include "ipsw/theory.hpp"

#ifndef IPSW_VERSION
#define IPSW_VERSION "0.0.0"
#endif

namespace ipsw::cli {
namespace {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- formatting helpers -------------------------------------------------------

Json number(double v) {
  if (std::isfinite(v)) return v;
  return format_double(v);
}

Json number(const std::optional<double>& v) { return v ? number(*v) : Json(nullptr); }

std::string cell(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

std::string cell(double v) { return format_double(v); }

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// UTC, honouring SOURCE_DATE_EPOCH so that manifests can be made reproducible.
std::string timestamp() {
  std::time_t t = std::time(nullptr);
  if (const char* env = std::getenv("SOURCE_DATE_EPOCH")) {
    long long parsed = 0;
    const char* end = env + std::char_traits<char>::length(env);
    if (auto [p, ec] = std::from_chars(env, end, parsed); ec == std::errc{} && p == end) t = static_cast<std::time_t>(parsed);
  }
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::optional<std::size_t> parse_m(const std::string& text) {
  if (text == "inf") return std::nullopt;
  std::size_t v = 0;
  const char* end = text.data() + text.size();
  auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc{} || p != end || v == 0) throw UsageError("--m must be a positive integer or 'inf', got '" + text + "'");
  return v;
}

std::string estimator_names() {
  std::string out;
  for (auto tag : kAllEstimators) out += (out.empty() ? "" : ", ") + std::string(to_string(tag));
  return out;
}

std::vector<EstimatorTag> parse_estimators(const std::vector<std::string>& names) {
  std::vector<EstimatorTag> tags;
  for (const auto& name : names) {
    const auto tag = parse_estimator_tag(name);
    if (!tag) throw UsageError("unknown estimator '" + name + "'; valid: " + estimator_names());
    if (std::find(tags.begin(), tags.end(), *tag) == tags.end()) tags.push_back(*tag);
  }
  return tags;
}

bool is_ipsw(EstimatorTag tag) {
  return tag != EstimatorTag::ht && tag != EstimatorTag::dm && tag != EstimatorTag::ps;
}

// ---- output bookkeeping --------------------------------------------------------

struct Output {
  fs::path dir;
  std::vector<std::string> files;

  void write(const std::string& name, const std::string& content) {
    write_text_file(dir / name, content);
    files.push_back(name);
  }
};

void write_manifest(Output& out, const std::vector<std::string>& argv, const std::string& config_bytes,
                    std::optional<std::uint64_t> seed) {
  Json m;
  m["tool"] = "ipsw";
  m["version"] = IPSW_VERSION;
  m["command_line"] = argv;
  m["config_hash"] = "fnv1a64:" + hex64(fnv1a64(config_bytes));
  m["seed"] = seed ? Json(*seed) : Json(nullptr);
  m["timestamp"] = timestamp();
  m["outputs"] = out.files;
  write_text_file(out.dir / "manifest.json", m.dump(2) + "\n");
}

// ---- arguments ---------------------------------------------------------------

struct Common {
  std::string config;
  std::string out = "ipsw-out";
  std::size_t workers = 0;
  std::uint64_t seed = 0;
};

struct TheoryArgs {
  std::size_t n = 0;
  std::string m = "inf";
  std::vector<std::string> est;
  bool no_exact = false;
};

struct SimulateArgs {
  std::size_t n = 0;
  std::size_t m = 0;
  std::size_t reps = 1000;
  std::vector<std::string> est;
  std::string adjust;
  bool unit_level = false;
};

struct SweepArgs {
  std::vector<std::size_t> n_grid;
  std::optional<std::size_t> fixed_m;
  std::string ratio;
  std::size_t reps = 1000;
  std::vector<std::string> est;
};

struct InflationArgs {
  std::vector<double> q_t{0.5, 0.6, 0.7, 0.8, 0.9};
  double q_r = 0.5;
  std::size_t n = 0;
  std::size_t m = 0;
  std::size_t reps = 1000;
  std::string est = "ipsw_semi_pihat";
};

struct ScenarioArgs {
  std::string name;
  std::optional<double> pi;
  bool x_sup = false;
  bool modifier = false;
  std::vector<double> v_q_t{0.3, 0.7};
};

void add_common(CLI::App* app, Common& c, bool with_config, bool with_seed) {
  if (with_config) app->add_option("--config", c.config, "Scenario TOML document")->required();
  app->add_option("--out", c.out, "Output directory")->capture_default_str();
  if (with_seed) {
    app->add_option("--seed", c.seed, "Master seed")->capture_default_str();
    app->add_option("--workers", c.workers, "Worker threads (default: IPSW_WORKERS or hardware threads)");
  }
}

void add_simulate(CLI::App* app, SimulateArgs& a) {
  app->add_option("--n", a.n, "Trial size")->required();
  app->add_option("--m", a.m, "Target sample size (needed by ipsw_est and ipsw_est_pihat)");
  app->add_option("--reps", a.reps, "Replicates")->capture_default_str();
  app->add_option("--est", a.est, "Estimators (comma separated)")->delimiter(',');
  app->add_option("--adjust", a.adjust, "Adjustment set, e.g. minimal+glasgow or x+v");
  app->add_flag("--unit-level", a.unit_level, "Draw unit-level samples instead of summaries");
}

void add_sweep(CLI::App* app, SweepArgs& a) {
  app->add_option("--n-grid", a.n_grid, "Trial sizes (comma separated)")->delimiter(',')->required();
  auto* fixed = app->add_option("--fixed-m", a.fixed_m, "Hold the target size fixed");
  auto* ratio = app->add_option("--ratio", a.ratio, "m = lambda n; 'inf' for a known target law");
  fixed->excludes(ratio);
  app->add_option("--reps", a.reps, "Replicates per grid point")->capture_default_str();
  app->add_option("--est", a.est, "Estimators (comma separated)")->delimiter(',');
}

void add_inflation(CLI::App* app, InflationArgs& a) {
  app->add_option("--q-t", a.q_t, "Target P(V=1) per grid point")->delimiter(',')->capture_default_str();
  app->add_option("--q-r", a.q_r, "Trial P(V=1)")->capture_default_str();
  app->add_option("--n", a.n, "Trial size")->required();
  app->add_option("--m", a.m, "Target sample size");
  app->add_option("--reps", a.reps, "Replicates")->capture_default_str();
  app->add_option("--est", a.est, "Estimator")->capture_default_str();
}

// ---- commands ----------------------------------------------------------------

struct Loaded {
  LoadedSpec spec;
  std::string bytes;
};

Loaded load_config(const std::string& path) {
  std::string bytes = read_text_file(path);
  LoadedSpec spec = materialize(parse_scenario(bytes, fs::path(path).parent_path()));
  return {std::move(spec), std::move(bytes)};
}

AdjustmentMap resolve_adjustment(const LoadedSpec& loaded, const std::string& adjust) {
  if (loaded.layout) return loaded.layout->projection(loaded.layout->parse_adjustment(adjust));
  if (loaded.extended) {
    if (adjust == "x") return loaded.extended->base_projection();
    if (adjust == "x+v" || adjust == "all") return AdjustmentMap::identity(loaded.spec.size());
    throw UsageError("--adjust for an extended config must be one of: x, x+v, all");
  }
  if (adjust == "all") return AdjustmentMap::identity(loaded.spec.size());
  throw UsageError("--adjust needs a semi-synthetic or extended config (plain strata accept only 'all')");
}

void cmd_theory(const DgpSpec& spec, const TheoryArgs& a, Output& out) {
  if (a.n == 0) throw ValidationError(ErrorKind::parameter_out_of_range, "n", "needs n >= 1");
  const auto m = parse_m(a.m);
  std::vector<EstimatorTag> tags = parse_estimators(a.est);
  if (tags.empty()) {
    tags = {EstimatorTag::ipsw_oracle, EstimatorTag::ipsw_semi, EstimatorTag::ipsw_semi_pihat};
    if (m) tags.insert(tags.end(), {EstimatorTag::ipsw_est, EstimatorTag::ipsw_est_pihat});
  }
  Json reports = Json::array();
  std::optional<TheoryConstants> constants;
  for (auto tag : tags) {
    if (!is_ipsw(tag)) throw UsageError("theory covers the IPSW variants only, not " + std::string(to_string(tag)));
    if (needs_target_sample(tag) && !m) {
      throw ValidationError(ErrorKind::variant_parameter_mismatch, "m",
                            std::string(to_string(tag)) + " needs a finite --m");
    }
    const auto r = theory_report(spec, a.n, m, tag, !a.no_exact);
    constants = r.constants;
    Json j;
    j["estimator"] = to_string(tag);
    j["bias"] = number(r.bias);
    j["variance_exact"] = number(r.variance_exact);
    j["variance_bound"] = number(r.variance_bound);
    j["risk_bound"] = number(r.risk_bound);
    j["asymptotic_variance"] = number(r.asymptotic_variance);
    reports.push_back(std::move(j));
  }
  if (!constants) constants = theory_constants(spec);
  Json doc;
  doc["n"] = a.n;
  doc["m"] = m ? Json(*m) : Json("inf");
  doc["constants"] = {{"v_o", number(constants->v_o)},
                      {"v_so", number(constants->v_so)},
                      {"v_so_tilde_infty", number(constants->v_so_tilde_infty)},
                      {"target_cate_variance", number(constants->target_cate_variance)},
                      {"true_ate", number(constants->true_ate)}};
  doc["reports"] = std::move(reports);
  out.write("theory.json", doc.dump(2) + "\n");
}

void cmd_simulate(const LoadedSpec& loaded, const SimulateArgs& a, const Common& c, Output& out) {
  McConfig cfg;
  cfg.n = a.n;
  cfg.m = a.m;
  cfg.reps = a.reps;
  cfg.seed = c.seed;
  cfg.workers = c.workers;
  cfg.unit_level = a.unit_level;
  cfg.estimators = parse_estimators(a.est);
  if (cfg.estimators.empty()) {
    for (auto tag : kAllEstimators) {
      if (a.m > 0 || !needs_target_sample(tag)) cfg.estimators.push_back(tag);
    }
  }
  const McReport report = a.adjust.empty()
                              ? run_monte_carlo(loaded.spec, cfg)
                              : run_monte_carlo(loaded.spec, cfg, {resolve_adjustment(loaded, a.adjust)}).front();
  std::string csv = "estimator,mean,bias,variance,mse,mc_se,degenerate_reps\n";
  for (const auto& r : report.rows) {
    csv += std::string(to_string(r.tag)) + "," + cell(r.mean) + "," + cell(r.bias) + "," + cell(r.variance) + "," +
           cell(r.mse) + "," + cell(r.mc_se) + "," + std::to_string(r.degenerate_reps) + "\n";
  }
  out.write("simulate.csv", csv);
}

void cmd_sweep(const DgpSpec& spec, const SweepArgs& a, const Common& c, Output& out) {
  if (a.n_grid.empty()) throw ValidationError(ErrorKind::parameter_out_of_range, "n_grid", "empty grid");
  SweepRegime regime;
  Json regime_json;
  if (a.fixed_m) {
    regime = SweepRegime::fixed(*a.fixed_m);
    regime_json = {{"kind", "fixed_m"}, {"m", *a.fixed_m}};
  } else if (a.ratio == "inf") {
    regime = SweepRegime::infinite();
    regime_json = {{"kind", "ratio"}, {"lambda", "inf"}};
  } else if (!a.ratio.empty()) {
    double lambda = 0.0;
    const char* end = a.ratio.data() + a.ratio.size();
    auto [p, ec] = std::from_chars(a.ratio.data(), end, lambda);
    if (ec != std::errc{} || p != end) throw UsageError("--ratio must be a number or 'inf', got '" + a.ratio + "'");
    regime = SweepRegime::ratio(lambda);
    regime_json = {{"kind", "ratio"}, {"lambda", number(lambda)}};
  } else {
    throw UsageError("sweep needs one of --fixed-m M or --ratio L|inf");
  }
  auto tags = parse_estimators(a.est);
  if (tags.empty()) tags = {EstimatorTag::ipsw_est, EstimatorTag::ipsw_est_pihat};

  const auto rows = regime_sweep(spec, a.n_grid, regime, a.reps, c.seed, tags, c.workers);
  std::string csv = "n,m,estimator,scaled_variance,theory_asymptote\n";
  Json json_rows = Json::array();
  for (const auto& r : rows) {
    csv += std::to_string(r.n) + "," + (r.m ? std::to_string(*r.m) : std::string("inf")) + "," +
           std::string(to_string(r.tag)) + "," + cell(r.scaled_variance) + "," + cell(r.theory_asymptote) + "\n";
    json_rows.push_back({{"n", r.n},
                         {"m", r.m ? Json(*r.m) : Json("inf")},
                         {"estimator", to_string(r.tag)},
                         {"variance", number(r.variance)},
                         {"variance_mc_se", number(r.variance_mc_se)},
                         {"scaled_variance", number(r.scaled_variance)},
                         {"theory_asymptote", number(r.theory_asymptote)}});
  }
  Json doc;
  doc["regime"] = std::move(regime_json);
  doc["reps"] = a.reps;
  doc["seed"] = c.seed;
  doc["rows"] = std::move(json_rows);
  out.write("sweep.csv", csv);
  out.write("sweep.json", doc.dump(2) + "\n");
}

void cmd_inflation(const DgpSpec& base, const InflationArgs& a, const Common& c, Output& out) {
  if (a.q_t.empty()) throw ValidationError(ErrorKind::parameter_out_of_range, "q_t", "empty grid");
  std::vector<ShiftLevel> grid;
  for (double q : a.q_t) grid.push_back({{1.0 - a.q_r, a.q_r}, {1.0 - q, q}});
  McConfig cfg;
  cfg.n = a.n;
  cfg.m = a.m;
  cfg.reps = a.reps;
  cfg.seed = c.seed;
  cfg.workers = c.workers;
  cfg.estimators = parse_estimators({a.est});
  const auto rows = inflation_experiment(base, grid, cfg);
  std::string csv = "shift_param,theory_factor,empirical_factor,mc_se\n";
  for (const auto& r : rows) {
    csv += cell(r.shift_param) + "," + cell(r.theory_factor) + "," + cell(r.empirical_factor) + "," + cell(r.mc_se) +
           "\n";
  }
  out.write("inflation.csv", csv);
}

std::string scenario_document(const ScenarioArgs& s) {
  if (s.name == "semi-synthetic") {
    SemiSynthParams p;
    if (s.pi) p.pi = *s.pi;
    if (s.x_sup) p.x_sup = SyntheticModifier{};
    return to_toml(p);
  }
  ToyParams toy;
  if (s.pi) toy.pi = *s.pi;
  if (s.name == "toy") return to_toml(toy);
  ToyExtension mode = ShiftedNonModifier::balanced(s.v_q_t);
  if (s.modifier) mode = NonShiftedModifier{{0.5, 0.5}, {{-2.0, 2.0}}};
  return to_toml(toy_extended_dgp(toy, mode));
}

int report_failure(const char* what, const std::string& message, int code) {
  std::cerr << "ipsw: " << what << ": " << message << "\n";
  return code;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"Finite-sample and asymptotic analysis of IPSW transport estimators"};
  app.require_subcommand(1);
  app.set_version_flag("--version", IPSW_VERSION);

  Common common;
  TheoryArgs theory;
  SimulateArgs simulate;
  SweepArgs sweep;
  InflationArgs inflation;
  ScenarioArgs scenario;

  auto* theory_cmd = app.add_subcommand("theory", "Closed-form bias, variance and bounds (JSON)");
  add_common(theory_cmd, common, true, false);
  theory_cmd->add_option("--n", theory.n, "Trial size")->required();
  theory_cmd->add_option("--m", theory.m, "Target size or 'inf'")->capture_default_str();
  theory_cmd->add_option("--est", theory.est, "IPSW variants (comma separated)")->delimiter(',');
  theory_cmd->add_flag("--no-exact", theory.no_exact, "Skip exact finite-sample variances");

  auto* simulate_cmd = app.add_subcommand("simulate", "Monte Carlo comparison of estimators (CSV)");
  add_common(simulate_cmd, common, true, true);
  add_simulate(simulate_cmd, simulate);

  auto* sweep_cmd = app.add_subcommand("sweep", "Scaled variance along a trial-size grid (CSV + JSON)");
  add_common(sweep_cmd, common, true, true);
  add_sweep(sweep_cmd, sweep);

  auto* inflation_cmd = app.add_subcommand("inflation", "Variance inflation from a shifted covariate (CSV)");
  add_common(inflation_cmd, common, true, true);
  add_inflation(inflation_cmd, inflation);

  auto* scenario_cmd = app.add_subcommand("scenario", "Materialize a named setup and run a command on it");
  scenario_cmd->add_option("name", scenario.name, "toy | toy-extended | semi-synthetic")
      ->required()
      ->check(CLI::IsMember({"toy", "toy-extended", "semi-synthetic"}));
  scenario_cmd->add_option("--pi", scenario.pi, "Treatment probability");
  scenario_cmd->add_flag("--x-sup", scenario.x_sup, "semi-synthetic: add the synthetic non-shifted modifier");
  scenario_cmd->add_flag("--modifier", scenario.modifier, "toy-extended: V modifies the effect instead of shifting");
  scenario_cmd->add_option("--v-q-t", scenario.v_q_t, "toy-extended: target law of V (trial law is uniform)")
      ->delimiter(',');
  scenario_cmd->require_subcommand(1);
  auto* sc_simulate = scenario_cmd->add_subcommand("simulate", "Monte Carlo on the materialized spec");
  add_common(sc_simulate, common, false, true);
  add_simulate(sc_simulate, simulate);
  auto* sc_sweep = scenario_cmd->add_subcommand("sweep", "Regime sweep on the materialized spec");
  add_common(sc_sweep, common, false, true);
  add_sweep(sc_sweep, sweep);
  auto* sc_inflation = scenario_cmd->add_subcommand("inflation", "Inflation experiment on the base spec");
  add_common(sc_inflation, common, false, true);
  add_inflation(sc_inflation, inflation);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const std::vector<std::string> args(argv, argv + argc);
  try {
    Output out{common.out, {}};
    if (theory_cmd->parsed()) {
      const auto cfg = load_config(common.config);
      cmd_theory(cfg.spec.spec, theory, out);
      write_manifest(out, args, cfg.bytes, std::nullopt);
    } else if (simulate_cmd->parsed()) {
      const auto cfg = load_config(common.config);
      cmd_simulate(cfg.spec, simulate, common, out);
      write_manifest(out, args, cfg.bytes, common.seed);
    } else if (sweep_cmd->parsed()) {
      const auto cfg = load_config(common.config);
      cmd_sweep(cfg.spec.spec, sweep, common, out);
      write_manifest(out, args, cfg.bytes, common.seed);
    } else if (inflation_cmd->parsed()) {
      const auto cfg = load_config(common.config);
      cmd_inflation(cfg.spec.extended ? cfg.spec.extended->base : cfg.spec.spec, inflation, common, out);
      write_manifest(out, args, cfg.bytes, common.seed);
    } else {
      const std::string text = scenario_document(scenario);
      const LoadedSpec loaded = materialize(parse_scenario(text));
      out.write("config.toml", text);
      if (sc_simulate->parsed()) {
        cmd_simulate(loaded, simulate, common, out);
      } else if (sc_sweep->parsed()) {
        cmd_sweep(loaded.spec, sweep, common, out);
      } else {
        cmd_inflation(loaded.extended ? loaded.extended->base : loaded.spec, inflation, common, out);
      }
      write_manifest(out, args, text, common.seed);
    }
  } catch (const IoError& e) {
    return report_failure("i/o error", e.what(), 1);
  } catch (const ipsw::ParseError& e) {
    return report_failure("parse error", e.what(), 2);
  } catch (const ValidationError& e) {
    std::cerr << "ipsw: validation error\n";
    for (const auto& v : e.violations()) std::cerr << "  " << to_string(v.kind) << " [" << v.field << "]: " << v.message << "\n";
    return 2;
  } catch (const UsageError& e) {
    return report_failure("usage", e.what(), 2);
  } catch (const std::invalid_argument& e) {
    return report_failure("invalid argument", e.what(), 2);
  } catch (const std::exception& e) {
    return report_failure("error", e.what(), 1);
  }
  return 0;
}

}  // namespace ipsw::cli

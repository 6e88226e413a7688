#include <doctest.h>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "ipsw/io.hpp"

namespace fs = std::filesystem;
using Json = nlohmann::json;

namespace {

int run(std::initializer_list<std::string> args) {
  std::vector<std::string> owned{"ipsw"};
  owned.insert(owned.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : owned) argv.push_back(a.c_str());
  return ipsw::cli::run(static_cast<int>(argv.size()), argv.data());
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "ipsw_cli_tests" / name;
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) { return ipsw::read_text_file(p); }

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(slurp(p));
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) cells.push_back(c);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

// Writes the toy config once through the scenario command.
fs::path toy_config() {
  const auto dir = scratch("toy_config");
  REQUIRE(run({"scenario", "toy", "simulate", "--n", "5", "--reps", "2", "--out", dir.string()}) == 0);
  return dir / "config.toml";
}

}  // namespace

TEST_CASE("scenario dispatch matches the config-driven command byte for byte") {
  const auto a = scratch("dispatch_a");
  const auto b = scratch("dispatch_b");
  const auto c = scratch("dispatch_c");
  REQUIRE(run({"scenario", "toy", "simulate", "--n", "150", "--m", "1000", "--reps", "1000", "--seed", "7", "--out",
               a.string()}) == 0);
  REQUIRE(run({"simulate", "--config", (a / "config.toml").string(), "--n", "150", "--m", "1000", "--reps", "1000",
               "--seed", "7", "--out", b.string()}) == 0);
  REQUIRE(run({"simulate", "--config", (a / "config.toml").string(), "--n", "150", "--m", "1000", "--reps", "1000",
               "--seed", "7", "--workers", "3", "--out", c.string()}) == 0);
  CHECK(slurp(a / "simulate.csv") == slurp(b / "simulate.csv"));
  CHECK(slurp(b / "simulate.csv") == slurp(c / "simulate.csv"));

  const auto rows = read_csv(a / "simulate.csv");
  REQUIRE(rows.size() == 9);
  CHECK(rows[0] == std::vector<std::string>{"estimator", "mean", "bias", "variance", "mse", "mc_se", "degenerate_reps"});
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const std::string& name = rows[i][0];
    if (name.rfind("ipsw", 0) != 0) continue;
    const double mean = std::stod(rows[i][1]);
    const double se = std::stod(rows[i][5]);
    CHECK(std::abs(mean - 5.1) <= 4 * se);
  }
}

TEST_CASE("manifest records the run and is reproducible under SOURCE_DATE_EPOCH") {
  const auto cfg = toy_config();
  const auto a = scratch("manifest_a");
  const auto b = scratch("manifest_b");
  ::setenv("SOURCE_DATE_EPOCH", "1700000000", 1);
  REQUIRE(run({"simulate", "--config", cfg.string(), "--n", "20", "--reps", "50", "--seed", "3", "--out", a.string()}) == 0);
  REQUIRE(run({"simulate", "--config", cfg.string(), "--n", "20", "--reps", "50", "--seed", "3", "--out", b.string()}) == 0);
  ::unsetenv("SOURCE_DATE_EPOCH");
  const auto m = Json::parse(slurp(a / "manifest.json"));
  CHECK(m["seed"] == 3);
  CHECK(m["timestamp"] == "2023-11-14T22:13:20Z");
  CHECK(m["outputs"] == Json::array({"simulate.csv"}));
  CHECK(m["config_hash"].get<std::string>().rfind("fnv1a64:", 0) == 0);
  CHECK(m["command_line"][1] == "simulate");
  // Only the output directory differs between the two command lines.
  auto ma = slurp(a / "manifest.json");
  auto mb = slurp(b / "manifest.json");
  CHECK(slurp(a / "simulate.csv") == slurp(b / "simulate.csv"));
  CHECK(ma.size() == mb.size());
}

TEST_CASE("simulate without m omits variants that read a target sample") {
  const auto cfg = toy_config();
  const auto out = scratch("no_m");
  REQUIRE(run({"simulate", "--config", cfg.string(), "--n", "30", "--reps", "20", "--out", out.string()}) == 0);
  const auto rows = read_csv(out / "simulate.csv");
  REQUIRE(rows.size() == 7);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    CHECK(rows[i][0] != "ipsw_est");
    CHECK(rows[i][0] != "ipsw_est_pihat");
  }
}

TEST_CASE("theory report for the semi-oracle at m = inf") {
  const auto cfg = toy_config();
  const auto out = scratch("theory");
  REQUIRE(run({"theory", "--config", cfg.string(), "--n", "150", "--m", "inf", "--est", "semi_oracle", "--out",
               out.string()}) == 0);
  const auto j = Json::parse(slurp(out / "theory.json"));
  CHECK(j["m"] == "inf");
  CHECK(j["constants"]["v_so"].get<double>() == doctest::Approx(37.96).epsilon(1e-12));
  REQUIRE(j["reports"].size() == 1);
  const auto& r = j["reports"][0];
  CHECK(r["estimator"] == "ipsw_semi");
  CHECK(r["risk_bound"].get<double>() == doctest::Approx(2 * 37.96 / 151).epsilon(1e-12));
  CHECK(r["asymptotic_variance"].get<double>() == doctest::Approx(37.96).epsilon(1e-12));
  CHECK(r["variance_exact"].get<double>() <= r["variance_bound"].get<double>());
}

TEST_CASE("sweep emits the theory overlay and inf tokens") {
  const auto cfg = toy_config();
  const auto out = scratch("sweep");
  REQUIRE(run({"sweep", "--config", cfg.string(), "--n-grid", "200,400", "--ratio", "10", "--reps", "200", "--est",
               "ipsw_est", "--out", out.string()}) == 0);
  const auto rows = read_csv(out / "sweep.csv");
  CHECK(rows[0] == std::vector<std::string>{"n", "m", "estimator", "scaled_variance", "theory_asymptote"});
  REQUIRE(rows.size() == 3);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    CHECK(rows[i][2] == "ipsw_est");
    CHECK(std::stod(rows[i][4]) == doctest::Approx(38.989).epsilon(1e-12));
  }
  CHECK(rows[2][1] == "4000");

  const auto inf_out = scratch("sweep_inf");
  REQUIRE(run({"sweep", "--config", cfg.string(), "--n-grid", "100", "--ratio", "inf", "--reps", "100", "--out",
               inf_out.string()}) == 0);
  const auto j = Json::parse(slurp(inf_out / "sweep.json"));
  CHECK(j["regime"]["lambda"] == "inf");
  CHECK(j["rows"][0]["m"] == "inf");
  CHECK(j["rows"][0]["estimator"] == "ipsw_semi");
}

TEST_CASE("inflation CSV starts at factor one and rises along the grid") {
  const auto out = scratch("inflation");
  REQUIRE(run({"scenario", "toy-extended", "inflation", "--n", "150", "--m", "1000", "--reps", "100", "--q-t",
               "0.5,0.7,0.9", "--out", out.string()}) == 0);
  const auto rows = read_csv(out / "inflation.csv");
  CHECK(rows[0] == std::vector<std::string>{"shift_param", "theory_factor", "empirical_factor", "mc_se"});
  REQUIRE(rows.size() == 4);
  CHECK(rows[1][1] == "1");
  CHECK(std::stod(rows[2][1]) < std::stod(rows[3][1]));
  CHECK(std::stod(rows[1][1]) < std::stod(rows[2][1]));
}

TEST_CASE("semi-synthetic scenario: adding glasgow raises the estimator variance") {
  const auto a = scratch("glasgow_min");
  const auto b = scratch("glasgow_plus");
  REQUIRE(run({"scenario", "semi-synthetic", "simulate", "--n", "3000", "--m", "10000", "--reps", "400", "--seed", "5",
               "--est", "ipsw_est_pihat", "--adjust", "minimal", "--out", a.string()}) == 0);
  REQUIRE(run({"scenario", "semi-synthetic", "simulate", "--n", "3000", "--m", "10000", "--reps", "400", "--seed", "5",
               "--est", "ipsw_est_pihat", "--adjust", "minimal+glasgow", "--out", b.string()}) == 0);
  const double v_min = std::stod(read_csv(a / "simulate.csv")[1][3]);
  const double v_plus = std::stod(read_csv(b / "simulate.csv")[1][3]);
  CHECK(v_plus > v_min);
}

TEST_CASE("exit codes") {
  const auto cfg = toy_config();
  const auto out = scratch("exit_codes").string();
  const auto c = cfg.string();

  CHECK(run({"theory", "--config", "/nonexistent/toy.toml", "--n", "10", "--out", out}) == 1);
  CHECK(run({"theory", "--config", c, "--n", "10", "--m", "inf", "--est", "ipsw_est", "--out", out}) == 2);
  CHECK(run({"theory", "--config", c, "--n", "10", "--m", "zero", "--out", out}) == 2);
  CHECK(run({"simulate", "--config", c, "--n", "10", "--reps", "0", "--out", out}) == 2);
  CHECK(run({"simulate", "--config", c, "--n", "10", "--est", "nope", "--out", out}) == 2);
  CHECK(run({"simulate", "--config", c, "--n", "10", "--est", "ipsw_est", "--out", out}) == 2);
  CHECK(run({"simulate", "--config", c, "--n", "10", "--adjust", "minimal", "--out", out}) == 2);
  CHECK(run({"sweep", "--config", c, "--n-grid", "", "--ratio", "1", "--out", out}) == 2);
  CHECK(run({"sweep", "--config", c, "--n-grid", "10", "--out", out}) == 2);
  CHECK(run({"sweep", "--config", c, "--n-grid", "10", "--ratio", "-1", "--out", out}) == 2);
  CHECK(run({"scenario", "bogus", "simulate", "--n", "10", "--out", out}) == 2);
  CHECK(run({"frobnicate"}) == 2);
  CHECK(run({"simulate", "--config", c, "--n", "10", "--reps", "2", "--out", "/proc/ipsw/out"}) == 1);

  const auto bad = scratch("bad_config");
  ipsw::write_text_file(bad / "bad.toml", "[toy]\np_R1 = 0.75\nunknown_key = 1\n");
  CHECK(run({"theory", "--config", (bad / "bad.toml").string(), "--n", "10", "--out", out}) == 2);
  ipsw::write_text_file(bad / "invalid.toml", "[toy]\np_R1 = 1.5\n");
  CHECK(run({"theory", "--config", (bad / "invalid.toml").string(), "--n", "10", "--out", out}) == 2);
}

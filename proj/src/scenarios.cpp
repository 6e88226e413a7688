#include "ipsw/scenarios.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include <toml.hpp>

#include "ipsw/io.hpp"

namespace ipsw {

namespace {

void require_param(bool ok, const std::string& field, const std::string& message) {
  if (!ok) throw ValidationError(ErrorKind::parameter_out_of_range, field, message);
}

void require_distribution(const std::vector<double>& p, const std::string& field) {
  double total = 0.0;
  for (double v : p) {
    if (!std::isfinite(v) || v < 0.0) {
      throw ValidationError(ErrorKind::probability_not_normalized, field, "entries must be finite and >= 0");
    }
    total += v;
  }
  if (p.empty() || std::abs(total - 1.0) > 1e-12) {
    throw ValidationError(ErrorKind::probability_not_normalized, field, "must sum to 1");
  }
}

}  // namespace

// ---- toy --------------------------------------------------------------------

DgpSpec toy_dgp(const ToyParams& p) {
  require_param(p.p_R1 > 0.0 && p.p_R1 < 1.0, "p_R1", "needs 0 < p_R1 < 1");
  require_param(p.p_T1 > 0.0 && p.p_T1 < 1.0, "p_T1", "needs 0 < p_T1 < 1");
  DgpTable t;
  t.strata = {{0, "x0"}, {1, "x1"}};
  t.p_R = {1.0 - p.p_R1, p.p_R1};
  t.p_T = {1.0 - p.p_T1, p.p_T1};
  t.pi = {p.pi, p.pi};
  t.outcomes = {{0.0, p.tau0, p.baseline_var, p.baseline_var, NoiseFamily::gaussian},
                {0.0, p.tau1, p.baseline_var, p.baseline_var, NoiseFamily::gaussian}};
  return DgpSpec::from_table(std::move(t));
}

ShiftedNonModifier ShiftedNonModifier::balanced(std::vector<double> q_T) {
  const std::size_t k = q_T.size();
  return {std::vector<double>(k, k ? 1.0 / static_cast<double>(k) : 0.0), std::move(q_T)};
}

ExtendedDgpSpec toy_extended_dgp(const ToyParams& params, const ToyExtension& mode) {
  ExtendedDgpSpec ext{toy_dgp(params), {}, {}, {}, {}};
  if (const auto* s = std::get_if<ShiftedNonModifier>(&mode)) {
    ext.q_R = s->q_R;
    ext.q_T = s->q_T;
    ext.tau_shift.assign(ext.base.size(), std::vector<double>(s->q_R.size(), 0.0));
  } else {
    const auto& ns = std::get<NonShiftedModifier>(mode);
    ext.q_R = ns.q;
    ext.q_T = ns.q;
    if (ns.tau_shift.size() == 1) {
      ext.tau_shift.assign(ext.base.size(), ns.tau_shift.front());
    } else {
      ext.tau_shift = ns.tau_shift;
    }
  }
  for (std::size_t v = 0; v < ext.q_R.size(); ++v) {
    ext.aux_support.push_back({static_cast<StratumId>(v), "v" + std::to_string(v)});
  }
  ext.validate();
  return ext;
}

DgpSpec heteroscedastic_dgp() {
  DgpTable t;
  t.strata = {{0, "noisy"}, {1, "quiet"}};
  t.p_R = {0.8, 0.2};
  t.p_T = {0.2, 0.8};
  t.pi = {0.5, 0.5};
  t.outcomes = {{0.0, 2.0, 100.0, 100.0, NoiseFamily::gaussian},
                {0.0, 1.0, 1.0, 1.0, NoiseFamily::gaussian}};
  return DgpSpec::from_table(std::move(t));
}

// ---- semi-synthetic ----------------------------------------------------------

std::vector<CovariateMarginal> SemiSynthParams::default_covariates() {
  return {
      {"glasgow", {0.2, 0.3, 0.5}, {0.5, 0.3, 0.2}},
      {"gender", {0.8, 0.2}, {0.8, 0.2}},
      {"pupil", {0.7, 0.2, 0.1}, {0.7, 0.2, 0.1}},
      {"age", {0.3, 0.4, 0.3}, {0.3, 0.4, 0.3}},
      {"bp", {0.2, 0.5, 0.3}, {0.4, 0.4, 0.2}},
      {"ttt", {0.2, 0.3, 0.3, 0.2}, {0.4, 0.3, 0.2, 0.1}},
  };
}

std::size_t CovariateLayout::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return i;
  }
  std::string valid;
  for (const auto& n : names) valid += (valid.empty() ? "" : ", ") + n;
  throw ValidationError(ErrorKind::parameter_out_of_range, "adjust",
                        "unknown covariate '" + name + "' (valid: " + valid + ")");
}

AdjustmentMap CovariateLayout::projection(const std::vector<std::string>& subset) const {
  std::vector<std::size_t> cols;
  for (const auto& name : subset) cols.push_back(index_of(name));
  std::map<std::vector<int>, StratumId> ids;
  AdjustmentMap map;
  map.coarse_of.reserve(levels.size());
  for (const auto& row : levels) {
    std::vector<int> key;
    for (auto c : cols) key.push_back(row[c]);
    const auto [it, fresh] = ids.emplace(std::move(key), static_cast<StratumId>(ids.size()));
    map.coarse_of.push_back(it->second);
  }
  map.coarse_size = ids.size();
  return map;
}

std::vector<std::string> CovariateLayout::parse_adjustment(const std::string& spec) const {
  std::vector<std::string> out;
  auto add = [&](const std::string& name) {
    index_of(name);
    if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
  };
  std::stringstream ss(spec);
  std::string token;
  while (std::getline(ss, token, '+')) {
    if (token == "minimal") {
      add("ttt");
      add("bp");
    } else if (token == "all") {
      for (const auto& n : names) add(n);
    } else {
      add(token);
    }
  }
  if (out.empty()) throw ValidationError(ErrorKind::parameter_out_of_range, "adjust", "empty adjustment set");
  return out;
}

SemiSyntheticModel semi_synthetic_model(const SemiSynthParams& params) {
  const std::size_t n_cov = std::size(kCovariateNames);
  const std::size_t expected_levels[] = {3, 2, 3, 3, 3, 4};
  require_param(params.covariates.size() == n_cov, "covariates", "needs the six covariates");
  for (std::size_t c = 0; c < n_cov; ++c) {
    const auto& cov = params.covariates[c];
    require_param(cov.name == kCovariateNames[c], "covariates",
                  "covariate " + std::to_string(c) + " must be " + kCovariateNames[c]);
    require_param(cov.trial.size() == expected_levels[c] && cov.target.size() == expected_levels[c],
                  cov.name, "needs " + std::to_string(expected_levels[c]) + " levels");
    if (!params.joint) {
      require_distribution(cov.trial, cov.name + ".trial");
      require_distribution(cov.target, cov.name + ".target");
    }
  }
  require_param(params.noise_scale.size() == 4, "noise_scale", "needs one entry per ttt level");
  for (std::size_t i = 0; i < 4; ++i) {
    require_param(std::isfinite(params.noise_scale[i]) && params.noise_scale[i] >= 0.0, "noise_scale",
                  "entries must be finite and >= 0");
    if (i > 0) {
      require_param(params.noise_scale[i] >= params.noise_scale[i - 1], "noise_scale",
                    "must be nondecreasing in ttt");
    }
  }
  if (params.x_sup) {
    require_distribution(params.x_sup->q, "x_sup.q");
    require_param(params.x_sup->shift.size() == params.x_sup->q.size(), "x_sup.shift",
                  "needs one entry per level");
  }

  std::map<std::vector<int>, std::pair<double, double>> joint;
  if (params.joint) {
    for (const auto& row : *params.joint) {
      require_param(row.levels.size() == n_cov, "joint", "rows need six levels");
      for (std::size_t c = 0; c < n_cov; ++c) {
        require_param(row.levels[c] >= 1 && static_cast<std::size_t>(row.levels[c]) <= expected_levels[c],
                      "joint", std::string(kCovariateNames[c]) + " level out of range");
      }
      auto& cell = joint[row.levels];
      cell.first += row.p_R;
      cell.second += row.p_T;
    }
  }

  CovariateLayout layout;
  for (std::size_t c = 0; c < n_cov; ++c) {
    layout.names.emplace_back(kCovariateNames[c]);
    layout.level_counts.push_back(expected_levels[c]);
  }
  const std::size_t n_sup = params.x_sup ? params.x_sup->q.size() : 1;
  if (params.x_sup) {
    layout.names.emplace_back("xsup");
    layout.level_counts.push_back(n_sup);
  }

  DgpTable t;
  std::vector<int> lv(n_cov, 1);
  // Mixed-radix enumeration, last covariate fastest.
  for (;;) {
    double p_R = 1.0;
    double p_T = 1.0;
    if (params.joint) {
      const auto it = joint.find(lv);
      p_R = it == joint.end() ? 0.0 : it->second.first;
      p_T = it == joint.end() ? 0.0 : it->second.second;
    } else {
      for (std::size_t c = 0; c < n_cov; ++c) {
        p_R *= params.covariates[c].trial[lv[c] - 1];
        p_T *= params.covariates[c].target[lv[c] - 1];
      }
    }
    const int glasgow = lv[0];
    const bool girl = lv[1] == 2;
    const int bp = lv[4];
    const int ttt = lv[5];
    const double mean0 = 10.0 - glasgow - (girl ? 5.0 : 0.0);
    const double tau = 15.0 * (6 - ttt) + 3.0 * (bp - 1) * (bp - 1);
    const double sd = params.noise_scale[ttt - 1];

    for (std::size_t v = 0; v < n_sup; ++v) {
      const double q = params.x_sup ? params.x_sup->q[v] : 1.0;
      const double shift = params.x_sup ? params.x_sup->shift[v] : 0.0;
      if (p_R * q == 0.0 && p_T * q == 0.0) continue;
      std::string label;
      std::vector<int> row = lv;
      for (std::size_t c = 0; c < n_cov; ++c) {
        label += (c ? "," : "") + std::string(kCovariateNames[c]) + "=" + std::to_string(lv[c]);
      }
      if (params.x_sup) {
        label += ",xsup=" + std::to_string(v + 1);
        row.push_back(static_cast<int>(v + 1));
      }
      t.strata.push_back({static_cast<StratumId>(t.strata.size()), label});
      t.p_R.push_back(p_R * q);
      t.p_T.push_back(p_T * q);
      t.pi.push_back(params.pi);
      t.outcomes.push_back({mean0, mean0 + tau + shift, sd * sd, sd * sd, NoiseFamily::gaussian});
      layout.levels.push_back(std::move(row));
    }

    std::size_t c = n_cov;
    bool carry = true;
    while (carry && c > 0) {
      --c;
      carry = static_cast<std::size_t>(++lv[c]) > expected_levels[c];
      if (carry) lv[c] = 1;
    }
    if (carry) break;  // the leading digit wrapped
  }
  return {DgpSpec::from_table(std::move(t)), std::move(layout)};
}

DgpSpec semi_synthetic_dgp(const SemiSynthParams& params) { return semi_synthetic_model(params).spec; }

namespace {

template <class T>
T parse_field(std::string_view s, const std::string& where) {
  T v{};
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ParseError(where + ": cannot parse '" + std::string(s) + "'");
  return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::vector<JointRow> load_joint_csv(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  std::stringstream ss(text);
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::size_t> column_of(std::size(kCovariateNames));
  std::vector<JointRow> rows;
  bool header = true;
  while (std::getline(ss, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    const std::string where = path.string() + ":" + std::to_string(line_no);
    const std::size_t width = std::size(kCovariateNames) + 3;
    if (cells.size() != width) {
      throw ParseError(where + ": expected " + std::to_string(width) + " columns");
    }
    if (header) {
      if (cells.front() != "combo_id" || cells[width - 2] != "p_R" || cells[width - 1] != "p_T") {
        throw ParseError(where + ": header must be combo_id,<covariates>,p_R,p_T");
      }
      std::set<std::string> seen;
      for (std::size_t c = 0; c < std::size(kCovariateNames); ++c) {
        const auto& name = cells[c + 1];
        const auto* it = std::find(std::begin(kCovariateNames), std::end(kCovariateNames), name);
        if (it == std::end(kCovariateNames) || !seen.insert(name).second) {
          throw ParseError(where + ": unexpected covariate column '" + name + "'");
        }
        column_of[static_cast<std::size_t>(it - std::begin(kCovariateNames))] = c + 1;
      }
      header = false;
      continue;
    }
    JointRow row;
    for (std::size_t c = 0; c < std::size(kCovariateNames); ++c) {
      row.levels.push_back(parse_field<int>(cells[column_of[c]], where));
    }
    row.p_R = parse_field<double>(cells[width - 2], where);
    row.p_T = parse_field<double>(cells[width - 1], where);
    rows.push_back(std::move(row));
  }
  if (header) throw ParseError(path.string() + ": missing header");
  return rows;
}

// ---- scenario document -------------------------------------------------------

namespace {

std::string where(const toml::node& node) {
  const auto& src = node.source();
  return "line " + std::to_string(src.begin.line);
}

[[noreturn]] void fail(const toml::node& node, const std::string& what) {
  throw ParseError(where(node) + ": " + what);
}

void check_keys(const toml::table& t, std::initializer_list<std::string_view> allowed, const std::string& ctx) {
  for (const auto& [key, node] : t) {
    if (std::find(allowed.begin(), allowed.end(), key.str()) == allowed.end()) {
      fail(node, "unknown key '" + std::string(key.str()) + "' in " + ctx);
    }
  }
}

double as_double(const toml::node& node, const std::string& ctx) {
  if (auto v = node.value<double>()) return *v;
  fail(node, ctx + " must be a number");
}

std::optional<double> opt_double(const toml::table& t, std::string_view key, const std::string& ctx) {
  const auto* node = t.get(key);
  if (!node) return std::nullopt;
  return as_double(*node, ctx + "." + std::string(key));
}

double req_double(const toml::table& t, std::string_view key, const std::string& ctx) {
  const auto* node = t.get(key);
  if (!node) {
    throw ParseError(where(t) + ": " + ctx + " is missing '" + std::string(key) + "'");
  }
  return as_double(*node, ctx + "." + std::string(key));
}

std::vector<double> as_doubles(const toml::node& node, const std::string& ctx) {
  const auto* arr = node.as_array();
  if (!arr) fail(node, ctx + " must be an array of numbers");
  std::vector<double> out;
  for (const auto& item : *arr) out.push_back(as_double(item, ctx));
  return out;
}

std::vector<std::vector<double>> as_matrix(const toml::node& node, const std::string& ctx) {
  const auto* arr = node.as_array();
  if (!arr) fail(node, ctx + " must be an array of arrays");
  std::vector<std::vector<double>> out;
  for (const auto& row : *arr) out.push_back(as_doubles(row, ctx));
  return out;
}

const toml::table& as_table(const toml::node& node, const std::string& ctx) {
  const auto* t = node.as_table();
  if (!t) fail(node, ctx + " must be a table");
  return *t;
}

DgpTable parse_strata(const toml::node& node) {
  const auto* arr = node.as_array();
  if (!arr || !arr->is_array_of_tables()) fail(node, "strata must be an array of tables ([[strata]])");
  DgpTable t;
  std::size_t index = 0;
  for (const auto& item : *arr) {
    const auto& row = *item.as_table();
    const std::string ctx = "strata[" + std::to_string(index) + "]";
    check_keys(row, {"id", "label", "p_R", "p_T", "pi", "mean0", "mean1", "var0", "var1"}, ctx);
    Stratum s{static_cast<StratumId>(index), ""};
    if (const auto* id = row.get("id")) {
      const auto v = id->value<std::int64_t>();
      if (!v || *v < 0) fail(*id, ctx + ".id must be a non-negative integer");
      s.id = static_cast<StratumId>(*v);
    }
    if (const auto* label = row.get("label")) {
      const auto v = label->value<std::string>();
      if (!v) fail(*label, ctx + ".label must be a string");
      s.label = *v;
    }
    t.strata.push_back(s);
    t.p_R.push_back(req_double(row, "p_R", ctx));
    t.p_T.push_back(req_double(row, "p_T", ctx));
    t.pi.push_back(req_double(row, "pi", ctx));
    t.outcomes.push_back({req_double(row, "mean0", ctx), req_double(row, "mean1", ctx),
                          req_double(row, "var0", ctx), req_double(row, "var1", ctx), NoiseFamily::gaussian});
    ++index;
  }
  // Rows may be listed in any id order.
  std::vector<std::size_t> order(t.strata.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return t.strata[a].id < t.strata[b].id; });
  DgpTable sorted;
  for (auto i : order) {
    sorted.strata.push_back(t.strata[i]);
    sorted.p_R.push_back(t.p_R[i]);
    sorted.p_T.push_back(t.p_T[i]);
    sorted.pi.push_back(t.pi[i]);
    sorted.outcomes.push_back(t.outcomes[i]);
  }
  return sorted;
}

ToyParams parse_toy(const toml::table& t) {
  check_keys(t, {"p_R1", "p_T1", "tau1", "tau0", "baseline_var", "pi"}, "toy");
  ToyParams p;
  p.p_R1 = opt_double(t, "p_R1", "toy").value_or(p.p_R1);
  p.p_T1 = opt_double(t, "p_T1", "toy").value_or(p.p_T1);
  p.tau1 = opt_double(t, "tau1", "toy").value_or(p.tau1);
  p.tau0 = opt_double(t, "tau0", "toy").value_or(p.tau0);
  p.baseline_var = opt_double(t, "baseline_var", "toy").value_or(p.baseline_var);
  p.pi = opt_double(t, "pi", "toy").value_or(p.pi);
  return p;
}

SemiSynthParams parse_semi(const toml::table& t, const std::filesystem::path& base_dir) {
  check_keys(t, {"noise_scale", "pi", "joint_csv", "joint", "x_sup", "marginals"}, "semi_synthetic");
  SemiSynthParams p;
  if (const auto* n = t.get("noise_scale")) p.noise_scale = as_doubles(*n, "semi_synthetic.noise_scale");
  p.pi = opt_double(t, "pi", "semi_synthetic").value_or(p.pi);
  if (const auto* m = t.get("marginals")) {
    const auto& tbl = as_table(*m, "semi_synthetic.marginals");
    for (const auto& [key, node] : tbl) {
      const std::string ctx = "semi_synthetic.marginals." + std::string(key.str());
      auto it = std::find_if(p.covariates.begin(), p.covariates.end(),
                             [&](const CovariateMarginal& c) { return c.name == key.str(); });
      if (it == p.covariates.end()) fail(node, "unknown covariate '" + std::string(key.str()) + "'");
      const auto& row = as_table(node, ctx);
      check_keys(row, {"trial", "target"}, ctx);
      if (const auto* v = row.get("trial")) it->trial = as_doubles(*v, ctx + ".trial");
      if (const auto* v = row.get("target")) it->target = as_doubles(*v, ctx + ".target");
    }
  }
  if (const auto* x = t.get("x_sup")) {
    const auto& tbl = as_table(*x, "semi_synthetic.x_sup");
    check_keys(tbl, {"q", "shift"}, "semi_synthetic.x_sup");
    SyntheticModifier s;
    if (const auto* v = tbl.get("q")) s.q = as_doubles(*v, "semi_synthetic.x_sup.q");
    if (const auto* v = tbl.get("shift")) s.shift = as_doubles(*v, "semi_synthetic.x_sup.shift");
    p.x_sup = s;
  }
  if (t.get("joint_csv") && t.get("joint")) fail(*t.get("joint"), "use either joint_csv or joint, not both");
  if (const auto* j = t.get("joint_csv")) {
    const auto v = j->value<std::string>();
    if (!v) fail(*j, "semi_synthetic.joint_csv must be a string");
    std::filesystem::path path(*v);
    if (path.is_relative() && !base_dir.empty()) path = base_dir / path;
    p.joint = load_joint_csv(path);
  }
  if (const auto* j = t.get("joint")) {
    const auto* arr = j->as_array();
    if (!arr || !arr->is_array_of_tables()) fail(*j, "semi_synthetic.joint must be [[semi_synthetic.joint]] tables");
    std::vector<JointRow> rows;
    for (const auto& item : *arr) {
      const auto& row = *item.as_table();
      check_keys(row, {"levels", "p_R", "p_T"}, "semi_synthetic.joint");
      JointRow r;
      const auto* lv = row.get("levels");
      if (!lv) fail(row, "semi_synthetic.joint row is missing 'levels'");
      for (double d : as_doubles(*lv, "semi_synthetic.joint.levels")) r.levels.push_back(static_cast<int>(d));
      r.p_R = req_double(row, "p_R", "semi_synthetic.joint");
      r.p_T = req_double(row, "p_T", "semi_synthetic.joint");
      rows.push_back(std::move(r));
    }
    p.joint = std::move(rows);
  }
  return p;
}

ExtendedDgpSpec parse_extended(const toml::table& t, const DgpSpec& base) {
  check_keys(t, {"aux_labels", "q_R", "q_T", "tau_shift"}, "extended");
  ExtendedDgpSpec ext{base, {}, {}, {}, {}};
  const auto* q_R = t.get("q_R");
  const auto* q_T = t.get("q_T");
  if (!q_R || !q_T) throw ParseError(where(t) + ": extended needs q_R and q_T");
  ext.q_R = as_doubles(*q_R, "extended.q_R");
  ext.q_T = as_doubles(*q_T, "extended.q_T");
  if (const auto* s = t.get("tau_shift")) {
    ext.tau_shift = as_matrix(*s, "extended.tau_shift");
    if (ext.tau_shift.size() == 1 && base.size() > 1) ext.tau_shift.assign(base.size(), ext.tau_shift.front());
  } else {
    ext.tau_shift.assign(base.size(), std::vector<double>(ext.q_R.size(), 0.0));
  }
  std::vector<std::string> labels;
  if (const auto* l = t.get("aux_labels")) {
    const auto* arr = l->as_array();
    if (!arr) fail(*l, "extended.aux_labels must be an array of strings");
    for (const auto& item : *arr) {
      const auto v = item.value<std::string>();
      if (!v) fail(item, "extended.aux_labels must be an array of strings");
      labels.push_back(*v);
    }
  }
  for (std::size_t v = 0; v < ext.q_R.size(); ++v) {
    ext.aux_support.push_back({static_cast<StratumId>(v), v < labels.size() ? labels[v] : "v" + std::to_string(v)});
  }
  ext.validate();
  return ext;
}

std::string quoted(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof buf, "\\u%04x", c);
          out += buf;
        } else {
          out += c;
        }
    }
  }
  return out + "\"";
}

std::string array(const std::vector<double>& v) {
  std::string out = "[";
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + format_double(v[i]);
  return out + "]";
}

}  // namespace

ScenarioDocument parse_scenario(const std::string& text, const std::filesystem::path& base_dir) {
  toml::table root;
  try {
    root = toml::parse(text);
  } catch (const toml::parse_error& e) {
    throw ParseError("line " + std::to_string(e.source().begin.line) + ", column " +
                     std::to_string(e.source().begin.column) + ": " + std::string(e.description()));
  }
  check_keys(root, {"strata", "toy", "semi_synthetic", "extended"}, "document");

  ScenarioDocument doc;
  if (const auto* s = root.get("strata")) doc.strata = parse_strata(*s);
  if (const auto* t = root.get("toy")) doc.toy = parse_toy(as_table(*t, "toy"));
  if (const auto* s = root.get("semi_synthetic")) {
    doc.semi_synthetic = parse_semi(as_table(*s, "semi_synthetic"), base_dir);
  }
  const int bases = int(doc.strata.has_value()) + int(doc.toy.has_value()) + int(doc.semi_synthetic.has_value());
  if (bases != 1) throw ParseError("document needs exactly one of [[strata]], [toy] or [semi_synthetic]");

  if (const auto* e = root.get("extended")) {
    if (doc.semi_synthetic) fail(*e, "[extended] applies to [[strata]] or [toy] only");
    const DgpSpec base = doc.strata ? DgpSpec::from_table(*doc.strata) : toy_dgp(*doc.toy);
    doc.extended = parse_extended(as_table(*e, "extended"), base);
  }
  return doc;
}

LoadedSpec materialize(const ScenarioDocument& doc) {
  if (doc.extended) return {doc.extended->flatten(), doc.extended, std::nullopt};
  if (doc.strata) return {DgpSpec::from_table(*doc.strata), std::nullopt, std::nullopt};
  if (doc.toy) return {toy_dgp(*doc.toy), std::nullopt, std::nullopt};
  if (doc.semi_synthetic) {
    auto model = semi_synthetic_model(*doc.semi_synthetic);
    return {std::move(model.spec), std::nullopt, std::move(model.layout)};
  }
  throw ParseError("empty scenario document");
}

LoadedSpec load_spec(const std::filesystem::path& path) {
  return materialize(parse_scenario(read_text_file(path), path.parent_path()));
}

std::string to_toml(const DgpSpec& spec) {
  std::string out;
  for (StratumId x = 0; x < spec.size(); ++x) {
    const auto& o = spec.outcome(x);
    out += "[[strata]]\n";
    out += "id = " + std::to_string(spec.strata()[x].id) + "\n";
    out += "label = " + quoted(spec.strata()[x].label) + "\n";
    out += "p_R = " + format_double(spec.p_R(x)) + "\n";
    out += "p_T = " + format_double(spec.p_T(x)) + "\n";
    out += "pi = " + format_double(spec.pi(x)) + "\n";
    out += "mean0 = " + format_double(o.mean0) + "\n";
    out += "mean1 = " + format_double(o.mean1) + "\n";
    out += "var0 = " + format_double(o.var0) + "\n";
    out += "var1 = " + format_double(o.var1) + "\n\n";
  }
  return out;
}

std::string to_toml(const ToyParams& p) {
  std::string out = "[toy]\n";
  out += "p_R1 = " + format_double(p.p_R1) + "\n";
  out += "p_T1 = " + format_double(p.p_T1) + "\n";
  out += "tau1 = " + format_double(p.tau1) + "\n";
  out += "tau0 = " + format_double(p.tau0) + "\n";
  out += "baseline_var = " + format_double(p.baseline_var) + "\n";
  out += "pi = " + format_double(p.pi) + "\n";
  return out;
}

std::string to_toml(const SemiSynthParams& p) {
  std::string out = "[semi_synthetic]\n";
  out += "noise_scale = " + array(p.noise_scale) + "\n";
  out += "pi = " + format_double(p.pi) + "\n";
  if (p.x_sup) {
    out += "\n[semi_synthetic.x_sup]\n";
    out += "q = " + array(p.x_sup->q) + "\n";
    out += "shift = " + array(p.x_sup->shift) + "\n";
  }
  for (const auto& c : p.covariates) {
    out += "\n[semi_synthetic.marginals." + c.name + "]\n";
    out += "trial = " + array(c.trial) + "\n";
    out += "target = " + array(c.target) + "\n";
  }
  if (p.joint) {
    for (const auto& row : *p.joint) {
      out += "\n[[semi_synthetic.joint]]\nlevels = [";
      for (std::size_t i = 0; i < row.levels.size(); ++i) out += (i ? ", " : "") + std::to_string(row.levels[i]);
      out += "]\np_R = " + format_double(row.p_R) + "\np_T = " + format_double(row.p_T) + "\n";
    }
  }
  return out;
}

std::string to_toml(const ExtendedDgpSpec& ext) {
  std::string out = to_toml(ext.base);
  out += "[extended]\naux_labels = [";
  for (std::size_t v = 0; v < ext.aux_support.size(); ++v) out += (v ? ", " : "") + quoted(ext.aux_support[v].label);
  out += "]\n";
  out += "q_R = " + array(ext.q_R) + "\n";
  out += "q_T = " + array(ext.q_T) + "\n";
  out += "tau_shift = [";
  for (std::size_t x = 0; x < ext.tau_shift.size(); ++x) out += (x ? ", " : "") + array(ext.tau_shift[x]);
  out += "]\n";
  return out;
}

}  // namespace ipsw

// Runs the ten acceptance criteria and prints one PASS/FAIL line for each.
// Exit status is 0 only when every criterion passes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ipsw/io.hpp"
#include "ipsw/scenarios.hpp"
#include "ipsw/simulate.hpp"
#include "ipsw/theory.hpp"
#include "support/oracle.hpp"

using namespace ipsw;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

std::string fmt(double v) { return format_double(std::round(v * 1e6) / 1e6); }

std::uint64_t seed_for(int criterion) { return derive_seed(0xacce97, static_cast<std::uint64_t>(criterion)); }

// (numerator variance / denominator variance) with paired delta-method SE.
VarianceRatio paired(const McReport& num, const McReport& den, EstimatorTag tag) {
  return paired_variance_ratio(num.at(tag).values, den.at(tag).values);
}

void criterion1(Outcome& o) {
  const auto spec = toy_dgp();
  McConfig cfg;
  cfg.n = 150;
  cfg.reps = 50000;
  cfg.seed = seed_for(1);
  cfg.estimators = {EstimatorTag::ipsw_oracle};
  cfg.workers = 1;
  const auto row = run_monte_carlo(spec, cfg).rows[0];
  const double z_mean = (row.mean - 5.1) / *row.mc_se;
  const double n = 150.0;
  const double scaled = n * *row.variance;
  const double z_var = (scaled - 41.59) / (n * *row.variance_mc_se);
  o.detail << "mean=" << fmt(row.mean) << " z=" << fmt(z_mean) << "; n*var=" << fmt(scaled)
           << " vs V_o=" << fmt(v_o(spec)) << " z=" << fmt(z_var);
  o.require(std::abs(v_o(spec) - 41.59) < 1e-12, "V_o constant");
  o.require(std::abs(z_mean) <= 4.0, "mean within 4 MC-SE");
  o.require(std::abs(z_var) <= 3.0, "n*var within 3 variance MC-SE");
}

void criterion2(Outcome& o) {
  const auto spec = toy_dgp();
  McConfig cfg;
  cfg.n = 3;
  cfg.m = 10;
  cfg.reps = 2000000;
  cfg.seed = seed_for(2);
  cfg.estimators = {EstimatorTag::ipsw_semi, EstimatorTag::ipsw_est, EstimatorTag::ipsw_semi_pihat,
                    EstimatorTag::ipsw_est_pihat};
  const auto report = run_monte_carlo(spec, cfg);
  for (const auto& row : report.rows) {
    const bool pihat = row.tag == EstimatorTag::ipsw_semi_pihat || row.tag == EstimatorTag::ipsw_est_pihat;
    const double exact = pihat ? bias_pihat(spec, 3) : bias_semi_oracle(spec, 3);
    const double z = (row.bias - exact) / *row.mc_se;
    o.detail << to_string(row.tag) << ": bias=" << fmt(row.bias) << " exact=" << fmt(exact) << " z=" << fmt(z)
             << "; ";
    o.require(std::abs(z) <= 4.0, std::string(to_string(row.tag)) + " bias within 4 MC-SE");
  }
}

void criterion3(Outcome& o) {
  std::mt19937_64 rng(seed_for(3));
  const std::vector<DgpSpec> specs{oracle::random_spec(rng, 1), toy_dgp(), oracle::random_spec(rng, 3)};
  double worst = 0.0;
  for (const auto& spec : specs) {
    for (std::size_t n = 1; n <= 5; ++n) {
      const auto semi = oracle::enumerate_moments(spec, n, 1, EstimatorTag::ipsw_semi);
      worst = std::max(worst, std::abs(var_semi_oracle_exact(spec, n) - semi.variance));
      const auto semi_pihat = oracle::enumerate_moments(spec, n, 1, EstimatorTag::ipsw_semi_pihat);
      worst = std::max(worst, std::abs(var_pihat_exact(spec, n, std::nullopt) - semi_pihat.variance));
      for (std::size_t m = 1; m <= 3; ++m) {
        const auto est = oracle::enumerate_moments(spec, n, m, EstimatorTag::ipsw_est);
        worst = std::max(worst, std::abs(var_estimated_exact(spec, n, m) - est.variance));
        const auto pihat = oracle::enumerate_moments(spec, n, m, EstimatorTag::ipsw_est_pihat);
        worst = std::max(worst, std::abs(var_pihat_exact(spec, n, m) - pihat.variance));
      }
    }
  }
  o.detail << "max |exact - enumeration| = " << worst << " over K in {1,2,3}, n<=5, m<=3";
  o.require(worst <= 1e-10, "agreement to 1e-10");
}

void criterion4(Outcome& o) {
  const auto spec = toy_dgp();
  const std::size_t n = 20000;
  const std::vector<SweepRegime> regimes{SweepRegime::ratio(0.1), SweepRegime::ratio(1.0), SweepRegime::ratio(10.0),
                                         SweepRegime::infinite()};
  const char* names[] = {"0.1", "1", "10", "inf"};
  for (std::size_t i = 0; i < regimes.size(); ++i) {
    const auto rows = regime_sweep(spec, {n}, regimes[i], 20000, derive_seed(seed_for(4), i),
                                   {EstimatorTag::ipsw_est, EstimatorTag::ipsw_est_pihat});
    for (const auto& row : rows) {
      const double rel = row.scaled_variance / *row.theory_asymptote - 1.0;
      o.detail << "lambda=" << names[i] << " " << to_string(row.tag) << ": " << fmt(row.scaled_variance) << " vs "
               << fmt(*row.theory_asymptote) << " (" << fmt(100 * rel) << "%); ";
      o.require(std::abs(rel) <= 0.05, std::string("lambda=") + names[i] + " " + std::string(to_string(row.tag)));
    }
  }
}

void criterion5(Outcome& o) {
  std::mt19937_64 rng(seed_for(5));
  std::size_t violations = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto s = oracle::random_spec(rng, 1 + static_cast<std::size_t>(i % 8));
    if (!(v_so_tilde_infty(s) <= v_so(s) && v_so(s) <= v_o(s))) ++violations;
  }
  o.require(violations == 0, "analytic chain");

  McConfig cfg;
  cfg.n = 150;
  cfg.m = 1000;
  cfg.reps = 5000;
  cfg.seed = seed_for(5);
  cfg.estimators = {EstimatorTag::ipsw_est, EstimatorTag::ipsw_est_pihat};
  cfg.keep_values = true;
  const auto report = run_monte_carlo(toy_dgp(), cfg);
  const auto r = paired_variance_ratio(report.at(EstimatorTag::ipsw_est_pihat).values,
                                       report.at(EstimatorTag::ipsw_est).values);
  const double sep = (1.0 - r.ratio) / r.se;
  o.detail << "chain violations=" << violations << "/1000; var(est_pihat)=" << fmt(*report.rows[1].variance)
           << " var(est)=" << fmt(*report.rows[0].variance) << " ratio=" << fmt(r.ratio) << " separation="
           << fmt(sep) << " SE";
  o.require(sep >= 3.0, "separation >= 3 SE");
}

void criterion6(Outcome& o) {
  std::mt19937_64 rng(seed_for(6));
  std::vector<DgpSpec> specs{toy_dgp()};
  for (int i = 0; i < 100; ++i) specs.push_back(oracle::random_spec(rng, 1 + static_cast<std::size_t>(i % 6)));
  std::size_t checks = 0;
  std::size_t failures = 0;
  double tightest = 0.0;  // max exact/bound ratio
  auto check = [&](double exact, double bound) {
    ++checks;
    if (!(exact <= bound)) ++failures;
    if (bound > 0) tightest = std::max(tightest, exact / bound);
  };
  for (const auto& s : specs) {
    for (std::size_t n = 1; n <= 50; ++n) {
      const double b1 = bias_semi_oracle(s, n);
      const double b2 = bias_pihat(s, n);
      const double vo = v_o(s) / static_cast<double>(n);
      check(vo, risk_bound(s, n, std::nullopt, EstimatorTag::ipsw_oracle));
      const double vs = var_semi_oracle_exact(s, n);
      check(b1 * b1 + vs, risk_bound(s, n, std::nullopt, EstimatorTag::ipsw_semi));
      check(vs, variance_bound(s, n, std::nullopt, EstimatorTag::ipsw_semi));
      const double vp = var_pihat_exact(s, n, std::nullopt);
      check(b2 * b2 + vp, risk_bound(s, n, std::nullopt, EstimatorTag::ipsw_semi_pihat));
      check(vp, variance_bound(s, n, std::nullopt, EstimatorTag::ipsw_semi_pihat));
      for (std::size_t m : {1u, 10u, 100u}) {
        const double ve = var_estimated_exact(s, n, m);
        check(b1 * b1 + ve, risk_bound(s, n, m, EstimatorTag::ipsw_est));
        check(ve, variance_bound(s, n, m, EstimatorTag::ipsw_est));
        const double vq = var_pihat_exact(s, n, m);
        check(b2 * b2 + vq, risk_bound(s, n, m, EstimatorTag::ipsw_est_pihat));
        check(vq, variance_bound(s, n, m, EstimatorTag::ipsw_est_pihat));
      }
    }
  }
  o.detail << checks << " comparisons on toy + 100 random specs, " << failures
           << " violations, max exact/bound=" << fmt(tightest);
  o.require(failures == 0, "exact <= bound everywhere");
}

void criterion7(Outcome& o) {
  const auto base = toy_dgp();
  std::vector<ShiftLevel> grid;
  for (double q : {0.5, 0.6, 0.7, 0.8, 0.9}) grid.push_back({{0.5, 0.5}, {1.0 - q, q}});
  McConfig cfg;
  cfg.n = 150;
  cfg.m = 1000;
  cfg.reps = 1000;
  cfg.seed = seed_for(7);
  cfg.estimators = {EstimatorTag::ipsw_semi_pihat};
  const auto rows = inflation_experiment(base, grid, cfg);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    // Finite-n exact ratio, reported to separate MC noise from small-sample bias.
    const auto ext = toy_extended_dgp(ToyParams{}, ShiftedNonModifier{grid[i].q_R, grid[i].q_T});
    const double exact_ratio =
        var_pihat_exact(ext.flatten(), cfg.n, std::nullopt) / var_pihat_exact(ext.marginal(), cfg.n, std::nullopt);
    const double rel = r.empirical_factor / r.theory_factor - 1.0;
    o.detail << "shift=" << fmt(r.shift_param) << ": emp=" << fmt(r.empirical_factor) << "+-" << fmt(r.mc_se)
             << " theory=" << fmt(r.theory_factor) << " (" << fmt(100 * rel) << "%, exact n=150 ratio "
             << fmt(exact_ratio) << "); ";
    o.require(std::abs(rel) <= 0.10, "shift " + fmt(r.shift_param) + " within 10%");
    if (i > 0) {
      o.require(r.theory_factor > rows[i - 1].theory_factor, "theory monotone");
      o.require(r.empirical_factor > rows[i - 1].empirical_factor, "empirical monotone");
    }
  }

  // Non-shifted modifier.
  const auto mod = toy_extended_dgp(ToyParams{}, NonShiftedModifier{{0.5, 0.5}, {{-2.0, 2.0}}});
  double gap = 0.0;
  for (bool pihat : {false, true}) {
    const auto rep = effect_modifier_reduction(mod, pihat);
    gap = std::max(gap, std::abs(rep.base_asymptotic_variance - rep.variance_reduction -
                                 rep.extended_asymptotic_variance));
  }
  o.require(gap <= 1e-10, "flattened = base - reduction");
  McConfig mc;
  mc.n = 3000;
  mc.reps = 1000;
  mc.seed = derive_seed(seed_for(7), 1);
  mc.estimators = {EstimatorTag::ipsw_semi_pihat};
  mc.keep_values = true;
  const auto reports = run_monte_carlo(mod.flatten(), mc, {mod.base_projection(), AdjustmentMap::identity(4)});
  const auto r = paired(reports[1], reports[0], EstimatorTag::ipsw_semi_pihat);
  const double sep = (1.0 - r.ratio) / r.se;
  o.detail << "modifier: |base - reduction - extended|=" << gap << ", var ratio (X,V)/X=" << fmt(r.ratio)
           << " separation=" << fmt(sep) << " SE";
  o.require(sep >= 3.0, "modifier reduces MC variance by >= 3 SE");
}

void criterion8(Outcome& o) {
  double worst = 0.0;
  bool bound_ok = true;
  bool pihat_ok = true;
  for (double p : {0.1, 0.3, 0.5, 0.9}) {
    for (std::size_t n = 0; n <= 20; ++n) {
      const double one_plus =
          oracle::binomial_expectation(n, p, [](std::size_t k) { return 1.0 / (1.0 + static_cast<double>(k)); });
      worst = std::max(worst, std::abs(e_recip_one_plus_binomial(n, p) - one_plus));
      if (n == 0) continue;
      const double trunc = oracle::binomial_expectation(
          n, p, [](std::size_t k) { return k ? 1.0 / static_cast<double>(k) : 0.0; });
      const double v = e_recip_trunc_binomial(n, p);
      worst = std::max(worst, std::abs(v - trunc));
      const double nn = static_cast<double>(n);
      bound_ok = bound_ok && nn * v <= 2.0 / ((nn + 1.0) * p) * nn;
      if (n <= 15) {
        for (double alpha : {0.1, 0.25, 0.4}) pihat_ok = pihat_ok && nn * trunc <= pihat_inverse_bound(n, p, alpha);
      }
    }
  }
  o.detail << "max |utility - enumeration| = " << worst << "; truncated bound " << (bound_ok ? "holds" : "violated")
           << "; pihat bound " << (pihat_ok ? "dominates" : "violated");
  o.require(worst <= 1e-12, "enumeration agreement");
  o.require(bound_ok, "2/((n+1)p) bound");
  o.require(pihat_ok, "pihat_inverse_bound dominance");
}

void criterion9(Outcome& o) {
  McConfig cfg;
  cfg.n = 3000;
  cfg.m = 10000;
  cfg.reps = 1000;
  cfg.estimators = {EstimatorTag::ipsw_est_pihat};
  cfg.keep_values = true;

  const auto base = semi_synthetic_model();
  cfg.seed = seed_for(9);
  const auto& layout = base.layout;
  const auto reports = run_monte_carlo(
      base.spec, cfg,
      {layout.projection(layout.parse_adjustment("minimal")), layout.projection(layout.parse_adjustment("minimal+glasgow"))});
  const auto up = paired(reports[1], reports[0], EstimatorTag::ipsw_est_pihat);
  const double sep_up = (up.ratio - 1.0) / up.se;
  o.detail << "glasgow: var ratio=" << fmt(up.ratio) << " separation=" << fmt(sep_up) << " SE; ";
  o.require(sep_up >= 3.0, "glasgow increases variance by >= 3 SE");

  SemiSynthParams with_sup;
  with_sup.x_sup = SyntheticModifier{};
  const auto sup = semi_synthetic_model(with_sup);
  cfg.seed = derive_seed(seed_for(9), 1);
  const auto sup_reports = run_monte_carlo(
      sup.spec, cfg,
      {sup.layout.projection(sup.layout.parse_adjustment("minimal")),
       sup.layout.projection(sup.layout.parse_adjustment("minimal+xsup"))});
  const auto down = paired(sup_reports[1], sup_reports[0], EstimatorTag::ipsw_est_pihat);
  const double sep_down = (1.0 - down.ratio) / down.se;
  o.detail << "x_sup: var ratio=" << fmt(down.ratio) << " separation=" << fmt(sep_down) << " SE";
  o.require(sep_down >= 3.0, "x_sup decreases variance by >= 3 SE");
}

void criterion10(Outcome& o) {
  McConfig cfg;
  cfg.n = 500;
  cfg.m = 10000;
  cfg.reps = 1000;
  cfg.seed = seed_for(10);
  cfg.estimators = {EstimatorTag::dm, EstimatorTag::ipsw_est_pihat};
  cfg.keep_values = true;
  const auto report = run_monte_carlo(heteroscedastic_dgp(), cfg);
  const auto r = paired_variance_ratio(report.at(EstimatorTag::ipsw_est_pihat).values,
                                       report.at(EstimatorTag::dm).values);
  const double sep = (1.0 - r.ratio) / r.se;
  o.detail << "var(ipsw_est_pihat)=" << fmt(*report.rows[1].variance) << " var(dm)=" << fmt(*report.rows[0].variance)
           << " ratio=" << fmt(r.ratio) << " separation=" << fmt(sep) << " SE";
  o.require(sep >= 3.0, "separation >= 3 SE");
}

struct Criterion {
  int id;
  const char* name;
  double time_limit_s;
  std::function<void(Outcome&)> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "oracle IPSW exactness", 30, criterion1},
      {2, "finite-sample bias formulas", 120, criterion2},
      {3, "exact variance vs brute force", 60, criterion3},
      {4, "asymptotic regimes", 600, criterion4},
      {5, "estimator ordering", 0, criterion5},
      {6, "risk-bound dominance", 0, criterion6},
      {7, "covariate selection", 0, criterion7},
      {8, "binomial utilities", 0, criterion8},
      {9, "semi-synthetic directions", 0, criterion9},
      {10, "heteroscedasticity", 0, criterion10},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    Outcome o;
    const auto start = std::chrono::steady_clock::now();
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " [exception: " << e.what() << "]";
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.time_limit_s > 0 && secs > c.time_limit_s) {
      o.pass = false;
      o.detail << " [failed: runtime over " << c.time_limit_s << " s]";
    }
    if (!o.pass) ++failed;
    std::printf("criterion %2d %s: %s | %s | %.2f s\n", c.id, o.pass ? "PASS" : "FAIL", c.name, o.detail.str().c_str(),
                secs);
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}

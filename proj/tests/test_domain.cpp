#include <doctest.h>

#include <random>

#include "ipsw/domain.hpp"
#include "ipsw/scenarios.hpp"
#include "support/oracle.hpp"

using namespace ipsw;
using doctest::Approx;

namespace {

DgpTable table2(std::vector<double> p_R, std::vector<double> p_T, double pi) {
  DgpTable t;
  t.strata = {{0, "a"}, {1, "b"}};
  t.p_R = std::move(p_R);
  t.p_T = std::move(p_T);
  t.pi = {pi, pi};
  t.outcomes = {{0.0, 3.0, 1.0, 1.0, NoiseFamily::gaussian}, {0.0, 10.0, 1.0, 1.0, NoiseFamily::gaussian}};
  return t;
}

bool has_kind(const std::vector<Violation>& v, ErrorKind k) {
  for (const auto& x : v) {
    if (x.kind == k) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("validate_dgp") {
  CHECK(validate_dgp(table2({0.25, 0.75}, {0.7, 0.3}, 0.5)).empty());
  CHECK(has_kind(validate_dgp(table2({1.0, 0.0}, {0.9, 0.1}, 0.5)), ErrorKind::support_violation));
  CHECK(has_kind(validate_dgp(table2({0.5, 0.5}, {0.5, 0.5}, 1.0)), ErrorKind::pi_out_of_range));
  CHECK(has_kind(validate_dgp(table2({0.5, 0.6}, {0.5, 0.5}, 0.5)), ErrorKind::probability_not_normalized));

  // Every violation is reported, not just the first.
  auto bad = table2({0.5, 0.6}, {0.5, 0.5}, 0.0);
  bad.outcomes[1].var0 = -1.0;
  const auto v = validate_dgp(bad);
  CHECK(has_kind(v, ErrorKind::probability_not_normalized));
  CHECK(has_kind(v, ErrorKind::pi_out_of_range));
  CHECK(has_kind(v, ErrorKind::negative_variance));

  DgpTable empty;
  CHECK(has_kind(validate_dgp(empty), ErrorKind::empty_support));

  try {
    DgpSpec::from_table(table2({0.25, 0.75}, {0.7, 0.4}, 0.5));
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    REQUIRE(!e.violations().empty());
    CHECK(e.violations().front().field == "p_T");
  }
}

TEST_CASE("zero strata are dropped and renumbered") {
  DgpTable t;
  t.strata = {{0, "a"}, {1, "gone"}, {2, "c"}};
  t.p_R = {0.5, 0.0, 0.5};
  t.p_T = {0.2, 0.0, 0.8};
  t.pi = {0.5, 0.5, 0.5};
  t.outcomes.assign(3, StratumOutcomeModel{});
  const auto spec = DgpSpec::from_table(t);
  REQUIRE(spec.size() == 2);
  CHECK(spec.strata()[1].label == "c");
  CHECK(spec.strata()[1].id == 1);
  CHECK(spec.p_T(1) == 0.8);
}

TEST_CASE("estimands on the toy spec") {
  const auto spec = toy_dgp();
  CHECK(probability_ratio(spec, 1) == Approx(0.4).epsilon(1e-15));
  CHECK(probability_ratio(spec, 0) == Approx(2.8).epsilon(1e-15));
  CHECK(true_ate(spec) == Approx(5.1).epsilon(1e-15));
  CHECK(trial_ate(spec) == Approx(8.25).epsilon(1e-15));
  CHECK_THROWS_AS(probability_ratio(spec, 2), ValidationError);

  const auto same = DgpSpec::from_table(table2({0.4, 0.6}, {0.4, 0.6}, 0.5));
  CHECK(probability_ratio(same, 0) == 1.0);
  CHECK(true_ate(same) == trial_ate(same));
}

TEST_CASE("estimand identities on random specs") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    const auto s = oracle::random_spec(rng, 1 + i % 6);
    double w = 0.0;
    double gap = 0.0;
    for (StratumId x = 0; x < s.size(); ++x) {
      w += s.p_R(x) * probability_ratio(s, x);
      gap += (s.p_T(x) - s.p_R(x)) * s.cate(x);
    }
    CHECK(w == Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(true_ate(s) - trial_ate(s)) == Approx(std::abs(gap)).epsilon(1e-9));
  }
}

TEST_CASE("samples validate") {
  TrialSample t{2, {0, 1}, {1, 0}, {1.0, 2.0}};
  CHECK_NOTHROW(t.validate());
  t.a[0] = 2;
  CHECK_THROWS_AS(t.validate(), ValidationError);
  TrialSample bad_id{2, {0, 2}, {1, 0}, {1.0, 2.0}};
  CHECK_THROWS_AS(bad_id.validate(), ValidationError);
  TrialSample ragged{2, {0}, {1, 0}, {1.0}};
  CHECK_THROWS_AS(ragged.validate(), ValidationError);
  TrialSample empty{2, {}, {}, {}};
  CHECK_THROWS_AS(empty.validate(), ValidationError);
  TargetSample target{2, {}};
  CHECK_THROWS_AS(target.validate(), ValidationError);
}

TEST_CASE("collapse") {
  const auto spec = toy_dgp();
  const auto one = collapse(spec, AdjustmentMap{{0, 0}, 1});
  REQUIRE(one.size() == 1);
  CHECK(one.p_R(0) == Approx(1.0));
  // trial-weighted CATE
  CHECK(one.cate(0) == Approx(8.25));
  // mixture variance of mean1: 0.25*9 + 0.75*100 - 8.25^2 + within variance 1
  CHECK(one.outcome(0).var1 == Approx(0.25 * 9 + 0.75 * 100 - 8.25 * 8.25 + 1.0));
  const auto same = collapse(spec, AdjustmentMap::identity(2));
  for (StratumId x = 0; x < 2; ++x) {
    CHECK(same.p_R(x) == spec.p_R(x));
    CHECK(same.p_T(x) == spec.p_T(x));
    CHECK(same.cate(x) == Approx(spec.cate(x)).epsilon(1e-14));
    CHECK(same.outcome(x).var1 == Approx(spec.outcome(x).var1).epsilon(1e-12));
  }
  CHECK_THROWS_AS(collapse(spec, AdjustmentMap{{0, 3}, 2}), ValidationError);
}

TEST_CASE("extended spec") {
  const auto base = toy_dgp();
  ExtendedDgpSpec ext{base, {{0, "v0"}, {1, "v1"}}, {0.5, 0.5}, {0.7, 0.3}, {{0.0, 0.0}, {0.0, 0.0}}};
  CHECK_NOTHROW(ext.validate());
  CHECK(ext.is_non_modifier());
  CHECK(!ext.is_non_shifted());
  const auto flat = ext.flatten();
  REQUIRE(flat.size() == 4);
  CHECK(flat.p_R(1) == Approx(0.25 * 0.5));
  CHECK(flat.p_T(3) == Approx(0.3 * 0.3));
  CHECK(true_ate(flat) == Approx(true_ate(base)).epsilon(1e-14));
  const auto marg = ext.marginal();
  CHECK(marg.p_T(0) == Approx(0.7));
  CHECK(marg.cate(1) == Approx(10.0));
  CHECK(ext.base_projection().coarse_of == std::vector<StratumId>{0, 0, 1, 1});

  ExtendedDgpSpec mod{base, {{0, "v0"}, {1, "v1"}}, {0.5, 0.5}, {0.5, 0.5}, {{-2.0, 2.0}, {-2.0, 2.0}}};
  CHECK_NOTHROW(mod.validate());
  CHECK(mod.is_non_shifted());
  CHECK(!mod.is_non_modifier());
  const auto mflat = mod.flatten();
  CHECK(mflat.cate(0) == Approx(1.0));
  CHECK(mflat.cate(1) == Approx(5.0));
  CHECK(true_ate(mflat) == Approx(true_ate(base)));
  // marginal CATE equals the base CATE
  CHECK(mod.marginal().cate(0) == Approx(3.0));

  ExtendedDgpSpec uncentered = mod;
  uncentered.tau_shift = {{1.0, 2.0}, {0.0, 0.0}};
  try {
    uncentered.validate();
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(e.has(ErrorKind::tau_shift_not_centered));
  }
  ExtendedDgpSpec unsupported = ext;
  unsupported.q_R = {1.0, 0.0};
  CHECK_THROWS_AS(unsupported.validate(), ValidationError);
}

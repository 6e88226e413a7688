#include "ipsw/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace ipsw {

namespace {

void require(bool ok, const char* field, const std::string& message) {
  if (!ok) throw ValidationError(ErrorKind::parameter_out_of_range, field, message);
}

void require_open_unit(double p, const char* field) {
  require(p > 0.0 && p < 1.0, field, "needs 0 < p < 1");
}

void require_n(std::size_t n) { require(n >= 1, "n", "needs n >= 1"); }

void require_m(std::optional<std::size_t> m) {
  if (m) require(*m >= 1, "m", "needs m >= 1");
}

double pow_n(double base, std::size_t n) {
  return std::pow(std::max(base, 0.0), static_cast<double>(n));
}

// E[1{Z>0}/Z] for Z ~ Bin(n, p) on the closed interval p in [0, 1].
double recip_trunc(std::size_t n, double p) {
  if (n == 0 || p <= 0.0) return 0.0;
  if (p >= 1.0) return 1.0 / static_cast<double>(n);
  const double log_p = std::log(p);
  const double log_q = std::log1p(-p);
  const double nn = static_cast<double>(n);
  const double lg_n = std::lgamma(nn + 1.0);
  double total = 0.0;
  for (std::size_t k = 1; k <= n; ++k) {
    const double kk = static_cast<double>(k);
    const double log_w =
        lg_n - std::lgamma(kk + 1.0) - std::lgamma(nn - kk + 1.0) + kk * log_p + (nn - kk) * log_q;
    total += std::exp(log_w) / kk;
  }
  return total;
}

// E[a^Z], Z ~ Bin(n, p)
double gen1(std::size_t n, double p, double a) { return pow_n(a * p + 1.0 - p, n); }

// E[a^Zx b^Zy], (Zx, Zy) multinomial margins with cell probabilities px, py.
double gen2(std::size_t n, double px, double py, double a, double b) {
  return pow_n(a * px + b * py + 1.0 - px - py, n);
}

// Conditional mean of a stratum estimate given its count z, written as
// c0 + sum_j c_j base_j^z, plus its conditional-variance expectation.
struct GeoTerm {
  double coef;
  double base;
};

struct StratumLaw {
  double p = 0.0;       // p_R(x), law of Z
  double weight = 0.0;  // p_T(x)
  double constant = 0.0;
  GeoTerm terms[2] = {{0.0, 0.0}, {0.0, 0.0}};
  int n_terms = 0;
  double mean_cond_var = 0.0;  // E[Var[estimate | Z]]
};

double law_mean(const StratumLaw& s, std::size_t n) {
  double v = s.constant;
  for (int j = 0; j < s.n_terms; ++j) v += s.terms[j].coef * gen1(n, s.p, s.terms[j].base);
  return v;
}

double law_cov(const StratumLaw& s, const StratumLaw& t, std::size_t n, bool same) {
  double v = 0.0;
  for (int j = 0; j < s.n_terms; ++j) {
    for (int k = 0; k < t.n_terms; ++k) {
      const double a = s.terms[j].base;
      const double b = t.terms[k].base;
      const double joint = same ? gen1(n, s.p, a * b) : gen2(n, s.p, t.p, a, b);
      v += s.terms[j].coef * t.terms[k].coef * (joint - gen1(n, s.p, a) * gen1(n, t.p, b));
    }
  }
  return v;
}

// Var[sum_x W_x D_x] where W = p_T (m absent) or multinomial target
// frequencies, independent of the trial.
double weighted_variance(const std::vector<StratumLaw>& laws, std::size_t n, std::optional<std::size_t> m) {
  double var_sum = 0.0;
  double mean_sq_x = 0.0;
  double mean_x = 0.0;
  double noise = 0.0;
  const double inv_m = m ? 1.0 / static_cast<double>(*m) : 0.0;
  for (std::size_t i = 0; i < laws.size(); ++i) {
    const auto& s = laws[i];
    if (s.weight == 0.0) continue;
    const double var_i = law_cov(s, s, n, true);
    const double mean_i = law_mean(s, n);
    var_sum += s.weight * s.weight * var_i;
    for (std::size_t j = i + 1; j < laws.size(); ++j) {
      if (laws[j].weight == 0.0) continue;
      var_sum += 2.0 * s.weight * laws[j].weight * law_cov(s, laws[j], n, false);
    }
    mean_x += s.weight * mean_i;
    mean_sq_x += s.weight * (var_i + mean_i * mean_i);
    noise += (s.weight * (1.0 - s.weight) * inv_m + s.weight * s.weight) * s.mean_cond_var;
  }
  const double var_x = mean_sq_x - mean_x * mean_x;
  return inv_m * (var_x - var_sum) + var_sum + noise;
}

double min_p_R(const DgpSpec& spec) {
  double lo = 1.0;
  for (double p : spec.p_R()) lo = std::min(lo, p);
  return lo;
}

double target_tau_sq(const DgpSpec& spec) {
  double s = 0.0;
  for (StratumId x = 0; x < spec.size(); ++x) s += spec.p_T(x) * spec.cate(x) * spec.cate(x);
  return s;
}

double target_outcome_sq(const DgpSpec& spec) {
  double s = 0.0;
  for (StratumId x = 0; x < spec.size(); ++x) {
    const auto& o = spec.outcome(x);
    s += spec.p_T(x) * (o.second_moment1() + o.second_moment0());
  }
  return s;
}

bool is_pihat(EstimatorTag tag) {
  return tag == EstimatorTag::ipsw_semi_pihat || tag == EstimatorTag::ipsw_est_pihat;
}

// Validates the (tag, m) pair and returns the m the formulas should use.
std::optional<std::size_t> resolve_m(EstimatorTag tag, std::optional<std::size_t> m) {
  switch (tag) {
    case EstimatorTag::ht:
    case EstimatorTag::dm:
    case EstimatorTag::ps:
      throw ValidationError(ErrorKind::variant_parameter_mismatch, "estimator",
                            std::string(to_string(tag)) + " has no closed-form theory");
    case EstimatorTag::ipsw_est:
    case EstimatorTag::ipsw_est_pihat:
      if (!m) {
        throw ValidationError(ErrorKind::variant_parameter_mismatch, "m",
                              std::string(to_string(tag)) + " needs a finite target size m");
      }
      require_m(m);
      return m;
    default:
      return std::nullopt;
  }
}

struct BoundTerms {
  double v_main;     // V_so or the max-over-k tilde constant
  double v_shift;    // E_R[p_T(1-p_T)/p_R^2 V]
};

BoundTerms bound_terms(const DgpSpec& spec, std::size_t n, bool pihat) {
  BoundTerms b{0.0, 0.0};
  for (StratumId x = 0; x < spec.size(); ++x) {
    const double v = pihat ? v_dm_stratum_max(spec, x, n) : v_ht_stratum(spec, x);
    const double pt = spec.p_T(x);
    b.v_main += pt * pt / spec.p_R(x) * v;
    b.v_shift += pt * (1.0 - pt) / spec.p_R(x) * v;
  }
  return b;
}

double bound(const DgpSpec& spec, std::size_t n, std::optional<std::size_t> m, EstimatorTag tag,
             bool risk) {
  require_n(n);
  const auto mm = resolve_m(tag, m);
  const double nn = static_cast<double>(n);
  if (tag == EstimatorTag::ipsw_oracle) return v_o(spec) / nn;

  const bool pihat = is_pihat(tag);
  const auto terms = bound_terms(spec, n, pihat);
  const double inv_m = mm ? 1.0 / static_cast<double>(*mm) : 0.0;
  double out = 2.0 * terms.v_main / (nn + 1.0);
  if (mm) out += target_cate_variance(spec) * inv_m + 2.0 * inv_m / (nn + 1.0) * terms.v_shift;

  if (!pihat) {
    const double q = 1.0 - min_p_R(spec);
    const double e = target_tau_sq(spec);
    if (risk) return out + 2.0 * pow_n(q, n) * e * (1.0 + 2.0 * inv_m);
    if (!mm) return out + pow_n(q, n) * e;
    return out + std::pow(q, nn / 2.0) * e * (1.0 + 4.0 * inv_m);
  }

  double lo = 1.0;
  for (StratumId x = 0; x < spec.size(); ++x) {
    const double pt = std::max(spec.pi(x), 1.0 - spec.pi(x));
    lo = std::min(lo, (risk ? 1.0 - pt : 1.0 - pt * pt) * spec.p_R(x));
  }
  const double e = target_outcome_sq(spec);
  const double rate = std::pow(1.0 - lo, nn / 2.0);
  if (risk) return out + 2.0 * (2.0 + 3.0 * inv_m) * rate * e;
  return out + 2.0 * (1.0 + 3.0 * inv_m) * rate * e;
}

}  // namespace

// ---- binomial utilities -----------------------------------------------------

double e_recip_trunc_binomial(std::size_t n, double p) {
  require_n(n);
  require_open_unit(p, "p");
  return recip_trunc(n, p);
}

double e_recip_one_plus_binomial(std::size_t n, double p) {
  require_open_unit(p, "p");
  const double n1 = static_cast<double>(n) + 1.0;
  return -std::expm1(n1 * std::log1p(-p)) / (n1 * p);
}

double pihat_inverse_bound(std::size_t n, double pi, double alpha) {
  require_n(n);
  require_open_unit(pi, "pi");
  require(alpha > 0.0 && alpha < 0.5, "alpha", "needs 0 < alpha < 1/2");
  const double g = 1.0 - 2.0 * alpha;
  const double c = 1.0 + 2.0 * std::pow(16.0 / (pi * pi * g), 2.0 / g);
  return (1.0 + c * std::pow(static_cast<double>(n), -alpha)) / pi;
}

std::vector<double> e_recip_trunc_sequence(std::size_t n_max, double p) {
  require(p >= 0.0 && p <= 1.0, "p", "needs 0 <= p <= 1");
  std::vector<double> g(n_max + 1, 0.0);
  const double q = 1.0 - p;
  double q_pow = 1.0;
  for (std::size_t z = 0; z < n_max; ++z) {
    q_pow *= q;
    g[z + 1] = q * g[z] + (1.0 - q_pow) / static_cast<double>(z + 1);
  }
  return g;
}

// ---- per-stratum constants ---------------------------------------------------

double v_ht_stratum(const DgpSpec& spec, StratumId x) {
  const auto& o = spec.outcome(x);
  const double pi = spec.pi(x);
  return o.second_moment1() / pi + o.second_moment0() / (1.0 - pi) - o.cate() * o.cate();
}

double v_dm_stratum_infty(const DgpSpec& spec, StratumId x) {
  const auto& o = spec.outcome(x);
  const double pi = spec.pi(x);
  return o.var1 / pi + o.var0 / (1.0 - pi);
}

namespace {

// Var[DM | k units] beyond the noise terms: variance of the empty-arm
// indicators' contribution. Zero for k = 0.
double dm_indicator_var(const StratumOutcomeModel& o, double pi, std::size_t k) {
  if (k == 0) return 0.0;
  const double a = pow_n(1.0 - pi, k);
  const double b = pow_n(pi, k);
  const double c = o.mean1 * a - o.mean0 * b;
  return o.mean1 * o.mean1 * a + o.mean0 * o.mean0 * b - c * c;
}

}  // namespace

double v_dm_stratum_finite(const DgpSpec& spec, StratumId x, std::size_t k) {
  require(k >= 1, "k", "needs k >= 1");
  const auto& o = spec.outcome(x);
  const double pi = spec.pi(x);
  const double v = o.var1 * recip_trunc(k, pi) + o.var0 * recip_trunc(k, 1.0 - pi) +
                   dm_indicator_var(o, pi, k);
  return static_cast<double>(k) * v;
}

double v_dm_stratum_max(const DgpSpec& spec, StratumId x, std::size_t n) {
  require_n(n);
  const auto& o = spec.outcome(x);
  const double pi = spec.pi(x);
  const auto g1 = e_recip_trunc_sequence(n, pi);
  const auto g0 = e_recip_trunc_sequence(n, 1.0 - pi);
  double best = 0.0;
  for (std::size_t k = 1; k <= n; ++k) {
    const double v = o.var1 * g1[k] + o.var0 * g0[k] + dm_indicator_var(o, pi, k);
    best = std::max(best, static_cast<double>(k) * v);
  }
  return best;
}

// ---- asymptotic variance constants ------------------------------------------

double v_o(const DgpSpec& spec) {
  double mean = 0.0;
  double second = 0.0;
  for (StratumId x = 0; x < spec.size(); ++x) {
    const double wt = probability_ratio(spec, x) * spec.cate(x);
    mean += spec.p_R(x) * wt;
    second += spec.p_R(x) * wt * wt;
  }
  return second - mean * mean + v_so(spec);
}

double v_so(const DgpSpec& spec) {
  double s = 0.0;
  for (StratumId x = 0; x < spec.size(); ++x) {
    s += spec.p_T(x) * spec.p_T(x) / spec.p_R(x) * v_ht_stratum(spec, x);
  }
  return s;
}

double v_so_tilde_infty(const DgpSpec& spec) {
  double s = 0.0;
  for (StratumId x = 0; x < spec.size(); ++x) {
    s += spec.p_T(x) * spec.p_T(x) / spec.p_R(x) * v_dm_stratum_infty(spec, x);
  }
  return s;
}

// ---- exact finite-sample moments ---------------------------------------------

double bias_semi_oracle(const DgpSpec& spec, std::size_t n) {
  require_n(n);
  double b = 0.0;
  for (StratumId x = 0; x < spec.size(); ++x) {
    b -= spec.p_T(x) * pow_n(1.0 - spec.p_R(x), n) * spec.cate(x);
  }
  return b;
}

double bias_pihat(const DgpSpec& spec, std::size_t n) {
  require_n(n);
  double b = 0.0;
  for (StratumId x = 0; x < spec.size(); ++x) {
    const auto& o = spec.outcome(x);
    const double p = spec.p_R(x);
    const double pi = spec.pi(x);
    b += spec.p_T(x) * (o.mean0 * pow_n(1.0 - p * (1.0 - pi), n) - o.mean1 * pow_n(1.0 - p * pi, n));
  }
  return b;
}

namespace {

// HT_x given Z = z: mean tau 1{z>0}, variance V_HT / z.
std::vector<StratumLaw> ht_laws(const DgpSpec& spec, std::size_t n) {
  std::vector<StratumLaw> laws(spec.size());
  for (StratumId x = 0; x < spec.size(); ++x) {
    auto& s = laws[x];
    s.p = spec.p_R(x);
    s.weight = spec.p_T(x);
    s.constant = spec.cate(x);
    s.terms[0] = {-spec.cate(x), 0.0};
    s.n_terms = 1;
    s.mean_cond_var = v_ht_stratum(spec, x) * recip_trunc(n, s.p);
  }
  return laws;
}

// DM_x given Z = z: mean tau - m1 (1-pi)^z + m0 pi^z, variance v(z).
std::vector<StratumLaw> dm_laws(const DgpSpec& spec, std::size_t n) {
  std::vector<StratumLaw> laws(spec.size());
  for (StratumId x = 0; x < spec.size(); ++x) {
    const auto& o = spec.outcome(x);
    const double pi = spec.pi(x);
    const double a = 1.0 - pi;
    const double b = pi;
    auto& s = laws[x];
    s.p = spec.p_R(x);
    s.weight = spec.p_T(x);
    s.constant = o.cate();
    s.terms[0] = {-o.mean1, a};
    s.terms[1] = {o.mean0, b};
    s.n_terms = 2;
    // Thinning: the treated count in x is Binomial(n, p pi).
    const double noise = o.var1 * recip_trunc(n, s.p * pi) + o.var0 * recip_trunc(n, s.p * a);
    const double m1 = o.mean1;
    const double m0 = o.mean0;
    const double e_d = m1 * m1 * gen1(n, s.p, a) + m0 * m0 * gen1(n, s.p, b) -
                       m1 * m1 * gen1(n, s.p, a * a) + 2.0 * m1 * m0 * gen1(n, s.p, a * b) -
                       m0 * m0 * gen1(n, s.p, b * b);
    // The closed form evaluates to 2 m1 m0 at z = 0 where the true value is 0.
    s.mean_cond_var = noise + e_d - pow_n(1.0 - s.p, n) * 2.0 * m1 * m0;
  }
  return laws;
}

}  // namespace

double var_semi_oracle_exact(const DgpSpec& spec, std::size_t n) {
  require_n(n);
  return weighted_variance(ht_laws(spec, n), n, std::nullopt);
}

double var_estimated_exact(const DgpSpec& spec, std::size_t n, std::size_t m) {
  require_n(n);
  require_m(m);
  return weighted_variance(ht_laws(spec, n), n, m);
}

double var_pihat_exact(const DgpSpec& spec, std::size_t n, std::optional<std::size_t> m) {
  require_n(n);
  require_m(m);
  return weighted_variance(dm_laws(spec, n), n, m);
}

// ---- asymptotic regimes ------------------------------------------------------

AsymptoticRegime AsymptoticRegime::finite(double lambda) {
  require(std::isfinite(lambda) && lambda >= 0.0, "lambda", "needs a finite lambda >= 0");
  return {lambda, false};
}

double asymptotic_variance(const DgpSpec& spec, AsymptoticRegime regime, bool pihat) {
  const double v = pihat ? v_so_tilde_infty(spec) : v_so(spec);
  if (regime.is_infinite) return v;
  const double var_t = target_cate_variance(spec);
  if (regime.lambda == 0.0) return var_t;
  return std::min(1.0, regime.lambda) * (var_t / regime.lambda + v);
}

// ---- bounds -----------------------------------------------------------------

double risk_bound(const DgpSpec& spec, std::size_t n, std::optional<std::size_t> m, EstimatorTag tag) {
  return bound(spec, n, m, tag, true);
}

double variance_bound(const DgpSpec& spec, std::size_t n, std::optional<std::size_t> m,
                      EstimatorTag tag) {
  return bound(spec, n, m, tag, false);
}

// ---- report -----------------------------------------------------------------

TheoryConstants theory_constants(const DgpSpec& spec) {
  return {v_o(spec), v_so(spec), v_so_tilde_infty(spec), target_cate_variance(spec), true_ate(spec)};
}

TheoryReport theory_report(const DgpSpec& spec, std::size_t n, std::optional<std::size_t> m,
                           EstimatorTag tag, bool exact_variance) {
  require_n(n);
  const auto mm = resolve_m(tag, m);
  TheoryReport r;
  r.tag = tag;
  r.n = n;
  r.m = m;
  r.constants = theory_constants(spec);
  r.variance_bound = variance_bound(spec, n, m, tag);
  r.risk_bound = risk_bound(spec, n, m, tag);

  const auto regime = mm ? AsymptoticRegime::finite(static_cast<double>(*mm) / static_cast<double>(n))
                         : AsymptoticRegime::infinite();
  switch (tag) {
    case EstimatorTag::ipsw_oracle:
      r.bias = 0.0;
      r.variance_exact = r.constants.v_o / static_cast<double>(n);
      r.asymptotic_variance = r.constants.v_o;
      break;
    case EstimatorTag::ipsw_semi:
    case EstimatorTag::ipsw_est:
      r.bias = bias_semi_oracle(spec, n);
      if (exact_variance) {
        r.variance_exact = mm ? var_estimated_exact(spec, n, *mm) : var_semi_oracle_exact(spec, n);
      }
      r.asymptotic_variance = asymptotic_variance(spec, regime, false);
      break;
    default:
      r.bias = bias_pihat(spec, n);
      if (exact_variance) r.variance_exact = var_pihat_exact(spec, n, mm);
      r.asymptotic_variance = asymptotic_variance(spec, regime, true);
      break;
  }
  return r;
}

// ---- adjustment sets --------------------------------------------------------

double inflation_factor(std::span<const double> q_R, std::span<const double> q_T) {
  if (q_R.size() != q_T.size() || q_R.empty()) {
    throw ValidationError(ErrorKind::dimension_mismatch, "q", "q_R and q_T need equal, nonzero length");
  }
  double f = 0.0;
  for (std::size_t v = 0; v < q_R.size(); ++v) {
    if (q_T[v] == 0.0) continue;
    if (!(q_R[v] > 0.0)) {
      throw ValidationError(ErrorKind::support_violation, "q_R",
                            "level " + std::to_string(v) + " has q_T > 0 but q_R = 0");
    }
    f += q_T[v] * q_T[v] / q_R[v];
  }
  return f;
}

namespace {

double semi_oracle_constant(const DgpSpec& spec, bool pihat) {
  return pihat ? v_so_tilde_infty(spec) : v_so(spec);
}

}  // namespace

AdjustmentSetReport effect_modifier_reduction(const ExtendedDgpSpec& ext, bool pihat) {
  ext.validate();
  if (!ext.is_non_shifted()) {
    throw ValidationError(ErrorKind::not_non_shifted, "q", "q_R and q_T differ");
  }
  AdjustmentSetReport r;
  r.inflation_factor = inflation_factor(ext.q_R, ext.q_T);
  const auto& base = ext.base;
  for (StratumId x = 0; x < base.size(); ++x) {
    double mean = 0.0;
    double second = 0.0;
    for (std::size_t v = 0; v < ext.aux_size(); ++v) {
      mean += ext.q_T[v] * ext.tau_shift[x][v];
      second += ext.q_T[v] * ext.tau_shift[x][v] * ext.tau_shift[x][v];
    }
    r.variance_reduction += base.p_T(x) * base.p_T(x) / base.p_R(x) * (second - mean * mean);
  }
  r.base_asymptotic_variance = semi_oracle_constant(ext.marginal(), pihat);
  r.extended_asymptotic_variance = semi_oracle_constant(ext.flatten(), pihat);
  return r;
}

AdjustmentSetReport shifted_covariate_inflation(const ExtendedDgpSpec& ext, bool pihat) {
  ext.validate();
  if (!ext.is_non_modifier()) {
    throw ValidationError(ErrorKind::parameter_out_of_range, "tau_shift",
                          "a shifted non-modifier needs tau_shift identically zero");
  }
  AdjustmentSetReport r;
  r.inflation_factor = inflation_factor(ext.q_R, ext.q_T);
  r.base_asymptotic_variance = semi_oracle_constant(ext.marginal(), pihat);
  r.extended_asymptotic_variance = semi_oracle_constant(ext.flatten(), pihat);
  return r;
}

}  // namespace ipsw

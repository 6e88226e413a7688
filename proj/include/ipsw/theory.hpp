#pragma once

// Closed-form finite-sample and asymptotic properties of the IPSW family.
//
// Conventions: n is the trial size, m the target size. An absent m
// (std::nullopt) stands for an infinite target sample, i.e. p_T known.
// Variances are of the estimator itself, not scaled by n.

#include <cstddef>
#include <optional>
#include <vector>

#include "ipsw/domain.hpp"
#include "ipsw/estimators.hpp"

namespace ipsw {

// ---- binomial utilities -----------------------------------------------------

/// E[1{Z>0}/Z] for Z ~ Binomial(n, p). Requires n >= 1 and 0 < p < 1.
double e_recip_trunc_binomial(std::size_t n, double p);

/// E[1/(1+B)] for B ~ Binomial(n, p). Requires 0 < p < 1.
double e_recip_one_plus_binomial(std::size_t n, double p);

/// (1 + C n^-alpha) / pi with C = 1 + 2 (16 / (pi^2 (1 - 2 alpha)))^(2 / (1 - 2 alpha)).
double pihat_inverse_bound(std::size_t n, double pi, double alpha);

/// E[1{Z>0}/Z] for Z ~ Binomial(z, p), z = 0..n_max, by forward recurrence.
/// Accepts p in [0, 1].
std::vector<double> e_recip_trunc_sequence(std::size_t n_max, double p);

// ---- per-stratum constants ---------------------------------------------------

/// E[Y1^2]/pi + E[Y0^2]/(1-pi) - tau^2
double v_ht_stratum(const DgpSpec& spec, StratumId x);
/// var1/pi + var0/(1-pi)
double v_dm_stratum_infty(const DgpSpec& spec, StratumId x);
/// k Var[DM on k units of stratum x]. Requires k >= 1.
double v_dm_stratum_finite(const DgpSpec& spec, StratumId x, std::size_t k);
/// max over 1 <= k <= n of v_dm_stratum_finite(spec, x, k).
double v_dm_stratum_max(const DgpSpec& spec, StratumId x, std::size_t n);

// ---- asymptotic variance constants ------------------------------------------

double v_o(const DgpSpec& spec);
double v_so(const DgpSpec& spec);
double v_so_tilde_infty(const DgpSpec& spec);

// ---- exact finite-sample moments ---------------------------------------------

/// Bias of the semi-oracle and of the estimated IPSW (they coincide).
double bias_semi_oracle(const DgpSpec& spec, std::size_t n);
inline double bias_estimated(const DgpSpec& spec, std::size_t n) { return bias_semi_oracle(spec, n); }
/// Bias of both IPSW variants that estimate pi per stratum.
double bias_pihat(const DgpSpec& spec, std::size_t n);

double var_semi_oracle_exact(const DgpSpec& spec, std::size_t n);
double var_estimated_exact(const DgpSpec& spec, std::size_t n, std::size_t m);
/// m = nullopt gives the semi-oracle variant with estimated pi.
double var_pihat_exact(const DgpSpec& spec, std::size_t n, std::optional<std::size_t> m);

// ---- asymptotic regimes ------------------------------------------------------

/// lambda = lim m/n. infinite() marks lambda = +inf.
struct AsymptoticRegime {
  double lambda = 0.0;
  bool is_infinite = false;

  static AsymptoticRegime finite(double lambda);
  static AsymptoticRegime infinite() { return {0.0, true}; }
};

/// lim min(n, m) Var: min(1, lambda)(Var_T[tau]/lambda + V) with V = V_so, or
/// the tilde constant when pihat is set.
double asymptotic_variance(const DgpSpec& spec, AsymptoticRegime regime, bool pihat);

// ---- bounds -----------------------------------------------------------------

/// Upper bound on E[(estimate - tau)^2]. The oracle variant returns its exact
/// risk V_o/n. Variants that read a target sample need m; ht, dm and ps have no
/// bound. Mismatches throw ValidationError(variant_parameter_mismatch).
double risk_bound(const DgpSpec& spec, std::size_t n, std::optional<std::size_t> m, EstimatorTag tag);

/// Upper bound on the variance, with the same parameter rules as risk_bound.
double variance_bound(const DgpSpec& spec, std::size_t n, std::optional<std::size_t> m,
                      EstimatorTag tag);

// ---- report -----------------------------------------------------------------

struct TheoryConstants {
  double v_o = 0.0;
  double v_so = 0.0;
  double v_so_tilde_infty = 0.0;
  double target_cate_variance = 0.0;
  double true_ate = 0.0;
};

TheoryConstants theory_constants(const DgpSpec& spec);

struct TheoryReport {
  EstimatorTag tag = EstimatorTag::ipsw_oracle;
  std::size_t n = 0;
  std::optional<std::size_t> m;  ///< nullopt = infinite
  double bias = 0.0;
  std::optional<double> variance_exact;
  double variance_bound = 0.0;
  double risk_bound = 0.0;
  /// lim min(n, m) Var for the regime lambda = m / n (infinite when m is absent).
  double asymptotic_variance = 0.0;
  TheoryConstants constants;
};

/// Full report for one IPSW variant. ht, dm and ps throw.
/// Exact variances are skipped when exact_variance is false.
TheoryReport theory_report(const DgpSpec& spec, std::size_t n, std::optional<std::size_t> m,
                           EstimatorTag tag, bool exact_variance = true);

// ---- adjustment sets --------------------------------------------------------

/// sum_v q_T(v)^2 / q_R(v); at least 1.
double inflation_factor(std::span<const double> q_R, std::span<const double> q_T);

struct AdjustmentSetReport {
  double inflation_factor = 1.0;
  double variance_reduction = 0.0;
  /// lim n Var of the semi-oracle estimator (pi estimated unless requested
  /// otherwise) adjusting on X alone.
  double base_asymptotic_variance = 0.0;
  /// Same, adjusting on (X, V); computed on the flattened spec.
  double extended_asymptotic_variance = 0.0;
};

/// Adding a non-shifted, centered effect modifier V. pihat selects the
/// estimated-pi constants. Throws not_non_shifted / tau_shift_not_centered.
AdjustmentSetReport effect_modifier_reduction(const ExtendedDgpSpec& ext, bool pihat = true);

/// Adding a shifted covariate V that does not modify the effect.
/// Throws parameter_out_of_range when tau_shift is not identically zero.
AdjustmentSetReport shifted_covariate_inflation(const ExtendedDgpSpec& ext, bool pihat = true);

}  // namespace ipsw

#pragma once

// ATE estimators for a Bernoulli trial generalized to a target population.
//
// Every estimator has two entry points:
//   * a unit-level form over TrialSample / TargetSample that evaluates the
//     defining per-unit weighted sum, and
//   * a stratified form over TrialSummary / target counts that evaluates the
//     equivalent per-stratum aggregate (sum of weighted HT or DM estimates).
// Both treat 0/0 as 0: an empty stratum or an empty arm contributes nothing.

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "ipsw/domain.hpp"

namespace ipsw {

enum class EstimatorTag {
  ht,
  dm,
  ps,
  ipsw_oracle,
  ipsw_semi,
  ipsw_est,
  ipsw_semi_pihat,
  ipsw_est_pihat,
};

inline constexpr EstimatorTag kAllEstimators[] = {
    EstimatorTag::ht,        EstimatorTag::dm,       EstimatorTag::ps,
    EstimatorTag::ipsw_oracle, EstimatorTag::ipsw_semi, EstimatorTag::ipsw_est,
    EstimatorTag::ipsw_semi_pihat, EstimatorTag::ipsw_est_pihat};

std::string_view to_string(EstimatorTag tag);
/// Accepts the canonical names above plus the aliases "oracle", "semi_oracle",
/// "estimated", "semi_oracle_pihat" and "estimated_pihat".
std::optional<EstimatorTag> parse_estimator_tag(std::string_view name);

/// True for the variants that read a target sample.
bool needs_target_sample(EstimatorTag tag);
/// True for the variants that use the design probability pi.
bool uses_oracle_pi(EstimatorTag tag);

struct Diagnostics {
  std::size_t empty_strata = 0;     ///< strata with no trial unit
  std::size_t zero_arm_strata = 0;  ///< nonempty strata missing one arm
};

struct Estimate {
  double value = 0.0;
  EstimatorTag tag = EstimatorTag::ht;
  Diagnostics diagnostics;

  bool degenerate() const noexcept {
    return diagnostics.empty_strata > 0 || diagnostics.zero_arm_strata > 0;
  }
};

struct EmpiricalFrequencies {
  std::vector<std::size_t> counts;
  std::size_t total = 0;
  std::vector<double> probs;
};

EmpiricalFrequencies empirical_frequencies(std::span<const StratumId> x, std::size_t support_size);

struct StratumTreatmentFreq {
  std::vector<std::size_t> treated_counts;
  std::vector<std::size_t> stratum_counts;
  std::vector<std::optional<double>> pi_hat;  ///< nullopt when the stratum is empty
};

StratumTreatmentFreq stratum_treatment_freq(const TrialSample& sample);

/// Per-stratum, per-arm counts and outcome sums: sufficient for every estimator.
struct ArmTotals {
  std::size_t treated = 0;
  std::size_t control = 0;
  double sum_treated = 0.0;
  double sum_control = 0.0;

  std::size_t count() const noexcept { return treated + control; }
  /// Difference in arm means with an empty arm's mean taken as 0.
  double difference_in_means() const noexcept;
};

struct TrialSummary {
  std::vector<ArmTotals> strata;
  std::size_t n = 0;

  std::size_t support_size() const noexcept { return strata.size(); }
  Diagnostics diagnostics() const noexcept;
};

TrialSummary summarize(const TrialSample& sample);
TrialSummary summarize(const TrialSample& sample, const AdjustmentMap& map);
std::vector<std::size_t> target_counts(const TargetSample& target);

// ---- unit-level forms -------------------------------------------------------

Estimate horvitz_thompson(const TrialSample& sample, double pi);
Estimate horvitz_thompson(const TrialSample& sample, std::span<const double> pi);
Estimate difference_in_means(const TrialSample& sample);
Estimate post_stratification(const TrialSample& sample);
/// The only estimator that reads the DGP: weights p_T/p_R and pi(x) are oracle.
Estimate ipsw_oracle(const TrialSample& sample, const DgpSpec& spec);
Estimate ipsw_semi_oracle(const TrialSample& sample, std::span<const double> p_T,
                          std::span<const double> pi);
Estimate ipsw_estimated(const TrialSample& trial, const TargetSample& target,
                        std::span<const double> pi);
Estimate ipsw_semi_oracle_pihat(const TrialSample& sample, std::span<const double> p_T);
Estimate ipsw_estimated_pihat(const TrialSample& trial, const TargetSample& target);

// ---- stratified forms -------------------------------------------------------

namespace stratified {

Estimate horvitz_thompson(const TrialSummary& s, std::span<const double> pi);
Estimate difference_in_means(const TrialSummary& s);
Estimate post_stratification(const TrialSummary& s);
Estimate ipsw_oracle(const TrialSummary& s, std::span<const double> p_R, std::span<const double> p_T,
                     std::span<const double> pi);
/// sum_x p_T(x) HT_x
Estimate ipsw_semi_oracle(const TrialSummary& s, std::span<const double> p_T,
                          std::span<const double> pi);
/// sum_x (m_x / m) HT_x
Estimate ipsw_estimated(const TrialSummary& s, std::span<const std::size_t> target_counts,
                        std::span<const double> pi);
/// sum_x p_T(x) DM_x
Estimate ipsw_semi_oracle_pihat(const TrialSummary& s, std::span<const double> p_T);
/// sum_x (m_x / m) DM_x
Estimate ipsw_estimated_pihat(const TrialSummary& s, std::span<const std::size_t> target_counts);

}  // namespace stratified

}  // namespace ipsw

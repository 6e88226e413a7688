#include "ipsw/estimators.hpp"

#include <array>
#include <string>

namespace ipsw {

namespace {

struct TagName {
  std::string_view name;
  EstimatorTag tag;
};

constexpr std::array<TagName, 13> kTagNames{{
    {"ht", EstimatorTag::ht},
    {"dm", EstimatorTag::dm},
    {"ps", EstimatorTag::ps},
    {"ipsw_oracle", EstimatorTag::ipsw_oracle},
    {"ipsw_semi", EstimatorTag::ipsw_semi},
    {"ipsw_est", EstimatorTag::ipsw_est},
    {"ipsw_semi_pihat", EstimatorTag::ipsw_semi_pihat},
    {"ipsw_est_pihat", EstimatorTag::ipsw_est_pihat},
    {"oracle", EstimatorTag::ipsw_oracle},
    {"semi_oracle", EstimatorTag::ipsw_semi},
    {"estimated", EstimatorTag::ipsw_est},
    {"semi_oracle_pihat", EstimatorTag::ipsw_semi_pihat},
    {"estimated_pihat", EstimatorTag::ipsw_est_pihat},
}};

void require_support(std::size_t have, std::size_t want, const char* field) {
  if (have != want) {
    throw ValidationError(ErrorKind::dimension_mismatch, field,
                          "expected " + std::to_string(want) + " entries, got " +
                              std::to_string(have));
  }
}

void require_pi(std::span<const double> pi) {
  for (double p : pi) {
    if (!(p > 0.0 && p < 1.0)) throw ValidationError(ErrorKind::pi_out_of_range, "pi", "needs 0 < pi < 1");
  }
}

double total_of(std::span<const std::size_t> counts) {
  std::size_t m = 0;
  for (auto c : counts) m += c;
  if (m == 0) throw ValidationError(ErrorKind::parameter_out_of_range, "m", "target sample is empty");
  return static_cast<double>(m);
}

// A_i Y_i / pi - (1 - A_i) Y_i / (1 - pi) with the 0/0 = 0 convention used by
// the estimated-pi variants (pi_hat may be 0 or 1 for one-armed strata).
double signed_ipw_term(std::uint8_t a, double y, double pi) {
  if (a == 1) return pi > 0.0 ? y / pi : 0.0;
  return pi < 1.0 ? -y / (1.0 - pi) : 0.0;
}

Estimate make(double value, EstimatorTag tag, Diagnostics d) { return Estimate{value, tag, d}; }

}  // namespace

std::string_view to_string(EstimatorTag tag) {
  for (const auto& entry : kTagNames) {
    if (entry.tag == tag) return entry.name;
  }
  return "unknown";
}

std::optional<EstimatorTag> parse_estimator_tag(std::string_view name) {
  for (const auto& entry : kTagNames) {
    if (entry.name == name) return entry.tag;
  }
  return std::nullopt;
}

bool needs_target_sample(EstimatorTag tag) {
  return tag == EstimatorTag::ipsw_est || tag == EstimatorTag::ipsw_est_pihat;
}

bool uses_oracle_pi(EstimatorTag tag) {
  return tag == EstimatorTag::ht || tag == EstimatorTag::ipsw_oracle ||
         tag == EstimatorTag::ipsw_semi || tag == EstimatorTag::ipsw_est;
}

EmpiricalFrequencies empirical_frequencies(std::span<const StratumId> x, std::size_t support_size) {
  if (x.empty()) throw ValidationError(ErrorKind::parameter_out_of_range, "x", "sample is empty");
  EmpiricalFrequencies f;
  f.counts.assign(support_size, 0);
  for (auto id : x) {
    if (id >= support_size) {
      throw ValidationError(ErrorKind::invalid_stratum_id, "x",
                            "stratum " + std::to_string(id) + " is outside the support");
    }
    ++f.counts[id];
  }
  f.total = x.size();
  f.probs.resize(support_size);
  for (std::size_t k = 0; k < support_size; ++k) {
    f.probs[k] = static_cast<double>(f.counts[k]) / static_cast<double>(f.total);
  }
  return f;
}

StratumTreatmentFreq stratum_treatment_freq(const TrialSample& sample) {
  sample.validate();
  StratumTreatmentFreq f;
  f.treated_counts.assign(sample.support_size, 0);
  f.stratum_counts.assign(sample.support_size, 0);
  for (std::size_t i = 0; i < sample.size(); ++i) {
    ++f.stratum_counts[sample.x[i]];
    f.treated_counts[sample.x[i]] += sample.a[i];
  }
  f.pi_hat.resize(sample.support_size);
  for (std::size_t k = 0; k < sample.support_size; ++k) {
    if (f.stratum_counts[k] > 0) {
      f.pi_hat[k] = static_cast<double>(f.treated_counts[k]) / static_cast<double>(f.stratum_counts[k]);
    }
  }
  return f;
}

double ArmTotals::difference_in_means() const noexcept {
  const double m1 = treated > 0 ? sum_treated / static_cast<double>(treated) : 0.0;
  const double m0 = control > 0 ? sum_control / static_cast<double>(control) : 0.0;
  return m1 - m0;
}

Diagnostics TrialSummary::diagnostics() const noexcept {
  Diagnostics d;
  for (const auto& s : strata) {
    if (s.count() == 0) {
      ++d.empty_strata;
    } else if (s.treated == 0 || s.control == 0) {
      ++d.zero_arm_strata;
    }
  }
  return d;
}

TrialSummary summarize(const TrialSample& sample) {
  return summarize(sample, AdjustmentMap::identity(sample.support_size));
}

TrialSummary summarize(const TrialSample& sample, const AdjustmentMap& map) {
  sample.validate();
  map.validate(sample.support_size);
  TrialSummary s;
  s.strata.resize(map.coarse_size);
  s.n = sample.size();
  for (std::size_t i = 0; i < sample.size(); ++i) {
    auto& cell = s.strata[map.coarse_of[sample.x[i]]];
    if (sample.a[i] == 1) {
      ++cell.treated;
      cell.sum_treated += sample.y[i];
    } else {
      ++cell.control;
      cell.sum_control += sample.y[i];
    }
  }
  return s;
}

std::vector<std::size_t> target_counts(const TargetSample& target) {
  return empirical_frequencies(target.x, target.support_size).counts;
}

// ---- unit-level forms -------------------------------------------------------

Estimate horvitz_thompson(const TrialSample& sample, double pi) {
  std::vector<double> pis(sample.support_size, pi);
  return horvitz_thompson(sample, pis);
}

Estimate horvitz_thompson(const TrialSample& sample, std::span<const double> pi) {
  sample.validate();
  require_support(pi.size(), sample.support_size, "pi");
  require_pi(pi);
  double total = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    total += signed_ipw_term(sample.a[i], sample.y[i], pi[sample.x[i]]);
  }
  return make(total / static_cast<double>(sample.size()), EstimatorTag::ht,
              summarize(sample).diagnostics());
}

Estimate difference_in_means(const TrialSample& sample) {
  sample.validate();
  ArmTotals all;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    if (sample.a[i] == 1) {
      ++all.treated;
      all.sum_treated += sample.y[i];
    } else {
      ++all.control;
      all.sum_control += sample.y[i];
    }
  }
  Diagnostics d;
  d.zero_arm_strata = (all.treated == 0 || all.control == 0) ? 1 : 0;
  return make(all.difference_in_means(), EstimatorTag::dm, d);
}

Estimate post_stratification(const TrialSample& sample) {
  const auto freq = stratum_treatment_freq(sample);
  double total = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    total += signed_ipw_term(sample.a[i], sample.y[i], *freq.pi_hat[sample.x[i]]);
  }
  return make(total / static_cast<double>(sample.size()), EstimatorTag::ps,
              summarize(sample).diagnostics());
}

Estimate ipsw_oracle(const TrialSample& sample, const DgpSpec& spec) {
  sample.validate();
  require_support(spec.size(), sample.support_size, "spec");
  double total = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const StratumId x = sample.x[i];
    if (!(spec.p_R(x) > 0.0)) {
      throw ValidationError(ErrorKind::support_violation, "x",
                            "sampled stratum " + std::to_string(x) + " has p_R = 0");
    }
    total += probability_ratio(spec, x) * signed_ipw_term(sample.a[i], sample.y[i], spec.pi(x));
  }
  return make(total / static_cast<double>(sample.size()), EstimatorTag::ipsw_oracle,
              summarize(sample).diagnostics());
}

Estimate ipsw_semi_oracle(const TrialSample& sample, std::span<const double> p_T,
                          std::span<const double> pi) {
  sample.validate();
  require_support(p_T.size(), sample.support_size, "p_T");
  require_support(pi.size(), sample.support_size, "pi");
  require_pi(pi);
  const auto p_R_hat = empirical_frequencies(sample.x, sample.support_size).probs;
  double total = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const StratumId x = sample.x[i];
    total += p_T[x] / p_R_hat[x] * signed_ipw_term(sample.a[i], sample.y[i], pi[x]);
  }
  return make(total / static_cast<double>(sample.size()), EstimatorTag::ipsw_semi,
              summarize(sample).diagnostics());
}

Estimate ipsw_estimated(const TrialSample& trial, const TargetSample& target,
                        std::span<const double> pi) {
  target.validate();
  require_support(target.support_size, trial.support_size, "target");
  const auto p_T_hat = empirical_frequencies(target.x, target.support_size).probs;
  auto e = ipsw_semi_oracle(trial, p_T_hat, pi);
  e.tag = EstimatorTag::ipsw_est;
  return e;
}

Estimate ipsw_semi_oracle_pihat(const TrialSample& sample, std::span<const double> p_T) {
  require_support(p_T.size(), sample.support_size, "p_T");
  const auto freq = stratum_treatment_freq(sample);
  const auto n = static_cast<double>(sample.size());
  double total = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const StratumId x = sample.x[i];
    const double p_R_hat = static_cast<double>(freq.stratum_counts[x]) / n;
    total += p_T[x] / p_R_hat * signed_ipw_term(sample.a[i], sample.y[i], *freq.pi_hat[x]);
  }
  return make(total / n, EstimatorTag::ipsw_semi_pihat, summarize(sample).diagnostics());
}

Estimate ipsw_estimated_pihat(const TrialSample& trial, const TargetSample& target) {
  target.validate();
  require_support(target.support_size, trial.support_size, "target");
  const auto p_T_hat = empirical_frequencies(target.x, target.support_size).probs;
  auto e = ipsw_semi_oracle_pihat(trial, p_T_hat);
  e.tag = EstimatorTag::ipsw_est_pihat;
  return e;
}

// ---- stratified forms -------------------------------------------------------

namespace stratified {

namespace {

// Per-stratum HT on the stratum's own units: (S1/pi - S0/(1-pi)) / n_x.
double stratum_ht(const ArmTotals& s, double pi) {
  const std::size_t z = s.count();
  if (z == 0) return 0.0;
  return (s.sum_treated / pi - s.sum_control / (1.0 - pi)) / static_cast<double>(z);
}

void require_n(const TrialSummary& s) {
  if (s.n == 0) throw ValidationError(ErrorKind::parameter_out_of_range, "n", "trial sample is empty");
}

}  // namespace

Estimate horvitz_thompson(const TrialSummary& s, std::span<const double> pi) {
  require_n(s);
  require_support(pi.size(), s.support_size(), "pi");
  require_pi(pi);
  double total = 0.0;
  for (std::size_t x = 0; x < s.strata.size(); ++x) {
    total += s.strata[x].sum_treated / pi[x] - s.strata[x].sum_control / (1.0 - pi[x]);
  }
  return make(total / static_cast<double>(s.n), EstimatorTag::ht, s.diagnostics());
}

Estimate difference_in_means(const TrialSummary& s) {
  require_n(s);
  ArmTotals all;
  for (const auto& c : s.strata) {
    all.treated += c.treated;
    all.control += c.control;
    all.sum_treated += c.sum_treated;
    all.sum_control += c.sum_control;
  }
  Diagnostics d;
  d.zero_arm_strata = (all.treated == 0 || all.control == 0) ? 1 : 0;
  return make(all.difference_in_means(), EstimatorTag::dm, d);
}

Estimate post_stratification(const TrialSummary& s) {
  require_n(s);
  double total = 0.0;
  for (const auto& c : s.strata) {
    total += static_cast<double>(c.count()) * c.difference_in_means();
  }
  return make(total / static_cast<double>(s.n), EstimatorTag::ps, s.diagnostics());
}

Estimate ipsw_oracle(const TrialSummary& s, std::span<const double> p_R, std::span<const double> p_T,
                     std::span<const double> pi) {
  require_n(s);
  require_support(p_R.size(), s.support_size(), "p_R");
  require_support(p_T.size(), s.support_size(), "p_T");
  require_support(pi.size(), s.support_size(), "pi");
  double total = 0.0;
  for (std::size_t x = 0; x < s.strata.size(); ++x) {
    const auto& c = s.strata[x];
    if (c.count() == 0) continue;
    total += p_T[x] / p_R[x] * (c.sum_treated / pi[x] - c.sum_control / (1.0 - pi[x]));
  }
  return make(total / static_cast<double>(s.n), EstimatorTag::ipsw_oracle, s.diagnostics());
}

Estimate ipsw_semi_oracle(const TrialSummary& s, std::span<const double> p_T,
                          std::span<const double> pi) {
  require_n(s);
  require_support(p_T.size(), s.support_size(), "p_T");
  require_support(pi.size(), s.support_size(), "pi");
  double total = 0.0;
  for (std::size_t x = 0; x < s.strata.size(); ++x) total += p_T[x] * stratum_ht(s.strata[x], pi[x]);
  return make(total, EstimatorTag::ipsw_semi, s.diagnostics());
}

Estimate ipsw_estimated(const TrialSummary& s, std::span<const std::size_t> counts,
                        std::span<const double> pi) {
  require_n(s);
  require_support(counts.size(), s.support_size(), "target");
  require_support(pi.size(), s.support_size(), "pi");
  const double m = total_of(counts);
  double total = 0.0;
  for (std::size_t x = 0; x < s.strata.size(); ++x) {
    if (counts[x] == 0) continue;
    total += static_cast<double>(counts[x]) / m * stratum_ht(s.strata[x], pi[x]);
  }
  return make(total, EstimatorTag::ipsw_est, s.diagnostics());
}

Estimate ipsw_semi_oracle_pihat(const TrialSummary& s, std::span<const double> p_T) {
  require_n(s);
  require_support(p_T.size(), s.support_size(), "p_T");
  double total = 0.0;
  for (std::size_t x = 0; x < s.strata.size(); ++x) total += p_T[x] * s.strata[x].difference_in_means();
  return make(total, EstimatorTag::ipsw_semi_pihat, s.diagnostics());
}

Estimate ipsw_estimated_pihat(const TrialSummary& s, std::span<const std::size_t> counts) {
  require_n(s);
  require_support(counts.size(), s.support_size(), "target");
  const double m = total_of(counts);
  double total = 0.0;
  for (std::size_t x = 0; x < s.strata.size(); ++x) {
    if (counts[x] == 0) continue;
    total += static_cast<double>(counts[x]) / m * s.strata[x].difference_in_means();
  }
  return make(total, EstimatorTag::ipsw_est_pihat, s.diagnostics());
}

}  // namespace stratified

}  // namespace ipsw

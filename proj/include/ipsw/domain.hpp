#pragma once

// Categorical covariate universe, data-generating process and sampled datasets.

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ipsw {

using StratumId = std::uint32_t;

struct Stratum {
  StratumId id = 0;
  std::string label;

  bool operator==(const Stratum&) const = default;
};

enum class NoiseFamily { gaussian };

/// First two moments of the potential outcomes within one stratum.
struct StratumOutcomeModel {
  double mean0 = 0.0;
  double mean1 = 0.0;
  double var0 = 0.0;
  double var1 = 0.0;
  NoiseFamily noise = NoiseFamily::gaussian;

  double cate() const { return mean1 - mean0; }
  /// E[(Y^(a))^2 | X = x]
  double second_moment1() const { return mean1 * mean1 + var1; }
  double second_moment0() const { return mean0 * mean0 + var0; }

  bool operator==(const StratumOutcomeModel&) const = default;
};

enum class ErrorKind {
  probability_not_normalized,
  support_violation,
  pi_out_of_range,
  negative_variance,
  non_finite_value,
  dimension_mismatch,
  empty_support,
  invalid_stratum_id,
  parameter_out_of_range,
  tau_shift_not_centered,
  not_non_shifted,
  variant_parameter_mismatch,
};

const char* to_string(ErrorKind kind);

struct Violation {
  ErrorKind kind;
  std::string field;
  std::string message;
};

/// Thrown when a value violates its invariants; carries every violation found.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(std::vector<Violation> violations);
  ValidationError(ErrorKind kind, std::string field, std::string message);

  const std::vector<Violation>& violations() const noexcept { return violations_; }
  bool has(ErrorKind kind) const noexcept;

 private:
  std::vector<Violation> violations_;
};

/// Column-oriented description of a DGP as it appears in a config document.
/// No invariants are enforced on this type; see validate_dgp().
struct DgpTable {
  std::vector<Stratum> strata;
  std::vector<double> p_R;
  std::vector<double> p_T;
  std::vector<double> pi;
  std::vector<StratumOutcomeModel> outcomes;

  bool operator==(const DgpTable&) const = default;
};

/// Returns every invariant violation of the table (empty when valid).
std::vector<Violation> validate_dgp(const DgpTable& table);

/// A validated data-generating process over a dense categorical support.
///
/// Strata with p_R = p_T = 0 are dropped at construction and the remaining
/// ids are renumbered 0..K-1 in their original order. Instances are immutable.
class DgpSpec {
 public:
  /// Throws ValidationError listing all violations.
  static DgpSpec from_table(DgpTable table);

  std::size_t size() const noexcept { return table_.strata.size(); }
  const DgpTable& table() const noexcept { return table_; }

  const std::vector<Stratum>& strata() const noexcept { return table_.strata; }
  std::span<const double> p_R() const noexcept { return table_.p_R; }
  std::span<const double> p_T() const noexcept { return table_.p_T; }
  std::span<const double> pi() const noexcept { return table_.pi; }
  const std::vector<StratumOutcomeModel>& outcomes() const noexcept { return table_.outcomes; }

  double p_R(StratumId x) const { return table_.p_R.at(x); }
  double p_T(StratumId x) const { return table_.p_T.at(x); }
  double pi(StratumId x) const { return table_.pi.at(x); }
  const StratumOutcomeModel& outcome(StratumId x) const { return table_.outcomes.at(x); }
  double cate(StratumId x) const { return outcome(x).cate(); }

  bool operator==(const DgpSpec&) const = default;

 private:
  explicit DgpSpec(DgpTable table) : table_(std::move(table)) {}
  DgpTable table_;
};

/// p_T(x) / p_R(x). Throws ValidationError(invalid_stratum_id) for unknown ids.
double probability_ratio(const DgpSpec& spec, StratumId x);

/// Target-population ATE: sum_x p_T(x) tau(x).
double true_ate(const DgpSpec& spec);

/// Trial-population ATE: sum_x p_R(x) tau(x).
double trial_ate(const DgpSpec& spec);

/// Var_T[tau(X)].
double target_cate_variance(const DgpSpec& spec);

struct TrialSample {
  std::size_t support_size = 0;
  std::vector<StratumId> x;
  std::vector<std::uint8_t> a;
  std::vector<double> y;

  std::size_t size() const noexcept { return x.size(); }
  /// Throws ValidationError on unequal lengths, n = 0, bad ids or a not in {0,1}.
  void validate() const;
};

struct TargetSample {
  std::size_t support_size = 0;
  std::vector<StratumId> x;

  std::size_t size() const noexcept { return x.size(); }
  void validate() const;
};

/// Maps each stratum of a fine support onto a coarser adjustment set.
struct AdjustmentMap {
  std::vector<StratumId> coarse_of;
  std::size_t coarse_size = 0;

  static AdjustmentMap identity(std::size_t size);
  void validate(std::size_t fine_size) const;
};

/// Law of the coarse strata induced by a fine spec.
///
/// Probabilities are summed. Outcome moments are the trial-population (p_R
/// weighted) mixture moments within each coarse cell, and pi is the p_R
/// weighted mean of the fine pi values.
DgpSpec collapse(const DgpSpec& spec, const AdjustmentMap& map);

/// A base DGP over X extended by an independent categorical covariate V.
///
/// tau_shift[x][v] modifies the CATE of cell (x, v). In the flattened model the
/// shift is split across arms as mean1 += pi(x) s and mean0 -= (1 - pi(x)) s,
/// and within-cell outcome variances are those of the base.
struct ExtendedDgpSpec {
  DgpSpec base;
  std::vector<Stratum> aux_support;
  std::vector<double> q_R;
  std::vector<double> q_T;
  std::vector<std::vector<double>> tau_shift;

  /// Throws ValidationError on malformed q vectors, support violations, or a
  /// tau_shift that is not q_T-centered for some x.
  void validate() const;

  std::size_t aux_size() const noexcept { return aux_support.size(); }
  bool is_non_modifier() const;
  bool is_non_shifted() const;

  /// Spec over the (x, v) cells, id = x * |V| + v.
  DgpSpec flatten() const;
  /// Projection of flattened ids onto X.
  AdjustmentMap base_projection() const;
  /// Law of X alone under the extended model (collapse of flatten()).
  DgpSpec marginal() const;
};

}  // namespace ipsw

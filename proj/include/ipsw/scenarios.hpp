#pragma once

// Named experimental setups and the TOML scenario document.

#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "ipsw/domain.hpp"

namespace ipsw {

// ---- toy --------------------------------------------------------------------

/// Two strata; stratum 1 has the larger effect and dominates the trial.
struct ToyParams {
  double p_R1 = 0.75;
  double p_T1 = 0.30;
  double tau1 = 10.0;
  double tau0 = 3.0;
  double baseline_var = 1.0;
  double pi = 0.5;

  bool operator==(const ToyParams&) const = default;
};

DgpSpec toy_dgp(const ToyParams& params = {});

/// V shifted between populations, no effect modification.
struct ShiftedNonModifier {
  std::vector<double> q_R;
  std::vector<double> q_T;

  /// Balanced trial: q_R uniform over the levels of q_T.
  static ShiftedNonModifier balanced(std::vector<double> q_T);
};

/// V with the same law in both populations that shifts the CATE.
struct NonShiftedModifier {
  std::vector<double> q;
  /// One row per toy stratum, or a single row applied to both.
  std::vector<std::vector<double>> tau_shift;
};

using ToyExtension = std::variant<ShiftedNonModifier, NonShiftedModifier>;

ExtendedDgpSpec toy_extended_dgp(const ToyParams& params, const ToyExtension& mode);

/// Two strata where the noisier stratum is over-represented in the trial.
DgpSpec heteroscedastic_dgp();

// ---- semi-synthetic ----------------------------------------------------------

struct CovariateMarginal {
  std::string name;
  std::vector<double> trial;
  std::vector<double> target;

  std::size_t levels() const noexcept { return trial.size(); }
  bool operator==(const CovariateMarginal&) const = default;
};

/// Extra binary-or-wider covariate, equally distributed in both populations,
/// that adds shift[v] to the treated outcome.
struct SyntheticModifier {
  std::vector<double> q{0.5, 0.5};
  std::vector<double> shift{-10.0, 10.0};

  bool operator==(const SyntheticModifier&) const = default;
};

/// One full covariate combination with its joint probabilities.
struct JointRow {
  std::vector<int> levels;  ///< 1-based, in covariate order
  double p_R = 0.0;
  double p_T = 0.0;

  bool operator==(const JointRow&) const = default;
};

struct SemiSynthParams {
  /// glasgow, gender, pupil, age, bp, ttt (in this order).
  std::vector<CovariateMarginal> covariates = default_covariates();
  std::vector<double> noise_scale{2.0, 6.0, 10.0, 14.0};
  double pi = 0.5;
  std::optional<SyntheticModifier> x_sup;
  /// Replaces the product of marginals when present.
  std::optional<std::vector<JointRow>> joint;

  static std::vector<CovariateMarginal> default_covariates();
  bool operator==(const SemiSynthParams&) const = default;
};

inline constexpr const char* kCovariateNames[] = {"glasgow", "gender", "pupil", "age", "bp", "ttt"};

/// Per-stratum covariate levels of a flattened multi-covariate spec.
struct CovariateLayout {
  std::vector<std::string> names;
  std::vector<std::size_t> level_counts;
  std::vector<std::vector<int>> levels;  ///< levels[stratum][covariate], 1-based

  std::size_t index_of(const std::string& name) const;
  /// Map onto the distinct level tuples of the named covariates, numbered in
  /// order of first appearance.
  AdjustmentMap projection(const std::vector<std::string>& subset) const;
  /// Expands "minimal", "all" and "+"-joined names, e.g. "minimal+glasgow".
  std::vector<std::string> parse_adjustment(const std::string& spec) const;
};

struct SemiSyntheticModel {
  DgpSpec spec;
  CovariateLayout layout;
};

SemiSyntheticModel semi_synthetic_model(const SemiSynthParams& params = {});
DgpSpec semi_synthetic_dgp(const SemiSynthParams& params = {});

/// Reads `combo_id,glasgow,gender,pupil,age,bp,ttt,p_R,p_T`.
std::vector<JointRow> load_joint_csv(const std::filesystem::path& path);

// ---- scenario document -------------------------------------------------------

/// A parsed config: exactly one of [[strata]], [toy], [semi_synthetic], with
/// an optional [extended] section over the first two.
struct ScenarioDocument {
  std::optional<DgpTable> strata;
  std::optional<ToyParams> toy;
  std::optional<SemiSynthParams> semi_synthetic;
  std::optional<ExtendedDgpSpec> extended;
};

struct LoadedSpec {
  DgpSpec spec;  ///< flattened when the document is extended
  std::optional<ExtendedDgpSpec> extended;
  std::optional<CovariateLayout> layout;
};

/// Throws ParseError with a line number, ValidationError on invalid values.
/// Relative joint_csv paths resolve against base_dir.
ScenarioDocument parse_scenario(const std::string& text, const std::filesystem::path& base_dir = {});
LoadedSpec materialize(const ScenarioDocument& doc);
/// IoError when the file cannot be read.
LoadedSpec load_spec(const std::filesystem::path& path);

std::string to_toml(const DgpSpec& spec);
std::string to_toml(const ToyParams& params);
std::string to_toml(const SemiSynthParams& params);
std::string to_toml(const ExtendedDgpSpec& ext);

}  // namespace ipsw

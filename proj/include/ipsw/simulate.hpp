#pragma once

// Seeded sampling from a DgpSpec and parallel Monte Carlo experiments.

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "ipsw/domain.hpp"
#include "ipsw/estimators.hpp"

namespace ipsw {

using Rng = std::mt19937_64;

/// Independent stream for replicate `index` of an experiment keyed by `seed`.
Rng make_rng(std::uint64_t seed, std::uint64_t index);

/// Seed of sub-experiment `index` (grid point, scenario arm) under `seed`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

/// Worker count from the IPSW_WORKERS environment variable, else the number of
/// hardware threads (at least 1).
std::size_t default_worker_count();

TrialSample sample_trial(const DgpSpec& spec, std::size_t n, Rng& rng);
TargetSample sample_target(const DgpSpec& spec, std::size_t m, Rng& rng);

/// Draws per-stratum arm counts and outcome sums directly. Same law as
/// summarize(sample_trial(...)) but O(K) per draw.
TrialSummary sample_trial_summary(const DgpSpec& spec, std::size_t n, Rng& rng);
/// Per-stratum counts of a target sample of size m.
std::vector<std::size_t> sample_target_counts(const DgpSpec& spec, std::size_t m, Rng& rng);

/// Sums fine strata into the cells of an adjustment map.
TrialSummary coarsen(const TrialSummary& fine, const AdjustmentMap& map);
std::vector<std::size_t> coarsen(const std::vector<std::size_t>& counts, const AdjustmentMap& map);

struct McConfig {
  std::size_t n = 0;
  std::size_t m = 0;  ///< target size; only read by variants that need it
  std::size_t reps = 1;
  std::uint64_t seed = 0;
  std::vector<EstimatorTag> estimators;
  std::size_t workers = 0;  ///< 0 selects default_worker_count()
  bool unit_level = false;  ///< draw full unit-level samples instead of summaries
  bool keep_values = false; ///< retain per-rep estimates in the report

  /// Throws ValidationError(parameter_out_of_range) on invalid settings.
  void validate() const;
};

struct EstimatorSummary {
  EstimatorTag tag = EstimatorTag::ht;
  double mean = 0.0;
  double bias = 0.0;
  std::optional<double> variance;       ///< unbiased; absent when reps = 1
  double mse = 0.0;                     ///< mean squared error around the true ATE
  std::optional<double> mc_se;          ///< standard error of the mean
  std::optional<double> variance_mc_se; ///< variance * sqrt(2 / (reps - 1))
  std::size_t degenerate_reps = 0;
  std::vector<double> values;           ///< per-rep estimates when kept
};

struct McReport {
  std::size_t n = 0;
  std::size_t m = 0;
  std::size_t reps = 0;
  std::uint64_t seed = 0;
  double true_ate = 0.0;
  std::vector<EstimatorSummary> rows;

  /// Row for `tag`; throws std::out_of_range when it was not requested.
  const EstimatorSummary& at(EstimatorTag tag) const;
};

McReport run_monte_carlo(const DgpSpec& spec, const McConfig& cfg);

/// Runs the same replicates under several adjustment maps of the spec's
/// strata; report i uses maps[i]. Each map's estimators see the collapsed law.
std::vector<McReport> run_monte_carlo(const DgpSpec& spec, const McConfig& cfg,
                                      const std::vector<AdjustmentMap>& maps);

/// Summary statistics over a vector of replicate values.
EstimatorSummary summarize_values(EstimatorTag tag, std::vector<double> values, double truth);

/// Ratio of sample variances of two paired replicate series and its
/// delta-method standard error.
struct VarianceRatio {
  double ratio = 0.0;
  double se = 0.0;
};
VarianceRatio paired_variance_ratio(const std::vector<double>& numerator,
                                    const std::vector<double>& denominator);

// ---- sweeps -----------------------------------------------------------------

struct SweepRegime {
  enum class Kind { fixed_m, ratio, ratio_inf };
  Kind kind = Kind::fixed_m;
  double value = 0.0;  ///< m for fixed_m, lambda for ratio

  static SweepRegime fixed(std::size_t m) { return {Kind::fixed_m, static_cast<double>(m)}; }
  static SweepRegime ratio(double lambda) { return {Kind::ratio, lambda}; }
  static SweepRegime infinite() { return {Kind::ratio_inf, 0.0}; }

  /// Target size at trial size n; nullopt for ratio_inf.
  std::optional<std::size_t> target_size(std::size_t n) const;
};

struct SweepRow {
  std::size_t n = 0;
  std::optional<std::size_t> m;  ///< nullopt for the infinite-ratio regime
  EstimatorTag tag = EstimatorTag::ipsw_est;
  double variance = 0.0;
  double variance_mc_se = 0.0;
  /// min(n, m) * variance for variants reading a target sample, n * variance otherwise.
  double scaled_variance = 0.0;
  std::optional<double> theory_asymptote;
};

/// One Monte Carlo run per grid point (seeded by derive_seed(seed, index)).
/// In the infinite-ratio regime the estimated variants are replaced by their
/// semi-oracle counterparts.
std::vector<SweepRow> regime_sweep(const DgpSpec& spec, const std::vector<std::size_t>& n_grid,
                                   SweepRegime regime, std::size_t reps, std::uint64_t seed,
                                   const std::vector<EstimatorTag>& estimators, std::size_t workers = 0);

// ---- covariate inflation ----------------------------------------------------

struct ShiftLevel {
  std::vector<double> q_R;
  std::vector<double> q_T;
  /// Total-variation distance between q_R and q_T.
  double shift_param() const;
};

struct InflationRow {
  double shift_param = 0.0;
  double theory_factor = 1.0;
  double empirical_factor = 1.0;
  double mc_se = 0.0;
  double variance_base = 0.0;
  double variance_extended = 0.0;
};

/// For each level, adds an independent shifted non-modifier V to `base` and
/// compares one estimator adjusting on X versus (X, V) over the same draws.
/// cfg.estimators must hold exactly one tag.
std::vector<InflationRow> inflation_experiment(const DgpSpec& base, const std::vector<ShiftLevel>& grid,
                                               const McConfig& cfg);

}  // namespace ipsw

#include "ipsw/simulate.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>

#include "ipsw/theory.hpp"

namespace ipsw {

namespace {

std::uint32_t lo32(std::uint64_t v) { return static_cast<std::uint32_t>(v & 0xffffffffu); }
std::uint32_t hi32(std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); }

// Neumaier-compensated running sum.
class CompensatedSum {
 public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v)) {
      c_ += (sum_ - t) + v;
    } else {
      c_ += (v - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + c_; }

 private:
  double sum_ = 0.0;
  double c_ = 0.0;
};

std::int64_t draw_binomial(std::int64_t trials, double p, Rng& rng) {
  if (trials <= 0 || p <= 0.0) return 0;
  if (p >= 1.0) return trials;
  return std::binomial_distribution<std::int64_t>(trials, p)(rng);
}

double draw_normal_sum(std::int64_t k, double mean, double var, Rng& rng) {
  if (k == 0) return 0.0;
  const double kk = static_cast<double>(k);
  if (var <= 0.0) return kk * mean;
  return std::normal_distribution<double>(kk * mean, std::sqrt(kk * var))(rng);
}

double draw_outcome(double mean, double var, Rng& rng) {
  if (var <= 0.0) return mean;
  return std::normal_distribution<double>(mean, std::sqrt(var))(rng);
}

// Multinomial(total, probs) by sequential conditional binomials.
std::vector<std::size_t> draw_multinomial(std::size_t total, std::span<const double> probs, Rng& rng) {
  std::vector<std::size_t> counts(probs.size(), 0);
  std::size_t last = 0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    if (probs[k] > 0.0) last = k;
  }
  auto remaining = static_cast<std::int64_t>(total);
  double mass = 1.0;
  for (std::size_t k = 0; k < probs.size() && remaining > 0; ++k) {
    if (probs[k] <= 0.0) continue;
    double p = 1.0;
    if (k != last && mass > 0.0) p = std::clamp(probs[k] / mass, 0.0, 1.0);
    const auto z = draw_binomial(remaining, p, rng);
    counts[k] = static_cast<std::size_t>(z);
    remaining -= z;
    mass -= probs[k];
  }
  return counts;
}

void require(bool ok, const char* field, const std::string& message) {
  if (!ok) throw ValidationError(ErrorKind::parameter_out_of_range, field, message);
}

bool any_needs_target(const std::vector<EstimatorTag>& tags) {
  return std::any_of(tags.begin(), tags.end(), needs_target_sample);
}

// The law seen by estimators adjusting on the cells of `map`.
DgpSpec coarse_law(const DgpSpec& spec, const AdjustmentMap& map) {
  map.validate(spec.size());
  std::vector<bool> used(map.coarse_size, false);
  for (auto c : map.coarse_of) used[c] = true;
  if (std::find(used.begin(), used.end(), false) != used.end()) {
    throw ValidationError(ErrorKind::invalid_stratum_id, "adjustment", "every coarse cell needs a fine stratum");
  }
  return collapse(spec, map);
}

Estimate evaluate(EstimatorTag tag, const DgpSpec& law, const TrialSummary& s,
                  const std::vector<std::size_t>& target) {
  switch (tag) {
    case EstimatorTag::ht: return stratified::horvitz_thompson(s, law.pi());
    case EstimatorTag::dm: return stratified::difference_in_means(s);
    case EstimatorTag::ps: return stratified::post_stratification(s);
    case EstimatorTag::ipsw_oracle: return stratified::ipsw_oracle(s, law.p_R(), law.p_T(), law.pi());
    case EstimatorTag::ipsw_semi: return stratified::ipsw_semi_oracle(s, law.p_T(), law.pi());
    case EstimatorTag::ipsw_est: return stratified::ipsw_estimated(s, target, law.pi());
    case EstimatorTag::ipsw_semi_pihat: return stratified::ipsw_semi_oracle_pihat(s, law.p_T());
    case EstimatorTag::ipsw_est_pihat: return stratified::ipsw_estimated_pihat(s, target);
  }
  throw std::logic_error("unknown estimator tag");
}

Estimate evaluate_units(EstimatorTag tag, const DgpSpec& law, const TrialSample& trial,
                        const TargetSample& target) {
  switch (tag) {
    case EstimatorTag::ht: return horvitz_thompson(trial, law.pi());
    case EstimatorTag::dm: return difference_in_means(trial);
    case EstimatorTag::ps: return post_stratification(trial);
    case EstimatorTag::ipsw_oracle: return ipsw_oracle(trial, law);
    case EstimatorTag::ipsw_semi: return ipsw_semi_oracle(trial, law.p_T(), law.pi());
    case EstimatorTag::ipsw_est: return ipsw_estimated(trial, target, law.pi());
    case EstimatorTag::ipsw_semi_pihat: return ipsw_semi_oracle_pihat(trial, law.p_T());
    case EstimatorTag::ipsw_est_pihat: return ipsw_estimated_pihat(trial, target);
  }
  throw std::logic_error("unknown estimator tag");
}

template <class Sample>
Sample remap(Sample sample, const AdjustmentMap& map) {
  for (auto& x : sample.x) x = map.coarse_of[x];
  sample.support_size = map.coarse_size;
  return sample;
}

}  // namespace

Rng make_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{lo32(seed), hi32(seed), lo32(index), hi32(index)};
  return Rng(seq);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{lo32(seed), hi32(seed), lo32(index), hi32(index), 0x5eedu};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
}

std::size_t default_worker_count() {
  if (const char* env = std::getenv("IPSW_WORKERS")) {
    std::size_t v = 0;
    const auto* end = env + std::strlen(env);
    const auto [ptr, ec] = std::from_chars(env, end, v);
    if (ec == std::errc() && ptr == end && v > 0) return v;
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

TrialSample sample_trial(const DgpSpec& spec, std::size_t n, Rng& rng) {
  require(n >= 1, "n", "needs n >= 1");
  TrialSample s;
  s.support_size = spec.size();
  s.x.resize(n);
  s.a.resize(n);
  s.y.resize(n);
  std::discrete_distribution<StratumId> pick(spec.p_R().begin(), spec.p_R().end());
  for (std::size_t i = 0; i < n; ++i) {
    const StratumId x = pick(rng);
    const auto& o = spec.outcome(x);
    const bool treated = std::bernoulli_distribution(spec.pi(x))(rng);
    s.x[i] = x;
    s.a[i] = treated ? 1 : 0;
    s.y[i] = treated ? draw_outcome(o.mean1, o.var1, rng) : draw_outcome(o.mean0, o.var0, rng);
  }
  return s;
}

TargetSample sample_target(const DgpSpec& spec, std::size_t m, Rng& rng) {
  require(m >= 1, "m", "needs m >= 1");
  TargetSample t;
  t.support_size = spec.size();
  t.x.resize(m);
  std::discrete_distribution<StratumId> pick(spec.p_T().begin(), spec.p_T().end());
  for (auto& x : t.x) x = pick(rng);
  return t;
}

TrialSummary sample_trial_summary(const DgpSpec& spec, std::size_t n, Rng& rng) {
  require(n >= 1, "n", "needs n >= 1");
  TrialSummary s;
  s.n = n;
  s.strata.resize(spec.size());
  const auto counts = draw_multinomial(n, spec.p_R(), rng);
  for (StratumId x = 0; x < spec.size(); ++x) {
    const auto z = static_cast<std::int64_t>(counts[x]);
    if (z == 0) continue;
    const auto& o = spec.outcome(x);
    const auto k = draw_binomial(z, spec.pi(x), rng);
    auto& cell = s.strata[x];
    cell.treated = static_cast<std::size_t>(k);
    cell.control = static_cast<std::size_t>(z - k);
    cell.sum_treated = draw_normal_sum(k, o.mean1, o.var1, rng);
    cell.sum_control = draw_normal_sum(z - k, o.mean0, o.var0, rng);
  }
  return s;
}

std::vector<std::size_t> sample_target_counts(const DgpSpec& spec, std::size_t m, Rng& rng) {
  require(m >= 1, "m", "needs m >= 1");
  return draw_multinomial(m, spec.p_T(), rng);
}

TrialSummary coarsen(const TrialSummary& fine, const AdjustmentMap& map) {
  map.validate(fine.support_size());
  TrialSummary s;
  s.n = fine.n;
  s.strata.resize(map.coarse_size);
  for (std::size_t x = 0; x < fine.strata.size(); ++x) {
    const auto& f = fine.strata[x];
    auto& c = s.strata[map.coarse_of[x]];
    c.treated += f.treated;
    c.control += f.control;
    c.sum_treated += f.sum_treated;
    c.sum_control += f.sum_control;
  }
  return s;
}

std::vector<std::size_t> coarsen(const std::vector<std::size_t>& counts, const AdjustmentMap& map) {
  map.validate(counts.size());
  std::vector<std::size_t> out(map.coarse_size, 0);
  for (std::size_t x = 0; x < counts.size(); ++x) out[map.coarse_of[x]] += counts[x];
  return out;
}

void McConfig::validate() const {
  require(n >= 1, "n", "needs n >= 1");
  require(reps >= 1, "reps", "needs reps >= 1");
  require(!estimators.empty(), "estimators", "needs at least one estimator");
  if (any_needs_target(estimators)) require(m >= 1, "m", "estimated variants need m >= 1");
}

const EstimatorSummary& McReport::at(EstimatorTag tag) const {
  for (const auto& r : rows) {
    if (r.tag == tag) return r;
  }
  throw std::out_of_range("estimator " + std::string(to_string(tag)) + " not in report");
}

EstimatorSummary summarize_values(EstimatorTag tag, std::vector<double> values, double truth) {
  EstimatorSummary out;
  out.tag = tag;
  const std::size_t reps = values.size();
  if (reps == 0) throw std::invalid_argument("no replicate values");
  const auto r = static_cast<double>(reps);

  CompensatedSum total;
  for (double v : values) total.add(v);
  out.mean = total.value() / r;
  out.bias = out.mean - truth;

  CompensatedSum dev2;
  CompensatedSum err2;
  for (double v : values) {
    dev2.add((v - out.mean) * (v - out.mean));
    err2.add((v - truth) * (v - truth));
  }
  out.mse = err2.value() / r;
  if (reps > 1) {
    const double var = dev2.value() / (r - 1.0);
    out.variance = var;
    out.mc_se = std::sqrt(var / r);
    out.variance_mc_se = var * std::sqrt(2.0 / (r - 1.0));
  }
  out.values = std::move(values);
  return out;
}

VarianceRatio paired_variance_ratio(const std::vector<double>& numerator,
                                    const std::vector<double>& denominator) {
  const std::size_t reps = numerator.size();
  if (reps < 3 || denominator.size() != reps) {
    throw std::invalid_argument("paired series need equal length >= 3");
  }
  const auto r = static_cast<double>(reps);
  CompensatedSum s_a, s_b;
  for (std::size_t i = 0; i < reps; ++i) {
    s_a.add(numerator[i]);
    s_b.add(denominator[i]);
  }
  const double mean_a = s_a.value() / r;
  const double mean_b = s_b.value() / r;
  CompensatedSum aa, bb, ab;
  for (std::size_t i = 0; i < reps; ++i) {
    const double da = numerator[i] - mean_a;
    const double db = denominator[i] - mean_b;
    aa.add(da * da);
    bb.add(db * db);
    ab.add(da * db);
  }
  VarianceRatio out;
  if (bb.value() <= 0.0) throw std::domain_error("denominator series has zero variance");
  out.ratio = aa.value() / bb.value();
  const double denom = std::sqrt(aa.value() * bb.value());
  const double rho = denom > 0.0 ? ab.value() / denom : 0.0;
  out.se = out.ratio * std::sqrt(4.0 * std::max(0.0, 1.0 - rho * rho) / (r - 1.0));
  return out;
}

McReport run_monte_carlo(const DgpSpec& spec, const McConfig& cfg) {
  return run_monte_carlo(spec, cfg, {AdjustmentMap::identity(spec.size())}).front();
}

std::vector<McReport> run_monte_carlo(const DgpSpec& spec, const McConfig& cfg,
                                      const std::vector<AdjustmentMap>& maps) {
  cfg.validate();
  require(!maps.empty(), "adjustment", "needs at least one adjustment map");
  std::vector<DgpSpec> laws;
  laws.reserve(maps.size());
  for (const auto& map : maps) laws.push_back(coarse_law(spec, map));

  const std::size_t n_est = cfg.estimators.size();
  const bool need_target = any_needs_target(cfg.estimators);
  // values[map][estimator][rep]
  std::vector<std::vector<std::vector<double>>> values(
      maps.size(), std::vector<std::vector<double>>(n_est, std::vector<double>(cfg.reps)));
  std::vector<std::vector<std::vector<std::uint8_t>>> degenerate(
      maps.size(), std::vector<std::vector<std::uint8_t>>(n_est, std::vector<std::uint8_t>(cfg.reps)));

  std::mutex error_mutex;
  std::size_t error_rep = cfg.reps;
  std::exception_ptr error;

  auto run_rep = [&](std::size_t rep) {
    Rng rng = make_rng(cfg.seed, rep);
    if (cfg.unit_level) {
      const auto trial = sample_trial(spec, cfg.n, rng);
      const auto target = need_target ? sample_target(spec, cfg.m, rng) : TargetSample{spec.size(), {}};
      for (std::size_t k = 0; k < maps.size(); ++k) {
        const auto coarse_trial = remap(trial, maps[k]);
        const auto coarse_target = remap(target, maps[k]);
        for (std::size_t e = 0; e < n_est; ++e) {
          const auto est = evaluate_units(cfg.estimators[e], laws[k], coarse_trial, coarse_target);
          values[k][e][rep] = est.value;
          degenerate[k][e][rep] = est.degenerate();
        }
      }
      return;
    }
    const auto fine = sample_trial_summary(spec, cfg.n, rng);
    const auto fine_target = need_target ? sample_target_counts(spec, cfg.m, rng) : std::vector<std::size_t>{};
    for (std::size_t k = 0; k < maps.size(); ++k) {
      const auto s = coarsen(fine, maps[k]);
      const auto t = need_target ? coarsen(fine_target, maps[k]) : std::vector<std::size_t>{};
      for (std::size_t e = 0; e < n_est; ++e) {
        const auto est = evaluate(cfg.estimators[e], laws[k], s, t);
        values[k][e][rep] = est.value;
        degenerate[k][e][rep] = est.degenerate();
      }
    }
  };

  constexpr std::size_t kBlock = 256;
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t begin = next.fetch_add(kBlock);
      if (begin >= cfg.reps) return;
      const std::size_t end = std::min(cfg.reps, begin + kBlock);
      for (std::size_t rep = begin; rep < end; ++rep) {
        try {
          run_rep(rep);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (rep < error_rep) {
            error_rep = rep;
            error = std::current_exception();
          }
          return;
        }
      }
    }
  };

  const std::size_t workers =
      std::min(cfg.workers ? cfg.workers : default_worker_count(), (cfg.reps + kBlock - 1) / kBlock);
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }

  if (error) {
    try {
      std::rethrow_exception(error);
    } catch (const ValidationError& e) {
      auto v = e.violations();
      for (auto& item : v) item.message = "rep " + std::to_string(error_rep) + ": " + item.message;
      throw ValidationError(std::move(v));
    } catch (const std::exception& e) {
      throw std::runtime_error("rep " + std::to_string(error_rep) + ": " + e.what());
    }
  }

  const double truth = true_ate(spec);
  std::vector<McReport> reports;
  for (std::size_t k = 0; k < maps.size(); ++k) {
    McReport r;
    r.n = cfg.n;
    r.m = cfg.m;
    r.reps = cfg.reps;
    r.seed = cfg.seed;
    r.true_ate = truth;
    for (std::size_t e = 0; e < n_est; ++e) {
      auto row = summarize_values(cfg.estimators[e], std::move(values[k][e]), truth);
      row.degenerate_reps = static_cast<std::size_t>(
          std::count(degenerate[k][e].begin(), degenerate[k][e].end(), std::uint8_t{1}));
      if (!cfg.keep_values) std::vector<double>().swap(row.values);
      r.rows.push_back(std::move(row));
    }
    reports.push_back(std::move(r));
  }
  return reports;
}

// ---- sweeps -----------------------------------------------------------------

std::optional<std::size_t> SweepRegime::target_size(std::size_t n) const {
  switch (kind) {
    case Kind::fixed_m: return static_cast<std::size_t>(value);
    case Kind::ratio: return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(value * static_cast<double>(n))));
    case Kind::ratio_inf: return std::nullopt;
  }
  return std::nullopt;
}

namespace {

EstimatorTag semi_counterpart(EstimatorTag tag) {
  if (tag == EstimatorTag::ipsw_est) return EstimatorTag::ipsw_semi;
  if (tag == EstimatorTag::ipsw_est_pihat) return EstimatorTag::ipsw_semi_pihat;
  return tag;
}

std::optional<double> sweep_asymptote(const DgpSpec& spec, EstimatorTag tag, AsymptoticRegime regime) {
  switch (tag) {
    case EstimatorTag::ipsw_oracle: return v_o(spec);
    case EstimatorTag::ipsw_semi: return v_so(spec);
    case EstimatorTag::ipsw_semi_pihat: return v_so_tilde_infty(spec);
    case EstimatorTag::ipsw_est: return asymptotic_variance(spec, regime, false);
    case EstimatorTag::ipsw_est_pihat: return asymptotic_variance(spec, regime, true);
    default: return std::nullopt;
  }
}

}  // namespace

std::vector<SweepRow> regime_sweep(const DgpSpec& spec, const std::vector<std::size_t>& n_grid,
                                   SweepRegime regime, std::size_t reps, std::uint64_t seed,
                                   const std::vector<EstimatorTag>& estimators, std::size_t workers) {
  require(!n_grid.empty(), "n_grid", "needs at least one trial size");
  if (regime.kind == SweepRegime::Kind::fixed_m) require(regime.value >= 1.0, "m", "needs m >= 1");
  if (regime.kind == SweepRegime::Kind::ratio) {
    require(std::isfinite(regime.value) && regime.value > 0.0, "lambda", "needs a finite lambda > 0");
  }
  std::vector<EstimatorTag> tags;
  for (auto tag : estimators) {
    const auto t = regime.kind == SweepRegime::Kind::ratio_inf ? semi_counterpart(tag) : tag;
    if (std::find(tags.begin(), tags.end(), t) == tags.end()) tags.push_back(t);
  }

  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < n_grid.size(); ++i) {
    const std::size_t n = n_grid[i];
    McConfig cfg;
    cfg.n = n;
    const auto m = regime.target_size(n);
    cfg.m = m.value_or(0);
    cfg.reps = reps;
    cfg.seed = derive_seed(seed, i);
    cfg.estimators = tags;
    cfg.workers = workers;
    const auto report = run_monte_carlo(spec, cfg);

    AsymptoticRegime lambda = AsymptoticRegime::infinite();
    if (regime.kind == SweepRegime::Kind::ratio) lambda = AsymptoticRegime::finite(regime.value);
    if (regime.kind == SweepRegime::Kind::fixed_m) {
      lambda = AsymptoticRegime::finite(regime.value / static_cast<double>(n));
    }

    for (const auto& r : report.rows) {
      SweepRow row;
      row.n = n;
      row.m = m;
      row.tag = r.tag;
      row.variance = r.variance.value_or(0.0);
      row.variance_mc_se = r.variance_mc_se.value_or(0.0);
      const std::size_t scale = (needs_target_sample(r.tag) && m) ? std::min(n, *m) : n;
      row.scaled_variance = static_cast<double>(scale) * row.variance;
      row.theory_asymptote = sweep_asymptote(spec, r.tag, lambda);
      rows.push_back(row);
    }
  }
  return rows;
}

// ---- covariate inflation ----------------------------------------------------

double ShiftLevel::shift_param() const {
  if (q_R.size() != q_T.size()) {
    throw ValidationError(ErrorKind::dimension_mismatch, "q", "q_R and q_T need equal length");
  }
  double d = 0.0;
  for (std::size_t v = 0; v < q_R.size(); ++v) d += std::abs(q_T[v] - q_R[v]);
  return 0.5 * d;
}

std::vector<InflationRow> inflation_experiment(const DgpSpec& base, const std::vector<ShiftLevel>& grid,
                                               const McConfig& cfg) {
  require(!grid.empty(), "grid", "needs at least one shift level");
  require(cfg.estimators.size() == 1, "estimators", "needs exactly one estimator");
  std::vector<InflationRow> rows;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto& level = grid[i];
    ExtendedDgpSpec ext{base, {}, level.q_R, level.q_T,
                        std::vector<std::vector<double>>(base.size(), std::vector<double>(level.q_R.size(), 0.0))};
    for (std::size_t v = 0; v < level.q_R.size(); ++v) {
      ext.aux_support.push_back({static_cast<StratumId>(v), "v" + std::to_string(v)});
    }
    const auto flat = ext.flatten();
    McConfig run = cfg;
    run.keep_values = true;
    run.seed = derive_seed(cfg.seed, i);
    const auto reports =
        run_monte_carlo(flat, run, {ext.base_projection(), AdjustmentMap::identity(flat.size())});
    const auto ratio = paired_variance_ratio(reports[1].rows[0].values, reports[0].rows[0].values);

    InflationRow row;
    row.shift_param = level.shift_param();
    row.theory_factor = inflation_factor(level.q_R, level.q_T);
    row.empirical_factor = ratio.ratio;
    row.mc_se = ratio.se;
    row.variance_base = reports[0].rows[0].variance.value_or(0.0);
    row.variance_extended = reports[1].rows[0].variance.value_or(0.0);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace ipsw

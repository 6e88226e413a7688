#include "ipsw/domain.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace ipsw {

namespace {

constexpr double kNormalizationTolerance = 1e-12;

std::string join_messages(const std::vector<Violation>& violations) {
  std::ostringstream out;
  out << "validation failed:";
  for (const auto& v : violations) {
    out << "\n  [" << to_string(v.kind) << "] " << v.field << ": " << v.message;
  }
  return out.str();
}

void check_distribution(std::span<const double> p, const std::string& field,
                        std::vector<Violation>& out) {
  double total = 0.0;
  bool finite = true;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!std::isfinite(p[i])) {
      finite = false;
      out.push_back({ErrorKind::non_finite_value, field,
                     "entry " + std::to_string(i) + " is not finite"});
    } else if (p[i] < 0.0) {
      out.push_back({ErrorKind::probability_not_normalized, field,
                     "entry " + std::to_string(i) + " is negative"});
    }
    total += p[i];
  }
  if (finite && std::abs(total - 1.0) > kNormalizationTolerance) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "sums to " << total << ", expected 1";
    out.push_back({ErrorKind::probability_not_normalized, field, msg.str()});
  }
}

}  // namespace

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::probability_not_normalized: return "ProbabilityNotNormalized";
    case ErrorKind::support_violation: return "SupportViolation";
    case ErrorKind::pi_out_of_range: return "PiOutOfRange";
    case ErrorKind::negative_variance: return "NegativeVariance";
    case ErrorKind::non_finite_value: return "NonFiniteValue";
    case ErrorKind::dimension_mismatch: return "DimensionMismatch";
    case ErrorKind::empty_support: return "EmptySupport";
    case ErrorKind::invalid_stratum_id: return "InvalidStratumId";
    case ErrorKind::parameter_out_of_range: return "ParameterOutOfRange";
    case ErrorKind::tau_shift_not_centered: return "TauShiftNotCentered";
    case ErrorKind::not_non_shifted: return "NotNonShifted";
    case ErrorKind::variant_parameter_mismatch: return "VariantParameterMismatch";
  }
  return "Unknown";
}

ValidationError::ValidationError(std::vector<Violation> violations)
    : std::runtime_error(join_messages(violations)), violations_(std::move(violations)) {}

ValidationError::ValidationError(ErrorKind kind, std::string field, std::string message)
    : ValidationError(std::vector<Violation>{{kind, std::move(field), std::move(message)}}) {}

bool ValidationError::has(ErrorKind kind) const noexcept {
  for (const auto& v : violations_) {
    if (v.kind == kind) return true;
  }
  return false;
}

std::vector<Violation> validate_dgp(const DgpTable& t) {
  std::vector<Violation> out;
  const std::size_t k = t.strata.size();
  if (k == 0) {
    out.push_back({ErrorKind::empty_support, "strata", "support is empty"});
    return out;
  }
  if (t.p_R.size() != k || t.p_T.size() != k || t.pi.size() != k || t.outcomes.size() != k) {
    out.push_back({ErrorKind::dimension_mismatch, "strata",
                   "p_R, p_T, pi and outcomes must all have one entry per stratum"});
    return out;
  }
  for (std::size_t i = 0; i < k; ++i) {
    if (t.strata[i].id != i) {
      out.push_back({ErrorKind::invalid_stratum_id, "id",
                     "stratum ids must be dense 0..K-1, found " +
                         std::to_string(t.strata[i].id) + " at position " + std::to_string(i)});
    }
  }
  check_distribution(t.p_R, "p_R", out);
  check_distribution(t.p_T, "p_T", out);
  for (std::size_t i = 0; i < k; ++i) {
    const std::string where = "stratum " + std::to_string(i);
    if (t.p_T[i] > 0.0 && !(t.p_R[i] > 0.0)) {
      out.push_back({ErrorKind::support_violation, "p_R", where + " has p_T > 0 but p_R = 0"});
    }
    if (!(t.pi[i] > 0.0 && t.pi[i] < 1.0)) {
      out.push_back({ErrorKind::pi_out_of_range, "pi", where + " needs 0 < pi < 1"});
    }
    const auto& o = t.outcomes[i];
    if (!std::isfinite(o.mean0) || !std::isfinite(o.mean1) || !std::isfinite(o.var0) ||
        !std::isfinite(o.var1)) {
      out.push_back({ErrorKind::non_finite_value, "outcomes", where + " has a non-finite moment"});
    }
    if (o.var0 < 0.0) out.push_back({ErrorKind::negative_variance, "var0", where});
    if (o.var1 < 0.0) out.push_back({ErrorKind::negative_variance, "var1", where});
  }
  return out;
}

DgpSpec DgpSpec::from_table(DgpTable table) {
  // Drop strata absent from both populations, then renumber.
  const std::size_t k = table.strata.size();
  bool dense = true;
  for (std::size_t i = 0; i < k; ++i) dense = dense && table.strata[i].id == i;
  if (dense && table.p_R.size() == k && table.p_T.size() == k && table.pi.size() == k &&
      table.outcomes.size() == k) {
    DgpTable kept;
    for (std::size_t i = 0; i < k; ++i) {
      if (table.p_R[i] == 0.0 && table.p_T[i] == 0.0) continue;
      Stratum s = table.strata[i];
      s.id = static_cast<StratumId>(kept.strata.size());
      kept.strata.push_back(std::move(s));
      kept.p_R.push_back(table.p_R[i]);
      kept.p_T.push_back(table.p_T[i]);
      kept.pi.push_back(table.pi[i]);
      kept.outcomes.push_back(table.outcomes[i]);
    }
    table = std::move(kept);
  }
  auto violations = validate_dgp(table);
  if (!violations.empty()) throw ValidationError(std::move(violations));
  return DgpSpec(std::move(table));
}

double probability_ratio(const DgpSpec& spec, StratumId x) {
  if (x >= spec.size()) {
    throw ValidationError(ErrorKind::invalid_stratum_id, "x",
                          "stratum " + std::to_string(x) + " is outside the support");
  }
  return spec.p_T(x) / spec.p_R(x);
}

double true_ate(const DgpSpec& spec) {
  double ate = 0.0;
  for (StratumId x = 0; x < spec.size(); ++x) ate += spec.p_T(x) * spec.cate(x);
  return ate;
}

double trial_ate(const DgpSpec& spec) {
  double ate = 0.0;
  for (StratumId x = 0; x < spec.size(); ++x) ate += spec.p_R(x) * spec.cate(x);
  return ate;
}

double target_cate_variance(const DgpSpec& spec) {
  const double mean = true_ate(spec);
  double var = 0.0;
  for (StratumId x = 0; x < spec.size(); ++x) {
    const double d = spec.cate(x) - mean;
    var += spec.p_T(x) * d * d;
  }
  return var;
}

void TrialSample::validate() const {
  std::vector<Violation> out;
  if (x.empty()) out.push_back({ErrorKind::parameter_out_of_range, "n", "trial sample is empty"});
  if (a.size() != x.size() || y.size() != x.size()) {
    out.push_back({ErrorKind::dimension_mismatch, "trial", "x, a and y must have equal lengths"});
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] >= support_size) {
      out.push_back({ErrorKind::invalid_stratum_id, "x",
                     "unit " + std::to_string(i) + " has stratum " + std::to_string(x[i])});
      break;
    }
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] > 1) {
      out.push_back({ErrorKind::parameter_out_of_range, "a",
                     "unit " + std::to_string(i) + " has treatment not in {0,1}"});
      break;
    }
  }
  if (!out.empty()) throw ValidationError(std::move(out));
}

void TargetSample::validate() const {
  std::vector<Violation> out;
  if (x.empty()) out.push_back({ErrorKind::parameter_out_of_range, "m", "target sample is empty"});
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] >= support_size) {
      out.push_back({ErrorKind::invalid_stratum_id, "x",
                     "unit " + std::to_string(i) + " has stratum " + std::to_string(x[i])});
      break;
    }
  }
  if (!out.empty()) throw ValidationError(std::move(out));
}

AdjustmentMap AdjustmentMap::identity(std::size_t size) {
  AdjustmentMap map;
  map.coarse_of.resize(size);
  std::iota(map.coarse_of.begin(), map.coarse_of.end(), StratumId{0});
  map.coarse_size = size;
  return map;
}

void AdjustmentMap::validate(std::size_t fine_size) const {
  if (coarse_of.size() != fine_size) {
    throw ValidationError(ErrorKind::dimension_mismatch, "adjustment",
                          "map has " + std::to_string(coarse_of.size()) + " entries for " +
                              std::to_string(fine_size) + " strata");
  }
  for (auto c : coarse_of) {
    if (c >= coarse_size) {
      throw ValidationError(ErrorKind::invalid_stratum_id, "adjustment",
                            "coarse id " + std::to_string(c) + " out of range");
    }
  }
}

DgpSpec collapse(const DgpSpec& spec, const AdjustmentMap& map) {
  map.validate(spec.size());
  const std::size_t kc = map.coarse_size;
  DgpTable t;
  t.strata.resize(kc);
  t.p_R.assign(kc, 0.0);
  t.p_T.assign(kc, 0.0);
  t.pi.assign(kc, 0.0);
  t.outcomes.assign(kc, StratumOutcomeModel{});
  std::vector<double> m2_0(kc, 0.0), m2_1(kc, 0.0);

  for (StratumId x = 0; x < spec.size(); ++x) {
    const StratumId c = map.coarse_of[x];
    const double w = spec.p_R(x);
    const auto& o = spec.outcome(x);
    t.p_R[c] += w;
    t.p_T[c] += spec.p_T(x);
    t.pi[c] += w * spec.pi(x);
    t.outcomes[c].mean0 += w * o.mean0;
    t.outcomes[c].mean1 += w * o.mean1;
    m2_0[c] += w * o.second_moment0();
    m2_1[c] += w * o.second_moment1();
  }
  for (std::size_t c = 0; c < kc; ++c) {
    t.strata[c].id = static_cast<StratumId>(c);
    auto& o = t.outcomes[c];
    const double w = t.p_R[c];
    if (w > 0.0) {
      t.pi[c] /= w;
      o.mean0 /= w;
      o.mean1 /= w;
      o.var0 = std::max(0.0, m2_0[c] / w - o.mean0 * o.mean0);
      o.var1 = std::max(0.0, m2_1[c] / w - o.mean1 * o.mean1);
    } else {
      // Absent from the trial; validation reports the support violation.
      t.pi[c] = 0.5;
    }
  }
  return DgpSpec::from_table(std::move(t));
}

void ExtendedDgpSpec::validate() const {
  std::vector<Violation> out;
  const std::size_t nv = aux_support.size();
  if (nv == 0) out.push_back({ErrorKind::empty_support, "aux_support", "V has no levels"});
  if (q_R.size() != nv || q_T.size() != nv) {
    out.push_back({ErrorKind::dimension_mismatch, "q", "q_R and q_T need one entry per level of V"});
  }
  if (tau_shift.size() != base.size()) {
    out.push_back({ErrorKind::dimension_mismatch, "tau_shift", "needs one row per stratum of X"});
  }
  for (const auto& row : tau_shift) {
    if (row.size() != nv) {
      out.push_back({ErrorKind::dimension_mismatch, "tau_shift", "rows need one entry per level of V"});
      break;
    }
  }
  if (!out.empty()) throw ValidationError(std::move(out));

  check_distribution(q_R, "q_R", out);
  check_distribution(q_T, "q_T", out);
  for (std::size_t v = 0; v < nv; ++v) {
    if (q_T[v] > 0.0 && !(q_R[v] > 0.0)) {
      out.push_back({ErrorKind::support_violation, "q_R",
                     "level " + std::to_string(v) + " has q_T > 0 but q_R = 0"});
    }
  }
  for (std::size_t x = 0; x < tau_shift.size(); ++x) {
    double centered = 0.0;
    double scale = 0.0;
    for (std::size_t v = 0; v < nv; ++v) {
      centered += q_T[v] * tau_shift[x][v];
      scale += std::abs(tau_shift[x][v]);
    }
    if (std::abs(centered) > 1e-12 * std::max(1.0, scale)) {
      out.push_back({ErrorKind::tau_shift_not_centered, "tau_shift",
                     "row " + std::to_string(x) + " has nonzero q_T-mean"});
    }
  }
  if (!out.empty()) throw ValidationError(std::move(out));
}

bool ExtendedDgpSpec::is_non_modifier() const {
  for (const auto& row : tau_shift) {
    for (double s : row) {
      if (s != 0.0) return false;
    }
  }
  return true;
}

bool ExtendedDgpSpec::is_non_shifted() const { return q_R == q_T; }

DgpSpec ExtendedDgpSpec::flatten() const {
  validate();
  const std::size_t nv = aux_size();
  DgpTable t;
  for (StratumId x = 0; x < base.size(); ++x) {
    for (std::size_t v = 0; v < nv; ++v) {
      const double s = tau_shift[x][v];
      const double pi = base.pi(x);
      StratumOutcomeModel o = base.outcome(x);
      o.mean1 += pi * s;
      o.mean0 -= (1.0 - pi) * s;
      std::string label = base.strata()[x].label;
      if (label.empty()) label = std::to_string(x);
      const std::string aux = aux_support[v].label.empty() ? std::to_string(v) : aux_support[v].label;
      t.strata.push_back({static_cast<StratumId>(t.strata.size()), label + "|" + aux});
      t.p_R.push_back(base.p_R(x) * q_R[v]);
      t.p_T.push_back(base.p_T(x) * q_T[v]);
      t.pi.push_back(pi);
      t.outcomes.push_back(o);
    }
  }
  // Zero-probability cells are removed by from_table; build the spec from
  // the full grid so base_projection() stays aligned.
  for (std::size_t i = 0; i < t.strata.size(); ++i) {
    if (t.p_R[i] == 0.0 && t.p_T[i] == 0.0) {
      throw ValidationError(ErrorKind::support_violation, "q",
                            "cell " + t.strata[i].label + " has zero probability in both populations");
    }
  }
  return DgpSpec::from_table(std::move(t));
}

AdjustmentMap ExtendedDgpSpec::base_projection() const {
  AdjustmentMap map;
  const std::size_t nv = aux_size();
  map.coarse_size = base.size();
  map.coarse_of.reserve(base.size() * nv);
  for (StratumId x = 0; x < base.size(); ++x) {
    for (std::size_t v = 0; v < nv; ++v) map.coarse_of.push_back(x);
  }
  return map;
}

DgpSpec ExtendedDgpSpec::marginal() const { return collapse(flatten(), base_projection()); }

}  // namespace ipsw

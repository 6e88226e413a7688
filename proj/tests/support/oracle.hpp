#pragma once

// Brute-force reference computations for tests. Everything here enumerates
// configurations directly and shares no code with the theory module.

#include <cstddef>
#include <random>

#include "ipsw/domain.hpp"
#include "ipsw/estimators.hpp"

namespace ipsw::oracle {

struct Moments {
  double mean = 0.0;
  double variance = 0.0;
};

/// Exact mean and variance of an estimator by enumerating every trial
/// (stratum, arm) assignment of n units and, for target-reading variants,
/// every target draw of size m. Outcome noise is integrated analytically:
/// each estimator is affine in y given (x, a), so its conditional moments
/// follow from the coefficients found by probing unit vectors.
Moments enumerate_moments(const DgpSpec& spec, std::size_t n, std::size_t m, EstimatorTag tag);

/// E[f(Z)] for Z ~ Binomial(n, p) by direct summation of the pmf.
template <class F>
double binomial_expectation(std::size_t n, double p, F f) {
  double total = 0.0;
  double coef = 1.0;  // C(n, k)
  for (std::size_t k = 0; k <= n; ++k) {
    if (k > 0) coef = coef * static_cast<double>(n - k + 1) / static_cast<double>(k);
    double w = coef;
    for (std::size_t i = 0; i < k; ++i) w *= p;
    for (std::size_t i = k; i < n; ++i) w *= 1.0 - p;
    total += w * f(k);
  }
  return total;
}

/// Random valid spec with K strata, all p_R > 0.
DgpSpec random_spec(std::mt19937_64& rng, std::size_t k);

}  // namespace ipsw::oracle

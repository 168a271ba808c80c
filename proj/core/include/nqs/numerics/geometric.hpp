#pragma once

#include <cmath>
#include <cstdint>

#include "nqs/numerics/dual.hpp"

namespace nqs {

// Below this |1 - rho^2| the closed form loses all significant digits.
inline constexpr double kGeometricLimitThreshold = 1e-12;

// log|1 - x|, using log1p where it is accurate.
template <typename T>
T log_abs_one_minus(const T& x) {
  using std::log;
  using std::log1p;
  if (value_of(x) < 1.0) return log1p(-x);
  return log(x - 1.0);
}

// sum_{j=0}^{K-1} rho^{2j} from log(rho^2) and 1 - rho^2, both supplied by the
// caller in whatever form is most accurate for it.
template <typename T>
T geometric_sum_sq_from(const T& log_rho_sq, const T& one_minus_rho_sq, double steps) {
  using std::expm1;
  if (steps <= 0.0) return T(0.0);
  if (std::abs(value_of(one_minus_rho_sq)) < kGeometricLimitThreshold) {
    // Limit K plus its first-order correction, continuous across rho^2 = 1.
    return steps - 0.5 * steps * (steps - 1.0) * one_minus_rho_sq;
  }
  return -expm1(steps * log_rho_sq) / one_minus_rho_sq;
}

// Same sum written in terms of the per-step contraction x, rho = 1 - x.
template <typename T>
T geometric_sum_sq_step(const T& x, double steps) {
  return geometric_sum_sq_from(2.0 * log_abs_one_minus(x), x * (2.0 - x), steps);
}

// sum_{j=0}^{K-1} rho^{2j}; 0 for K = 0.
inline double geometric_sum_sq(double rho, std::int64_t steps) {
  if (steps <= 0) return 0.0;
  const double one_minus = (1.0 - rho) * (1.0 + rho);
  return geometric_sum_sq_from(2.0 * std::log(std::abs(rho)), one_minus, static_cast<double>(steps));
}

}  // namespace nqs

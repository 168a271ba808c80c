#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <type_traits>

#include "nqs/numerics/dual.hpp"

namespace nqs {

namespace detail {
// B_{2j} / (2j)! for j = 1..8.
inline constexpr std::array<double, 8> kBernoulliOverFactorial = {
    1.0 / 12.0,
    -1.0 / 720.0,
    1.0 / 30240.0,
    -1.0 / 1209600.0,
    1.0 / 47900160.0,
    -691.0 / 1307674368000.0,
    1.0 / 74724249600.0,
    -3617.0 / 10670622842880000.0,
};
inline constexpr double kZetaShift = 10.0;
}  // namespace detail

// sum_{n=N+1}^inf n^{-p}, i.e. the Hurwitz zeta function at (p, N + 1).
// Templated so the exponent can carry derivative slots.
template <typename T>
  requires(!std::is_integral_v<T>)
T zeta_tail(const T& p, std::int64_t n_start) {
  using std::exp;
  if (!(value_of(p) > 1.0)) throw std::domain_error("zeta_tail: exponent must exceed 1 (series diverges)");
  if (n_start < 0) throw std::invalid_argument("zeta_tail: N must be >= 0");
  double a = static_cast<double>(n_start) + 1.0;
  T acc(0.0);
  // Shift the argument so the asymptotic expansion converges to full precision.
  while (a < detail::kZetaShift) {
    acc += exp(-p * std::log(a));
    a += 1.0;
  }
  const double log_a = std::log(a);
  const T a_pow = exp(-p * log_a);  // a^{-p}
  acc += a_pow * a / (p - 1.0) + 0.5 * a_pow;
  // Bernoulli terms: B_2j/(2j)! * p(p+1)...(p+2j-2) * a^{-p-2j+1}
  T rising = p;
  T power = a_pow / a;
  const double inv_a2 = 1.0 / (a * a);
  for (std::size_t j = 0; j < detail::kBernoulliOverFactorial.size(); ++j) {
    acc += detail::kBernoulliOverFactorial[j] * rising * power;
    const double k = 2.0 * static_cast<double>(j) + 1.0;
    rising = rising * (p + k) * (p + (k + 1.0));
    power = power * inv_a2;
  }
  return acc;
}

}  // namespace nqs

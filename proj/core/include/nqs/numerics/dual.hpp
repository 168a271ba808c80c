#pragma once

#include <array>
#include <cmath>
#include <cstddef>

namespace nqs {

// Forward-mode derivative carrier: a value plus one partial per differentiated
// parameter. With all partials zero it behaves exactly like a double.
template <std::size_t Dim>
struct Dual {
  double value = 0.0;
  std::array<double, Dim> partials{};

  constexpr Dual() = default;
  constexpr Dual(double v) : value(v) {}  // NOLINT(google-explicit-constructor)

  static constexpr Dual variable(double v, std::size_t slot) {
    Dual d(v);
    d.partials[slot] = 1.0;
    return d;
  }

  constexpr Dual& operator+=(const Dual& o) {
    value += o.value;
    for (std::size_t i = 0; i < Dim; ++i) partials[i] += o.partials[i];
    return *this;
  }
  constexpr Dual& operator-=(const Dual& o) {
    value -= o.value;
    for (std::size_t i = 0; i < Dim; ++i) partials[i] -= o.partials[i];
    return *this;
  }
  constexpr Dual& operator*=(const Dual& o) {
    for (std::size_t i = 0; i < Dim; ++i) partials[i] = partials[i] * o.value + value * o.partials[i];
    value *= o.value;
    return *this;
  }
  constexpr Dual& operator/=(const Dual& o) {
    const double inv = 1.0 / o.value;
    const double q = value * inv;
    for (std::size_t i = 0; i < Dim; ++i) partials[i] = (partials[i] - q * o.partials[i]) * inv;
    value = q;
    return *this;
  }
  constexpr Dual& operator+=(double c) {
    value += c;
    return *this;
  }
  constexpr Dual& operator-=(double c) {
    value -= c;
    return *this;
  }
  constexpr Dual& operator*=(double c) {
    value *= c;
    for (auto& p : partials) p *= c;
    return *this;
  }
  constexpr Dual& operator/=(double c) { return *this *= (1.0 / c); }
};

template <std::size_t D>
constexpr Dual<D> operator-(Dual<D> a) {
  a.value = -a.value;
  for (auto& p : a.partials) p = -p;
  return a;
}

template <std::size_t D>
constexpr Dual<D> operator+(Dual<D> a, const Dual<D>& b) { return a += b; }
template <std::size_t D>
constexpr Dual<D> operator-(Dual<D> a, const Dual<D>& b) { return a -= b; }
template <std::size_t D>
constexpr Dual<D> operator*(Dual<D> a, const Dual<D>& b) { return a *= b; }
template <std::size_t D>
constexpr Dual<D> operator/(Dual<D> a, const Dual<D>& b) { return a /= b; }

template <std::size_t D>
constexpr Dual<D> operator+(Dual<D> a, double c) { return a += c; }
template <std::size_t D>
constexpr Dual<D> operator+(double c, Dual<D> a) { return a += c; }
template <std::size_t D>
constexpr Dual<D> operator-(Dual<D> a, double c) { return a -= c; }
template <std::size_t D>
constexpr Dual<D> operator-(double c, const Dual<D>& a) { return -a + c; }
template <std::size_t D>
constexpr Dual<D> operator*(Dual<D> a, double c) { return a *= c; }
template <std::size_t D>
constexpr Dual<D> operator*(double c, Dual<D> a) { return a *= c; }
template <std::size_t D>
constexpr Dual<D> operator/(Dual<D> a, double c) { return a /= c; }
template <std::size_t D>
constexpr Dual<D> operator/(double c, const Dual<D>& a) {
  Dual<D> r(c / a.value);
  const double s = -r.value / a.value;
  for (std::size_t i = 0; i < D; ++i) r.partials[i] = s * a.partials[i];
  return r;
}

namespace detail {
// f(a) with f'(a) supplied: the chain rule in one place.
template <std::size_t D>
constexpr Dual<D> chain(const Dual<D>& a, double fa, double dfa) {
  Dual<D> r(fa);
  for (std::size_t i = 0; i < D; ++i) r.partials[i] = dfa * a.partials[i];
  return r;
}
}  // namespace detail

template <std::size_t D>
Dual<D> exp(const Dual<D>& a) {
  const double e = std::exp(a.value);
  return detail::chain(a, e, e);
}
template <std::size_t D>
Dual<D> expm1(const Dual<D>& a) {
  const double em1 = std::expm1(a.value);
  return detail::chain(a, em1, em1 + 1.0);
}
template <std::size_t D>
Dual<D> log(const Dual<D>& a) {
  return detail::chain(a, std::log(a.value), 1.0 / a.value);
}
template <std::size_t D>
Dual<D> log1p(const Dual<D>& a) {
  return detail::chain(a, std::log1p(a.value), 1.0 / (1.0 + a.value));
}
template <std::size_t D>
Dual<D> sqrt(const Dual<D>& a) {
  const double s = std::sqrt(a.value);
  return detail::chain(a, s, 0.5 / s);
}
template <std::size_t D>
Dual<D> abs(const Dual<D>& a) {
  return a.value < 0.0 ? -a : a;
}
template <std::size_t D>
Dual<D> pow(const Dual<D>& a, double e) {
  const double v = std::pow(a.value, e);
  return detail::chain(a, v, e * std::pow(a.value, e - 1.0));
}

// Uniform access for code templated over double and Dual.
constexpr double value_of(double x) { return x; }
template <std::size_t D>
constexpr double value_of(const Dual<D>& x) { return x.value; }

template <typename T>
inline constexpr bool is_dual_v = false;
template <std::size_t D>
inline constexpr bool is_dual_v<Dual<D>> = true;

}  // namespace nqs

#pragma once

#include <array>
#include <stdexcept>

namespace nqs {

inline constexpr int kGaussLegendrePoints = 20;

struct GaussLegendreRule {
  std::array<double, kGaussLegendrePoints> nodes;    // on [-1, 1], ascending
  std::array<double, kGaussLegendrePoints> weights;  // sum to 2
};

// Fixed 20-point rule; exact for polynomials of degree <= 39.
const GaussLegendreRule& gauss_legendre_rule();

template <typename F>
auto gauss_legendre_integrate(F&& f, double a, double b) {
  if (a > b) throw std::invalid_argument("gauss_legendre_integrate: lower bound exceeds upper bound");
  const auto& rule = gauss_legendre_rule();
  const double half = 0.5 * (b - a);
  const double mid = 0.5 * (a + b);
  decltype(f(a)) acc(0.0);
  for (int i = 0; i < kGaussLegendrePoints; ++i) acc += rule.weights[i] * f(mid + half * rule.nodes[i]);
  return acc * half;
}

}  // namespace nqs

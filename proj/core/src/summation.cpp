#include "nqs/numerics/summation.hpp"

#include <algorithm>

#include "nqs/numerics/quadrature.hpp"

namespace nqs {

std::int64_t SummationRule::head_cutoff(std::int64_t n_terms) const {
  if (n_terms <= head_max) return n_terms;
  const auto frac = static_cast<std::int64_t>(head_fraction * static_cast<double>(n_terms));
  return std::clamp<std::int64_t>(frac, 1, head_max);
}

std::vector<WeightedNode> summation_nodes(std::int64_t n_terms, const SummationRule& rule) {
  std::vector<WeightedNode> nodes;
  if (n_terms < 1) return nodes;
  const std::int64_t head = rule.head_cutoff(n_terms);
  nodes.reserve(static_cast<std::size_t>(head) + kGaussLegendrePoints + 1);
  for (std::int64_t n = 1; n <= head; ++n) {
    const auto x = static_cast<double>(n);
    nodes.push_back({x, std::log(x), 1.0});
  }
  if (head == n_terms) return nodes;

  // Tail: integral over [L, N] plus (f(N) - f(L)) / 2.
  nodes.back().weight -= 0.5;
  const auto lo = static_cast<double>(head);
  const auto hi = static_cast<double>(n_terms);
  const auto& gl = gauss_legendre_rule();
  if (rule.log_substitution) {
    const double a = std::log(lo);
    const double b = std::log(hi);
    const double half = 0.5 * (b - a);
    const double mid = 0.5 * (a + b);
    for (int i = 0; i < kGaussLegendrePoints; ++i) {
      const double u = mid + half * gl.nodes[i];
      const double n = std::exp(u);
      nodes.push_back({n, u, half * gl.weights[i] * n});
    }
  } else {
    const double half = 0.5 * (hi - lo);
    const double mid = 0.5 * (hi + lo);
    for (int i = 0; i < kGaussLegendrePoints; ++i) {
      const double n = mid + half * gl.nodes[i];
      nodes.push_back({n, std::log(n), half * gl.weights[i]});
    }
  }
  nodes.push_back({hi, std::log(hi), 0.5});
  return nodes;
}

}  // namespace nqs

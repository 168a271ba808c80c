#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "nqs/numerics/dual.hpp"

namespace nqs {

class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(double node, const std::string& what)
      : std::runtime_error(what + " (non-finite value at n = " + std::to_string(node) + ")"), node_(node) {}
  double node() const { return node_; }

 private:
  double node_;
};

// Head/tail split for sums over modes 1..N. Sums with N <= head_max are
// evaluated term by term. Otherwise the first L = min(int(head_fraction * N),
// head_max) terms are exact and the remainder is the integral from L to N plus
// the first-order Euler-Maclaurin correction (f(N) - f(L)) / 2.
struct SummationRule {
  std::int64_t head_max = 100;
  double head_fraction = 0.05;
  // Gauss-Legendre points for the tail integral, taken in u = log n.
  bool log_substitution = true;

  std::int64_t head_cutoff(std::int64_t n_terms) const;
};

struct WeightedNode {
  double n;
  double log_n;
  double weight;
};

// The hybrid sum is linear in f, so it reduces to a weighted node list:
// sum_{n=1}^N f(n) ~= sum_i weight_i * f(n_i).
std::vector<WeightedNode> summation_nodes(std::int64_t n_terms, const SummationRule& rule = {});

template <typename F>
auto hybrid_power_sum(F&& f, std::int64_t n_terms, const SummationRule& rule = {}) {
  using T = decltype(f(1.0));
  if (n_terms < 1) throw std::invalid_argument("hybrid_power_sum: N must be >= 1");
  T acc(0.0);
  for (const auto& node : summation_nodes(n_terms, rule)) {
    const T v = f(node.n);
    if (!std::isfinite(value_of(v))) throw NonFiniteError(node.n, "hybrid_power_sum");
    acc += node.weight * v;
  }
  return acc;
}

template <typename F>
auto exact_power_sum(F&& f, std::int64_t n_terms) {
  using T = decltype(f(1.0));
  T acc(0.0);
  for (std::int64_t n = 1; n <= n_terms; ++n) acc += f(static_cast<double>(n));
  return acc;
}

}  // namespace nqs

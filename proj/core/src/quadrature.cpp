#include "nqs/numerics/quadrature.hpp"

#include <cmath>
#include <numbers>

namespace nqs {

namespace {

GaussLegendreRule build_rule() {
  constexpr int n = kGaussLegendrePoints;
  GaussLegendreRule rule{};
  for (int i = 0; i < n; ++i) {
    // Chebyshev-like starting guess, then Newton on P_n.
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0;
      double p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = pk;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    rule.nodes[n - 1 - i] = x;
    rule.weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
  }
  return rule;
}

}  // namespace

const GaussLegendreRule& gauss_legendre_rule() {
  static const GaussLegendreRule rule = build_rule();
  return rule;
}

}  // namespace nqs

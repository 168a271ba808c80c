#pragma once

// Per-mode summands of the NQS loss and expected weight norm, templated over
// double and Dual so the same code yields values and parameter gradients.

#include <cmath>
#include <cstdint>
#include <optional>

#include "nqs/model.hpp"
#include "nqs/numerics/dual.hpp"
#include "nqs/numerics/geometric.hpp"

namespace nqs::detail {

template <typename T>
struct ModeQuantities {
  T approx;           // P n^-p, the mode's initial excess loss
  T contraction;      // x = Q n^-q
  T noise;            // Q R n^-(q+r), per-step loss-units noise at B = 1
  T log_abs_rho;      // log|1 - x|
  T one_minus_rho_sq; // 1 - (1 - x)^2 = x (2 - x)
};

template <typename T>
ModeQuantities<T> mode_quantities(const BasicNqsParams<T>& th, double log_n) {
  using std::exp;
  const T n_q = exp(-log_n * th.hessian_exponent);
  const T n_r = exp(-log_n * th.noise_exponent);
  ModeQuantities<T> m{
      th.approx_scale * exp(-log_n * th.approx_exponent),
      th.hessian_scale * n_q,
      th.hessian_scale * th.noise_scale * n_q * n_r,
      T(0.0),
      T(0.0),
  };
  m.log_abs_rho = log_abs_one_minus(m.contraction);
  m.one_minus_rho_sq = m.contraction * (2.0 - m.contraction);
  return m;
}

// bias + var of one mode after K constant unit-rate steps.
template <typename T>
T constant_rate_loss_term(const ModeQuantities<T>& m, double batch, double steps) {
  using std::expm1;
  if (steps <= 0.0) return m.approx;
  const T decay_m1 = expm1((2.0 * steps) * m.log_abs_rho);  // rho^{2K} - 1
  T geo;
  if (std::abs(value_of(m.one_minus_rho_sq)) < kGeometricLimitThreshold)
    geo = geometric_sum_sq_from(2.0 * m.log_abs_rho, m.one_minus_rho_sq, steps);
  else
    geo = -decay_m1 / m.one_minus_rho_sq;
  return m.approx * (decay_m1 + 1.0) + m.noise * geo / batch;
}

template <typename T>
struct ScheduledMode {
  T log_decay;  // log prod (1 - gamma_k x)^2
  T noise_sum;  // sum_k gamma_k^2 prod_{j>k} (1 - gamma_j x)^2
  int sign;     // sign of prod (1 - gamma_k x)
};

template <typename T>
ScheduledMode<T> run_schedule(const T& contraction, const LrSchedule& schedule) {
  using std::exp;
  using std::log;
  ScheduledMode<T> out{T(0.0), T(0.0), 1};
  // Single steps (per-step feedback schedules) multiply their squared factor
  // into `pending`, which moves to log space before it can underflow.
  T pending(1.0);
  for (const auto& seg : schedule.segments) {
    if (seg.steps <= 0) continue;
    if (seg.steps == 1) {
      const T f = 1.0 - seg.gamma * contraction;
      const T f2 = f * f;
      out.noise_sum = f2 * out.noise_sum + seg.gamma * seg.gamma;
      pending *= f2;
      if (value_of(f) < 0.0) out.sign = -out.sign;
      if (value_of(pending) < 1e-200) {
        out.log_decay += log(pending);
        pending = T(1.0);
      }
      continue;
    }
    const double m = static_cast<double>(seg.steps);
    const T x = seg.gamma * contraction;
    const T log_abs = log_abs_one_minus(x);
    const T seg_log_decay = (2.0 * m) * log_abs;
    out.noise_sum = exp(seg_log_decay) * out.noise_sum +
                    (seg.gamma * seg.gamma) * geometric_sum_sq_from(2.0 * log_abs, x * (2.0 - x), m);
    out.log_decay += seg_log_decay;
    if (value_of(x) > 1.0 && (seg.steps % 2) == 1) out.sign = -out.sign;
  }
  if (value_of(pending) != 1.0) out.log_decay += log(pending);
  return out;
}

// 1 - F where F = sign * exp(log_decay / 2) is the signed bias factor.
template <typename T>
T one_minus_factor(const T& log_decay, int sign) {
  using std::exp;
  using std::expm1;
  const T half = 0.5 * log_decay;
  if (sign > 0) return -expm1(half);
  return 1.0 + exp(half);
}

// Smallest mode whose per-step factor fails to contract. The contraction is
// largest at n = 1, so instability always shows up there first.
template <typename T>
std::optional<std::int64_t> unstable_mode(const BasicNqsParams<T>& th, double max_gamma, std::int64_t steps) {
  if (steps <= 0) return std::nullopt;
  if (max_gamma * value_of(th.hessian_scale) >= 2.0) return std::int64_t{1};
  return std::nullopt;
}

inline double max_gamma(const LrSchedule& schedule) {
  double g = 0.0;
  for (const auto& seg : schedule.segments)
    if (seg.steps > 0 && seg.gamma > g) g = seg.gamma;
  return g;
}

}  // namespace nqs::detail

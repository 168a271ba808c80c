#include "nqs/model.hpp"

#include <cmath>

namespace nqs {

bool is_valid(const NqsParams& theta) {
  for (double v : theta.to_array())
    if (!std::isfinite(v)) return false;
  return theta.approx_exponent > 1.0 && theta.approx_scale > 0.0 && theta.hessian_exponent > 0.0 &&
         theta.hessian_scale > 0.0 && theta.noise_exponent > 0.0 && theta.noise_scale > 0.0;
}

void validate(const NqsParams& theta) {
  if (!is_valid(theta))
    throw std::invalid_argument("NqsParams: require p > 1, P, q, Q, r, R > 0 and all values finite");
}

double RunConfig::tokens() const {
  return static_cast<double>(batch) * static_cast<double>(steps) * static_cast<double>(seq_len);
}

double RunConfig::compute() const { return 6.0 * static_cast<double>(n_params) * tokens(); }

void validate(const RunConfig& run) {
  if (run.n_params < 1) throw std::invalid_argument("RunConfig: n_params must be >= 1");
  if (run.batch < 1) throw std::invalid_argument("RunConfig: batch must be >= 1");
  if (run.steps < 0) throw std::invalid_argument("RunConfig: steps must be >= 0");
  if (run.seq_len < 1) throw std::invalid_argument("RunConfig: seq_len must be >= 1");
}

std::int64_t LrSchedule::total_steps() const {
  std::int64_t total = 0;
  for (const auto& seg : segments) total += seg.steps;
  return total;
}

LrSchedule LrSchedule::constant(std::int64_t steps, double gamma) {
  LrSchedule s;
  if (steps > 0) s.segments.push_back({steps, gamma});
  return s;
}

void validate(const LrSchedule& schedule, std::int64_t expected_steps) {
  for (const auto& seg : schedule.segments) {
    if (seg.steps < 1) throw std::invalid_argument("LrSchedule: segment step counts must be >= 1");
    if (!(seg.gamma > 0.0) || !std::isfinite(seg.gamma))
      throw std::invalid_argument("LrSchedule: learning rates must be positive");
  }
  if (schedule.total_steps() != expected_steps)
    throw std::invalid_argument("LrSchedule: segment steps sum to " + std::to_string(schedule.total_steps()) +
                                ", expected " + std::to_string(expected_steps));
}

void validate(const LayerNormConfig& ln) {
  if (!(ln.s > 0.0) || !std::isfinite(ln.s)) throw std::invalid_argument("LayerNormConfig: s must be positive");
  if (!(ln.gamma_init > 0.0)) throw std::invalid_argument("LayerNormConfig: gamma_init must be positive");
  if (ln.n_segments < 1) throw std::invalid_argument("LayerNormConfig: n_segments must be >= 1");
  if (ln.mode_grid_size < 16) throw std::invalid_argument("LayerNormConfig: mode_grid_size must be >= 16");
  if (ln.exact_head < 1) throw std::invalid_argument("LayerNormConfig: exact_head must be >= 1");
}

}  // namespace nqs

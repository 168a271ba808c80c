#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace nqs {

// Index of each scaling parameter in gradient vectors and packed arrays.
enum class Param : std::size_t {
  approx_exponent = 0,  // p
  approx_scale,         // P
  hessian_exponent,     // q
  hessian_scale,        // Q (absorbs the step size)
  noise_exponent,       // r
  noise_scale,          // R
  irreducible,          // E_irr
};
inline constexpr std::size_t kNumParams = 7;
inline constexpr std::array<const char*, kNumParams> kParamNames = {"p", "P", "q", "Q", "r", "R", "e_irr"};

// Seven-parameter NQS scaling model. Mode n contributes
//   approx_scale / n^approx_exponent        initial excess loss
//   hessian_scale / n^hessian_exponent      curvature (step size folded in)
//   noise_scale / n^noise_exponent / B      gradient-noise variance
template <typename T>
struct BasicNqsParams {
  T approx_exponent{};
  T approx_scale{};
  T hessian_exponent{};
  T hessian_scale{};
  T noise_exponent{};
  T noise_scale{};
  T irreducible{};

  std::array<T, kNumParams> to_array() const {
    return {approx_exponent, approx_scale, hessian_exponent, hessian_scale, noise_exponent, noise_scale, irreducible};
  }
  static BasicNqsParams from_array(const std::array<T, kNumParams>& a) {
    return {a[0], a[1], a[2], a[3], a[4], a[5], a[6]};
  }
  bool operator==(const BasicNqsParams&) const = default;
};

using NqsParams = BasicNqsParams<double>;

// Throws std::invalid_argument unless p > 1, the scales and exponents are
// positive, and everything is finite.
void validate(const NqsParams& theta);
bool is_valid(const NqsParams& theta);

// One training configuration.
struct RunConfig {
  std::int64_t n_params = 1;  // N, number of trained modes
  std::int64_t batch = 1;     // B
  std::int64_t steps = 0;     // K
  std::int64_t seq_len = 1;

  double tokens() const;   // B * K * seq_len
  double compute() const;  // 6 * N * B * K * seq_len
  bool operator==(const RunConfig&) const = default;
};

void validate(const RunConfig& run);

struct LrSegment {
  std::int64_t steps = 1;
  double gamma = 1.0;
  bool operator==(const LrSegment&) const = default;
};

// Piecewise-constant learning-rate multipliers, applied in order.
struct LrSchedule {
  std::vector<LrSegment> segments;

  std::int64_t total_steps() const;
  static LrSchedule constant(std::int64_t steps, double gamma = 1.0);
  bool operator==(const LrSchedule&) const = default;
};

void validate(const LrSchedule& schedule, std::int64_t expected_steps);

// Weight-norm feedback on the step size: each segment runs at
// gamma_init * s / E||w||^2, with E||w||^2 taken at the segment start.
struct LayerNormConfig {
  double s = 1.0;  // E||w^(0)||^2
  double gamma_init = 1.0;
  std::int64_t n_segments = 64;
  std::int64_t mode_grid_size = 512;
  std::int64_t exact_head = 100;
};

void validate(const LayerNormConfig& ln);

class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(std::int64_t mode)
      : std::runtime_error("unstable dynamics: |1 - gamma*Q/n^q| >= 1 at mode n = " + std::to_string(mode)),
        mode_(mode) {}
  std::int64_t mode() const { return mode_; }

 private:
  std::int64_t mode_;
};

// A value that may instead be flagged as unstable, carrying the smallest mode
// whose per-step factor does not contract.
template <typename T>
struct Evaluation {
  T value{};
  std::optional<std::int64_t> unstable_mode;

  static Evaluation ok(T v) { return {std::move(v), std::nullopt}; }
  static Evaluation unstable(std::int64_t mode) { return {T{}, mode}; }

  bool stable() const { return !unstable_mode.has_value(); }
  explicit operator bool() const { return stable(); }
  const T& operator*() const {
    if (unstable_mode) throw DivergenceError(*unstable_mode);
    return value;
  }
};

}  // namespace nqs

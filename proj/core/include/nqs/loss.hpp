#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "nqs/model.hpp"
#include "nqs/numerics/dual.hpp"
#include "nqs/numerics/summation.hpp"

namespace nqs {

using Gradient = std::array<double, kNumParams>;
using ParamDual = Dual<kNumParams>;

// Loss left by the untrained modes n > N: P * sum_{n>N} n^-p.
double appx_error(const NqsParams& theta, std::int64_t n_params);

// Decay of the initial excess loss over the trained modes after K steps.
Evaluation<double> bias_error(const NqsParams& theta, std::int64_t n_params, std::int64_t steps,
                              const SummationRule& rule = {});

// Stationary-noise contribution after K steps at batch size B.
Evaluation<double> var_error(const NqsParams& theta, std::int64_t n_params, std::int64_t batch, std::int64_t steps,
                             const SummationRule& rule = {});

// E_irr + appx + bias + var at a constant (unit) step size. O(1) in N and K.
Evaluation<double> nqs_loss(const NqsParams& theta, const RunConfig& run, const SummationRule& rule = {});

// Same model under a piecewise-constant step-size schedule.
Evaluation<double> nqs_loss_scheduled(const NqsParams& theta, const LrSchedule& schedule, const RunConfig& run,
                                      const SummationRule& rule = {});

// E||w^(K)||^2 at constant unit step size, with E||w^(0)||^2 = s.
Evaluation<double> expected_weight_norm_sq(const NqsParams& theta, const LayerNormConfig& ln, const RunConfig& run,
                                           const SummationRule& rule = {});
Evaluation<double> expected_weight_norm_sq(const NqsParams& theta, double s, const LrSchedule& schedule,
                                           const RunConfig& run, const SummationRule& rule = {});

// Segment end points (exclusive prefix sums) of the log-spaced refresh
// cadence; the last entry is K. Empty for K = 0.
std::vector<std::int64_t> layernorm_boundaries(std::int64_t steps, std::int64_t n_segments);

// Step-size schedule produced by the weight-norm feedback rule.
Evaluation<LrSchedule> layernorm_schedule(const NqsParams& theta, const LayerNormConfig& ln, const RunConfig& run);

Evaluation<double> nqs_loss_layernorm(const NqsParams& theta, const LayerNormConfig& ln, const RunConfig& run,
                                      const SummationRule& rule = {});

// d nqs_loss / d(p, P, q, Q, r, R, e_irr).
Evaluation<Gradient> nqs_gradient(const NqsParams& theta, const RunConfig& run, const SummationRule& rule = {});

// Loss with derivative slots for every parameter.
Evaluation<ParamDual> nqs_loss_dual(const NqsParams& theta, const RunConfig& run, const SummationRule& rule = {});

// bias_error(N, K) * K^((p-1)/q) for each K; bounded in K when modes contract.
Evaluation<std::vector<double>> bias_bound_ratio(const NqsParams& theta, std::int64_t n_params,
                                                 std::span<const std::int64_t> steps);

// Seeds every parameter as its own derivative slot.
BasicNqsParams<ParamDual> seed_dual(const NqsParams& theta);

// Loss for many runs at one parameter point, sharing per-mode work among runs
// with the same N. Used by the fitter, where the same dataset is evaluated
// thousands of times.
class BatchLossEvaluator {
 public:
  explicit BatchLossEvaluator(std::span<const RunConfig> runs, const SummationRule& rule = {});

  std::size_t size() const { return n_runs_; }
  std::vector<Evaluation<double>> evaluate(const NqsParams& theta) const;
  std::vector<Evaluation<ParamDual>> evaluate_dual(const NqsParams& theta) const;

 private:
  template <typename T>
  std::vector<Evaluation<T>> evaluate_impl(const BasicNqsParams<T>& theta) const;

  struct Member {
    std::size_t index;
    double batch;
    double steps;
  };
  struct Group {
    std::int64_t n_params;
    std::vector<WeightedNode> nodes;
    std::vector<Member> members;
  };
  std::vector<Group> groups_;
  std::size_t n_runs_ = 0;
};

}  // namespace nqs

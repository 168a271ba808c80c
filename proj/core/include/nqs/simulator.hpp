#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "nqs/dataset.hpp"
#include "nqs/loss.hpp"
#include "nqs/model.hpp"

// Monte Carlo simulation of SGD on the noisy quadratic, in the eigenbasis.
//
// Each mode n carries a displacement d_n = w_n - w*_n with curvature
// lambda_n = Q n^-q. The loss is E_irr + 1/2 sum lambda_n d_n^2, the initial
// displacement is Normal(0, 2 P n^-p / lambda_n) and a step is
//   d_n <- (1 - gamma lambda_n) d_n + gamma xi_n,  xi_n ~ Normal(0, 2 R n^-r / B)
// for the trained modes n <= N. Modes in (N, M] keep their initial value and
// modes beyond M enter through appx_error(theta, M).
//
// Trained coordinates start at w = 0; the whole initial norm s sits in a
// component no step touches, so ||w||^2 = s + sum_{n<=N} (d_n - d_n^(0))^2.

namespace nqs {

enum class NormFeedback {
  none,       // step sizes from the schedule (unit rate by default)
  expected,   // gamma = gamma_init s / E||w||^2 from the exact recurrence
  empirical,  // gamma = gamma_init s / ||w||^2 of the trial itself
};

struct SimConfig {
  NqsParams theta;
  RunConfig run;
  std::optional<double> s;              // initial squared norm; required for feedback
  std::optional<LrSchedule> schedule;   // conflicts with feedback
  std::int64_t trials = 1000;
  std::uint64_t seed = 0;
  std::int64_t latent_modes = 0;        // M; 0 selects 4 N
  NormFeedback feedback = NormFeedback::none;
  double gamma_init = 1.0;
  std::int64_t feedback_segments = 0;   // refreshes of gamma; 0 means every step
  unsigned threads = 0;

  std::int64_t resolved_latent_modes() const;
  void validate() const;
};

struct SimResult {
  double mean_loss = 0.0;
  double stderr_loss = 0.0;
  double mean_weight_norm_sq = 0.0;  // 0 when s is unset
  double stderr_weight_norm_sq = 0.0;
  std::int64_t trials = 0;           // trials that finished with finite values
  std::int64_t failed_trials = 0;
};

SimResult simulate_run(const SimConfig& cfg);

// simulate_run with weight-norm feedback; expected feedback is used when the
// config leaves it at none.
SimResult simulate_layernorm_run(SimConfig cfg);

// Exact second moments of the same dynamics (no sampling).
struct MomentResult {
  std::vector<double> mode_loss;  // bias + var of trained mode n = 1..N
  double loss = 0.0;              // E_irr + appx(N) + sum mode_loss
  double weight_norm_sq = 0.0;    // E||w^(K)||^2, using s (0 when unset)
  LrSchedule schedule;            // step sizes actually used, one segment per step
};

MomentResult deterministic_moments(const SimConfig& cfg);

// Standard normal determined by (seed, a, b, c) alone.
double counter_normal(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c);

// ---- synthetic datasets ----------------------------------------------------

enum class BatchRule {
  fixed,      // B = batch everywhere
  power_law,  // B = batch * (C / base_compute)^batch_exponent, rounded to a power of two
};

// Level j has compute base_compute * 4^j. Model i of level j has
// N = n_base * 2^(j + i), so level centres move by sqrt(4) per level, and
// D = C / (6 N) is split into B by the batch rule and K = D / (B seq_len).
struct IsoFlopsDesign {
  double base_compute = 0.0;  // 0 picks 6 * n_base * batch * seq_len * 2^models_per_level
  std::int64_t levels = 9;
  std::int64_t models_per_level = 5;
  std::int64_t n_base = 16;
  BatchRule batch_rule = BatchRule::fixed;
  std::int64_t batch = 8;
  double batch_exponent = 0.25;
  std::int64_t seq_len = 1;

  double resolved_base_compute() const;
};

// Fixed model sizes; level j has D = base_tokens * 4^j and B sweeps powers of
// two from batch_min to batch_max with K = D / (B seq_len).
struct IsoTokensDesign {
  std::vector<std::int64_t> n_params{1024};
  double base_tokens = 4096.0;
  std::int64_t levels = 3;
  std::int64_t batch_min = 1;
  std::int64_t batch_max = 64;
  std::int64_t seq_len = 1;
};

using DatasetDesign = std::variant<IsoFlopsDesign, IsoTokensDesign>;

struct SyntheticDataset {
  ScalingDataset data;
  std::vector<std::string> skipped;  // one note per infeasible configuration
};

// Losses are the closed-form prediction (weight-norm adjusted when `ln` is
// given) times exp(eps), eps ~ Normal(0, noise_sd).
SyntheticDataset generate_synthetic_dataset(const NqsParams& theta, const DatasetDesign& design, double noise_sd,
                                            std::uint64_t seed, const std::optional<LayerNormConfig>& ln = {});

}  // namespace nqs

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nqs/dataset.hpp"
#include "nqs/loss.hpp"
#include "nqs/model.hpp"
#include "nqs/optim.hpp"

namespace nqs {

struct ObjectiveValue {
  double value = 0.0;
  std::size_t penalized = 0;  // records that hit the divergence / nonpositive penalty
};

// Mean Huber (or squared) distance between log predictions and log losses.
ObjectiveValue nqs_objective(const NqsParams& theta, const ScalingDataset& data, double delta,
                             Residual residual = Residual::huber, double penalty = 1e6);

// Same objective with the weight-norm-adjusted loss in place of nqs_loss.
ObjectiveValue nqs_objective_layernorm(const NqsParams& theta, const LayerNormConfig& ln, const ScalingDataset& data,
                                       double delta, Residual residual = Residual::huber, double penalty = 1e6);

struct FilterResult {
  ScalingDataset kept;
  std::vector<std::size_t> removed_rows;
};

// Drops (N, B, K, l) when a run (N, B/2, 2K) with the same seq_len reached a
// loss above l - margin, i.e. halving the batch bought almost nothing.
FilterResult filter_small_batch(const ScalingDataset& data, double margin = 0.05);

struct InitOutcome {
  std::size_t index = 0;
  double objective = 0.0;       // best over the trajectory
  std::int64_t best_iteration = 0;
  NqsParams theta;              // iterate achieving `objective`
};

struct FitReport {
  NqsParams best_theta;
  double best_objective = 0.0;
  std::vector<InitOutcome> per_init;
  std::optional<double> selected_s;
  std::vector<std::size_t> filter_removed;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;
};

class FitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Multi-start Adam over log-transformed parameters (log(p-1), log P, log q,
// log Q, log r, log R, e_irr). The data is used as given; call
// filter_small_batch first to reproduce the usual pipeline.
FitReport fit_nqs(const ScalingDataset& data, const FitConfig& config);

// Unconstrained coordinates used by fit_nqs.
std::array<double, kNumParams> to_unconstrained(const NqsParams& theta);
NqsParams from_unconstrained(const std::array<double, kNumParams>& u);

// Objective and gradient with respect to the unconstrained coordinates.
struct ObjectiveGradient {
  double value = 0.0;
  std::array<double, kNumParams> grad{};
  std::size_t penalized = 0;
};

class NqsObjective {
 public:
  NqsObjective(const ScalingDataset& data, double delta, Residual residual, double penalty);
  ObjectiveGradient operator()(const std::array<double, kNumParams>& u) const;
  ObjectiveValue value(const NqsParams& theta) const;

 private:
  BatchLossEvaluator evaluator_;
  std::vector<double> log_loss_;
  std::vector<bool> trains_;  // K > 0
  double delta_;
  Residual residual_;
  double penalty_;
};

enum class SScaling {
  absolute,       // grid values are s
  per_parameter,  // grid values are multiplied by each record's N
};

struct SSelection {
  double s = 0.0;
  std::vector<std::pair<double, double>> curve;  // (grid value, objective)
};

// Grid search over s with theta held fixed; ties go to the smaller s.
SSelection select_s(const NqsParams& theta, const ScalingDataset& small_batch_data, const std::vector<double>& s_grid,
                    const LayerNormConfig& ln_template = {}, SScaling scaling = SScaling::absolute,
                    double delta = 1e-3, Residual residual = Residual::huber);

// Default grid: anchor * 2^j, j = -4..4, with anchor = 0.02^2 per parameter.
std::vector<double> default_s_grid(double anchor = 0.02 * 0.02);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

struct BootstrapResult {
  std::vector<Interval> intervals;                 // per query
  std::vector<std::vector<double>> predictions;    // [trial][query]
  std::vector<std::string> warnings;
};

// Refits on `trials` random subsamples of ceil(frac * m) records (without
// replacement) and returns the central `level` quantile band per query.
// Every trial also starts from the full-data fit.
BootstrapResult bootstrap_ci(const ScalingDataset& data, const FitConfig& config, const std::vector<RunConfig>& queries,
                             std::int64_t trials = 100, double frac = 0.5, double level = 0.9);

// Linear-interpolated empirical quantile of an unsorted sample.
double empirical_quantile(std::vector<double> values, double q);

}  // namespace nqs

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "nqs/chinchilla.hpp"
#include "nqs/loss.hpp"
#include "nqs/model.hpp"

namespace nqs {

// Loss predictor used by the search: NQS (optionally weight-norm adjusted) or
// Chinchilla evaluated at D = B * K * seq_len.
class LossModel {
 public:
  static LossModel nqs(const NqsParams& theta, std::optional<LayerNormConfig> ln = {});
  static LossModel chinchilla(const ChinParams& phi);

  Evaluation<double> operator()(const RunConfig& run) const;

 private:
  struct Nqs {
    NqsParams theta;
    std::optional<LayerNormConfig> ln;
  };
  std::variant<Nqs, ChinParams> model_;
  explicit LossModel(std::variant<Nqs, ChinParams> m) : model_(std::move(m)) {}
};

enum class TimeRule {
  params_times_steps,  // T = N K
  steps_only,          // T = K
};

enum class Constraint { compute, time, memory, data };

const char* to_string(Constraint c);

struct ConstraintSet {
  double compute_max = 0.0;            // 6 N B K seq_len <= compute_max
  std::optional<double> time_max;
  TimeRule time_rule = TimeRule::params_times_steps;
  std::optional<double> memory_max;    // B N
  std::optional<double> data_max;      // B K seq_len
  std::int64_t seq_len = 1;

  void validate() const;
  bool satisfied(const RunConfig& run, Constraint c) const;  // true when the bound is absent
  bool feasible(const RunConfig& run) const;
  std::vector<Constraint> active() const;
};

struct Axis {
  std::vector<std::int64_t> values;  // sorted, unique, >= 1

  // Rounded log-spaced points between lo and hi inclusive.
  static Axis log_spaced(double lo, double hi, double points_per_decade = 16.0);
  static Axis from_values(std::vector<std::int64_t> values);
};

struct GridSpec {
  Axis n_params;
  Axis batch;
  Axis steps;

  std::size_t size() const { return n_params.values.size() * batch.values.size() * steps.values.size(); }
};

struct SearchResult {
  std::optional<RunConfig> best;
  double best_loss = 0.0;
  std::size_t feasible_count = 0;
  std::size_t unstable_count = 0;           // feasible points where the model diverges
  std::vector<Constraint> binding;          // set when nothing is feasible

  bool found() const { return best.has_value(); }
};

// Exact grid argmin over feasible points; ties go to smaller N, then B, then K.
SearchResult constrained_search(const LossModel& model, const ConstraintSet& cons, const GridSpec& grid,
                                unsigned threads = 0);

enum class SliceBatch {
  fixed,  // B = batch for every N
  best,   // per-N argmin over the batch axis
};

struct SliceSpec {
  SliceBatch rule = SliceBatch::fixed;
  std::int64_t batch = 1;
  Axis batch_axis;  // used by SliceBatch::best
};

struct SliceRow {
  RunConfig run;
  double loss = 0.0;
};

struct SliceResult {
  std::vector<SliceRow> rows;      // sorted by N
  std::vector<std::string> notes;  // omitted N values and why
};

// For each N, K = C / (6 N B seq_len) rounded; C itself replaces compute_max.
SliceResult isoflop_slice(const LossModel& model, double compute, const ConstraintSet& cons, const Axis& n_axis,
                          const SliceSpec& spec);

}  // namespace nqs

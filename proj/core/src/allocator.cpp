#include "nqs/allocator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "nqs/optim.hpp"

namespace nqs {

namespace {

// Bounds given as round numbers (e.g. from a PF suffix) should admit the
// configuration that hits them exactly.
constexpr double kBoundSlack = 1e-12;

bool within(double value, double bound) { return value <= bound * (1.0 + kBoundSlack); }

}  // namespace

LossModel LossModel::nqs(const NqsParams& theta, std::optional<LayerNormConfig> ln) {
  validate(theta);
  if (ln) validate(*ln);
  return LossModel(Nqs{theta, ln});
}

LossModel LossModel::chinchilla(const ChinParams& phi) {
  validate(phi);
  return LossModel(phi);
}

Evaluation<double> LossModel::operator()(const RunConfig& run) const {
  if (const auto* m = std::get_if<Nqs>(&model_))
    return m->ln ? nqs_loss_layernorm(m->theta, *m->ln, run) : nqs_loss(m->theta, run);
  return Evaluation<double>::ok(chin_loss(std::get<ChinParams>(model_), double(run.n_params), run.tokens()));
}

const char* to_string(Constraint c) {
  switch (c) {
    case Constraint::compute: return "compute";
    case Constraint::time: return "time";
    case Constraint::memory: return "memory";
    case Constraint::data: return "data";
  }
  return "unknown";
}

void ConstraintSet::validate() const {
  if (!(compute_max > 0.0)) throw std::invalid_argument("constraints: compute_max must be positive");
  if (time_max && !(*time_max > 0.0)) throw std::invalid_argument("constraints: time_max must be positive");
  if (memory_max && !(*memory_max > 0.0)) throw std::invalid_argument("constraints: memory_max must be positive");
  if (data_max && !(*data_max > 0.0)) throw std::invalid_argument("constraints: data_max must be positive");
  if (seq_len < 1) throw std::invalid_argument("constraints: seq_len must be >= 1");
}

bool ConstraintSet::satisfied(const RunConfig& run, Constraint c) const {
  const double n = double(run.n_params), b = double(run.batch), k = double(run.steps), seq = double(seq_len);
  switch (c) {
    case Constraint::compute: return within(6.0 * n * b * k * seq, compute_max);
    case Constraint::time:
      return !time_max || within(time_rule == TimeRule::params_times_steps ? n * k : k, *time_max);
    case Constraint::memory: return !memory_max || within(b * n, *memory_max);
    case Constraint::data: return !data_max || within(b * k * seq, *data_max);
  }
  return false;
}

bool ConstraintSet::feasible(const RunConfig& run) const {
  for (auto c : {Constraint::compute, Constraint::time, Constraint::memory, Constraint::data})
    if (!satisfied(run, c)) return false;
  return true;
}

std::vector<Constraint> ConstraintSet::active() const {
  std::vector<Constraint> out{Constraint::compute};
  if (time_max) out.push_back(Constraint::time);
  if (memory_max) out.push_back(Constraint::memory);
  if (data_max) out.push_back(Constraint::data);
  return out;
}

Axis Axis::log_spaced(double lo, double hi, double points_per_decade) {
  if (!(lo >= 1.0) || !(hi >= lo)) throw std::invalid_argument("axis: need 1 <= lo <= hi");
  if (!(points_per_decade > 0.0)) throw std::invalid_argument("axis: points_per_decade must be positive");
  const double decades = std::log10(hi / lo);
  const auto count = std::max<std::int64_t>(1, std::int64_t(std::ceil(decades * points_per_decade - 1e-9)));
  std::vector<std::int64_t> v;
  for (std::int64_t i = 0; i <= count; ++i)
    v.push_back(std::llround(lo * std::pow(hi / lo, double(i) / double(count))));
  return from_values(std::move(v));
}

Axis Axis::from_values(std::vector<std::int64_t> values) {
  if (values.empty()) throw std::invalid_argument("axis: no values");
  for (auto x : values)
    if (x < 1) throw std::invalid_argument("axis: values must be >= 1");
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  return Axis{std::move(values)};
}

SearchResult constrained_search(const LossModel& model, const ConstraintSet& cons, const GridSpec& grid,
                                unsigned threads) {
  cons.validate();
  if (grid.size() == 0) throw std::invalid_argument("constrained_search: empty grid");
  const auto& ns = grid.n_params.values;
  const auto& bs = grid.batch.values;
  const auto& ks = grid.steps.values;
  const std::size_t per_n = bs.size() * ks.size();
  constexpr double kSkip = std::numeric_limits<double>::infinity();
  constexpr double kDiverged = -1.0;

  // Losses in (N, B, K) order; +inf marks infeasible, -1 marks divergence.
  std::vector<double> losses(grid.size(), kSkip);
  parallel_for(ns.size(), threads, [&](std::size_t i) {
    for (std::size_t j = 0; j < bs.size(); ++j)
      for (std::size_t l = 0; l < ks.size(); ++l) {
        const RunConfig run{ns[i], bs[j], ks[l], cons.seq_len};
        if (!cons.feasible(run)) continue;
        const auto e = model(run);
        losses[i * per_n + j * ks.size() + l] = e ? e.value : kDiverged;
      }
  });

  SearchResult out;
  std::size_t arg = losses.size();
  for (std::size_t idx = 0; idx < losses.size(); ++idx) {
    const double v = losses[idx];
    if (v == kSkip) continue;
    ++out.feasible_count;
    if (v == kDiverged) {
      ++out.unstable_count;
      continue;
    }
    if (arg == losses.size() || v < losses[arg]) arg = idx;
  }
  if (arg != losses.size()) {
    out.best = RunConfig{ns[arg / per_n], bs[(arg % per_n) / ks.size()], ks[arg % ks.size()], cons.seq_len};
    out.best_loss = losses[arg];
    return out;
  }
  if (out.feasible_count > 0) return out;  // feasible, but the model diverges everywhere

  // Nothing feasible: name the constraints whose removal alone would help,
  // else those that no grid point satisfies.
  const auto active = cons.active();
  std::vector<std::size_t> without(active.size(), 0), alone(active.size(), 0);
  for (auto n : ns)
    for (auto b : bs)
      for (auto k : ks) {
        const RunConfig run{n, b, k, cons.seq_len};
        std::size_t violated = 0, which = 0;
        for (std::size_t c = 0; c < active.size(); ++c) {
          if (cons.satisfied(run, active[c])) {
            ++alone[c];
          } else {
            ++violated;
            which = c;
          }
        }
        if (violated == 1) ++without[which];
      }
  for (std::size_t c = 0; c < active.size(); ++c)
    if (without[c] > 0) out.binding.push_back(active[c]);
  if (out.binding.empty())
    for (std::size_t c = 0; c < active.size(); ++c)
      if (alone[c] == 0) out.binding.push_back(active[c]);
  if (out.binding.empty()) out.binding = active;
  return out;
}

SliceResult isoflop_slice(const LossModel& model, double compute, const ConstraintSet& cons, const Axis& n_axis,
                          const SliceSpec& spec) {
  if (!(compute > 0.0)) throw std::invalid_argument("isoflop_slice: compute must be positive");
  ConstraintSet at_c = cons;
  at_c.compute_max = compute;
  at_c.validate();
  std::vector<std::int64_t> batches;
  if (spec.rule == SliceBatch::fixed) {
    if (spec.batch < 1) throw std::invalid_argument("isoflop_slice: batch must be >= 1");
    batches = {spec.batch};
  } else {
    if (spec.batch_axis.values.empty()) throw std::invalid_argument("isoflop_slice: empty batch axis");
    batches = spec.batch_axis.values;
  }

  SliceResult out;
  for (std::int64_t n : n_axis.values) {
    std::optional<SliceRow> best;
    bool diverged = false;
    for (std::int64_t b : batches) {
      const auto k = std::llround(compute / (6.0 * double(n) * double(b) * double(at_c.seq_len)));
      if (k < 1) continue;
      const RunConfig run{n, b, k, at_c.seq_len};
      if (!at_c.feasible(run)) continue;
      const auto e = model(run);
      if (!e) {
        diverged = true;
        continue;
      }
      if (!best || e.value < best->loss) best = SliceRow{run, e.value};
    }
    if (best)
      out.rows.push_back(*best);
    else
      out.notes.push_back("N=" + std::to_string(n) + ": " +
                          (diverged ? "model diverges at every feasible batch" : "no feasible (B, K)"));
  }
  return out;
}

}  // namespace nqs

#include "nqs/fitting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <tuple>

namespace nqs {

namespace {

constexpr std::size_t kHessianScale = static_cast<std::size_t>(Param::hessian_scale);

double residual_loss(Residual kind, double pred_log, double obs_log, double delta) {
  if (kind == Residual::huber) return huber(pred_log, obs_log, delta);
  const double d = pred_log - obs_log;
  return d * d;
}

double residual_slope(Residual kind, double pred_log, double obs_log, double delta) {
  if (kind == Residual::huber) return huber_derivative(pred_log, obs_log, delta);
  return 2.0 * (pred_log - obs_log);
}

// Penalty for a divergent evaluation grows with log Q so the optimizer has a
// direction to retreat along.
double divergence_penalty(double penalty, double hessian_scale) {
  return penalty * (1.0 + std::log(std::max(hessian_scale, 2.0) / 2.0));
}

template <typename Predict>
ObjectiveValue objective_with(const ScalingDataset& data, double delta, Residual residual, double penalty,
                              Predict&& predict) {
  if (data.empty()) throw std::invalid_argument("objective: dataset is empty");
  ObjectiveValue out;
  for (const auto& r : data.records) {
    const Evaluation<double> pred = predict(r);
    if (!pred.stable() || !(pred.value > 0.0) || !std::isfinite(pred.value)) {
      out.value += penalty;
      ++out.penalized;
      continue;
    }
    out.value += residual_loss(residual, std::log(pred.value), std::log(r.loss), delta);
  }
  out.value /= static_cast<double>(data.size());
  return out;
}

}  // namespace

std::array<double, kNumParams> to_unconstrained(const NqsParams& th) {
  return {std::log(th.approx_exponent - 1.0), std::log(th.approx_scale),  std::log(th.hessian_exponent),
          std::log(th.hessian_scale),         std::log(th.noise_exponent), std::log(th.noise_scale),
          th.irreducible};
}

NqsParams from_unconstrained(const std::array<double, kNumParams>& u) {
  return {1.0 + std::exp(u[0]), std::exp(u[1]), std::exp(u[2]), std::exp(u[3]),
          std::exp(u[4]),       std::exp(u[5]), u[6]};
}

ObjectiveValue nqs_objective(const NqsParams& theta, const ScalingDataset& data, double delta, Residual residual,
                             double penalty) {
  validate(data);
  return objective_with(data, delta, residual, penalty, [&](const Record& r) {
    try {
      return nqs_loss(theta, r.run);
    } catch (const NonFiniteError&) {
      return Evaluation<double>::ok(std::numeric_limits<double>::quiet_NaN());
    }
  });
}

ObjectiveValue nqs_objective_layernorm(const NqsParams& theta, const LayerNormConfig& ln, const ScalingDataset& data,
                                       double delta, Residual residual, double penalty) {
  validate(data);
  return objective_with(data, delta, residual, penalty, [&](const Record& r) {
    try {
      return nqs_loss_layernorm(theta, ln, r.run);
    } catch (const NonFiniteError&) {
      return Evaluation<double>::ok(std::numeric_limits<double>::quiet_NaN());
    }
  });
}

FilterResult filter_small_batch(const ScalingDataset& data, double margin) {
  using Key = std::tuple<std::int64_t, std::int64_t, std::int64_t, std::int64_t>;
  std::multimap<Key, double> losses;
  for (const auto& r : data.records) losses.emplace(Key{r.run.n_params, r.run.batch, r.run.steps, r.run.seq_len}, r.loss);

  FilterResult out{{{}, data.extra_columns}, {}};
  for (const auto& r : data.records) {
    bool drop = false;
    if (r.run.batch % 2 == 0) {
      const Key half{r.run.n_params, r.run.batch / 2, r.run.steps * 2, r.run.seq_len};
      auto [lo, hi] = losses.equal_range(half);
      for (auto it = lo; it != hi && !drop; ++it) drop = it->second > r.loss - margin;
    }
    if (drop)
      out.removed_rows.push_back(r.row);
    else
      out.kept.records.push_back(r);
  }
  return out;
}

NqsObjective::NqsObjective(const ScalingDataset& data, double delta, Residual residual, double penalty)
    : evaluator_((validate(data), data.runs())), delta_(delta), residual_(residual), penalty_(penalty) {
  if (data.empty()) throw std::invalid_argument("NqsObjective: dataset is empty");
  for (const auto& r : data.records) {
    log_loss_.push_back(std::log(r.loss));
    trains_.push_back(r.run.steps > 0);
  }
}

ObjectiveGradient NqsObjective::operator()(const std::array<double, kNumParams>& u) const {
  const NqsParams theta = from_unconstrained(u);
  const double m = static_cast<double>(log_loss_.size());
  ObjectiveGradient out;
  std::array<double, kNumParams> grad_theta{};

  const bool diverges = theta.hessian_scale >= 2.0;
  const bool any_static = std::find(trains_.begin(), trains_.end(), false) != trains_.end();
  std::vector<Evaluation<ParamDual>> preds;
  if (!diverges || any_static) {
    try {
      preds = evaluator_.evaluate_dual(theta);
    } catch (const NonFiniteError&) {
      out.value = penalty_;
      out.penalized = log_loss_.size();
      return out;
    }
  }

  for (std::size_t i = 0; i < log_loss_.size(); ++i) {
    if (diverges && trains_[i]) {
      out.value += divergence_penalty(penalty_, theta.hessian_scale);
      grad_theta[kHessianScale] += penalty_ / theta.hessian_scale;
      ++out.penalized;
      continue;
    }
    const auto& pred = preds[i];
    if (!(pred.value.value > 0.0)) {
      out.value += penalty_ * (1.0 - pred.value.value);
      for (std::size_t k = 0; k < kNumParams; ++k) grad_theta[k] -= penalty_ * pred.value.partials[k];
      ++out.penalized;
      continue;
    }
    const double lp = std::log(pred.value.value);
    out.value += residual_loss(residual_, lp, log_loss_[i], delta_);
    const double slope = residual_slope(residual_, lp, log_loss_[i], delta_) / pred.value.value;
    for (std::size_t k = 0; k < kNumParams; ++k) grad_theta[k] += slope * pred.value.partials[k];
  }

  out.value /= m;
  // d theta / d u for the log / log(p - 1) reparameterisation.
  const auto a = theta.to_array();
  for (std::size_t k = 0; k < kNumParams; ++k) {
    double jac = a[k];
    if (k == static_cast<std::size_t>(Param::approx_exponent)) jac = a[k] - 1.0;
    if (k == static_cast<std::size_t>(Param::irreducible)) jac = 1.0;
    out.grad[k] = grad_theta[k] * jac / m;
  }
  return out;
}

ObjectiveValue NqsObjective::value(const NqsParams& theta) const {
  const auto og = (*this)(to_unconstrained(theta));
  return {og.value, og.penalized};
}

FitReport fit_nqs(const ScalingDataset& data, const FitConfig& config) {
  config.validate();
  if (data.empty()) throw std::invalid_argument("fit_nqs: dataset is empty");
  FitReport report;
  report.seed = config.seed;
  if (data.size() < kNumParams)
    report.warnings.push_back("only " + std::to_string(data.size()) +
                              " records for 7 parameters; the fit is underdetermined");

  const NqsObjective objective(data, config.huber_delta, config.residual, config.penalty);
  const auto ranges = config.init_ranges.empty() ? default_nqs_init_ranges() : config.init_ranges;
  auto starts = nqs_initializations(ranges, std::size_t(config.n_inits), config.seed);
  for (const auto& extra : config.extra_inits) {
    validate(extra);
    starts.push_back(extra);
  }

  struct Trial {
    InitOutcome outcome;
    std::size_t penalized = 0;
  };
  std::vector<Trial> trials(starts.size());
  parallel_for(starts.size(), config.threads, [&](std::size_t i) {
    auto u = to_unconstrained(starts[i]);
    Adam adam(kNumParams, config.lr, config.clip);
    Trial t;
    t.outcome.index = i;
    t.outcome.objective = std::numeric_limits<double>::infinity();
    auto best_u = u;
    for (std::int64_t it = 0; it < config.n_iters; ++it) {
      const auto og = objective(u);
      if (std::isfinite(og.value) && og.value < t.outcome.objective) {
        t.outcome.objective = og.value;
        t.outcome.best_iteration = it;
        t.penalized = og.penalized;
        best_u = u;
      }
      adam.step(u, og.grad);
    }
    t.outcome.theta = from_unconstrained(best_u);
    trials[i] = t;
  });

  std::optional<std::size_t> arg;
  for (const auto& t : trials) {
    report.per_init.push_back(t.outcome);
    if (t.penalized > 0 || !std::isfinite(t.outcome.objective)) continue;
    if (!arg || t.outcome.objective < trials[*arg].outcome.objective) arg = t.outcome.index;
  }
  if (!arg) throw FitError("fit_nqs: every initialization ended in the divergence penalty region");
  report.best_theta = trials[*arg].outcome.theta;
  report.best_objective = trials[*arg].outcome.objective;
  if (report.best_theta.irreducible < 0.0)
    report.warnings.push_back("fitted e_irr = " + std::to_string(report.best_theta.irreducible) +
                              " is negative; predictions far outside the data can drop to or below zero");
  return report;
}

std::vector<double> default_s_grid(double anchor) {
  std::vector<double> grid;
  for (int j = -4; j <= 4; ++j) grid.push_back(anchor * std::ldexp(1.0, j));
  return grid;
}

SSelection select_s(const NqsParams& theta, const ScalingDataset& small_batch_data, const std::vector<double>& s_grid,
                    const LayerNormConfig& ln_template, SScaling scaling, double delta, Residual residual) {
  if (small_batch_data.empty()) throw std::invalid_argument("select_s: small-batch dataset is empty");
  if (s_grid.empty()) throw std::invalid_argument("select_s: s grid is empty");
  for (double s : s_grid)
    if (!(s > 0.0)) throw std::invalid_argument("select_s: grid values must be positive");
  validate(small_batch_data);

  SSelection out;
  double best = std::numeric_limits<double>::infinity();
  for (double s : s_grid) {
    const auto obj = objective_with(small_batch_data, delta, residual, 1e6, [&](const Record& r) {
      LayerNormConfig ln = ln_template;
      ln.s = scaling == SScaling::absolute ? s : s * static_cast<double>(r.run.n_params);
      try {
        return nqs_loss_layernorm(theta, ln, r.run);
      } catch (const NonFiniteError&) {
        return Evaluation<double>::ok(std::numeric_limits<double>::quiet_NaN());
      }
    });
    out.curve.emplace_back(s, obj.value);
    if (obj.value < best || (obj.value == best && s < out.s)) {
      best = obj.value;
      out.s = s;
    }
  }
  return out;
}

double empirical_quantile(std::vector<double> values, double q) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

BootstrapResult bootstrap_ci(const ScalingDataset& data, const FitConfig& config, const std::vector<RunConfig>& queries,
                             std::int64_t trials, double frac, double level) {
  if (trials < 2) throw std::invalid_argument("bootstrap_ci: need at least 2 trials");
  if (!(frac > 0.0 && frac < 1.0)) throw std::invalid_argument("bootstrap_ci: frac must be in (0, 1)");
  if (!(level >= 0.0 && level < 1.0)) throw std::invalid_argument("bootstrap_ci: level must be in [0, 1)");
  for (const auto& q : queries) validate(q);

  BootstrapResult out;
  const FitReport full = fit_nqs(data, config);
  const auto m = data.size();
  const auto take = static_cast<std::size_t>(std::ceil(frac * static_cast<double>(m)));

  out.predictions.assign(std::size_t(trials), std::vector<double>(queries.size()));
  std::vector<std::string> trial_warning(static_cast<std::size_t>(trials));
  parallel_for(std::size_t(trials), config.threads, [&](std::size_t t) {
    std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                      static_cast<std::uint32_t>(t), 0x5eedu};
    std::mt19937_64 rng(seq);
    std::vector<std::size_t> idx(m);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(take);
    std::sort(idx.begin(), idx.end());
    if (take < kNumParams)
      trial_warning[t] = "trial " + std::to_string(t) + ": subsample of " + std::to_string(take) + " records";

    FitConfig cfg = config;
    cfg.threads = 1;
    cfg.extra_inits.push_back(full.best_theta);
    const FitReport fit = fit_nqs(data.subset(idx), cfg);
    for (std::size_t q = 0; q < queries.size(); ++q) {
      const auto pred = nqs_loss(fit.best_theta, queries[q]);
      out.predictions[t][q] = pred.stable() ? pred.value : std::numeric_limits<double>::quiet_NaN();
    }
  });
  for (auto& w : trial_warning)
    if (!w.empty()) out.warnings.push_back(std::move(w));

  const double tail = 0.5 * (1.0 - level);
  for (std::size_t q = 0; q < queries.size(); ++q) {
    std::vector<double> column;
    for (const auto& row : out.predictions)
      if (std::isfinite(row[q])) column.push_back(row[q]);
    out.intervals.push_back({empirical_quantile(column, tail), empirical_quantile(column, 1.0 - tail)});
  }
  return out;
}

}  // namespace nqs

#include "nqs/loss.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "nqs/detail/mode_terms.hpp"
#include "nqs/numerics/geometric.hpp"
#include "nqs/numerics/zeta.hpp"

namespace nqs {

namespace {

using detail::mode_quantities;

template <typename F>
auto sum_over_nodes(const std::vector<WeightedNode>& nodes, F&& f) {
  using T = decltype(f(nodes.front()));
  T acc(0.0);
  for (const auto& node : nodes) {
    const T v = f(node);
    if (!std::isfinite(value_of(v))) throw NonFiniteError(node.n, "NQS summation");
    acc += node.weight * v;
  }
  return acc;
}

template <typename T>
T appx_error_t(const BasicNqsParams<T>& th, std::int64_t n_params) {
  return th.approx_scale * zeta_tail(th.approx_exponent, n_params);
}

// Before any step every mode keeps its initial loss, so the trained and
// untrained parts add up to the full zeta sum exactly.
template <typename T>
T untrained_loss_t(const BasicNqsParams<T>& th) {
  return th.irreducible + th.approx_scale * zeta_tail(th.approx_exponent, 0);
}

template <typename T>
Evaluation<T> loss_t(const BasicNqsParams<T>& th, const RunConfig& run, const SummationRule& rule) {
  validate(run);
  if (auto bad = detail::unstable_mode(th, 1.0, run.steps)) return Evaluation<T>::unstable(*bad);
  if (run.steps == 0) return Evaluation<T>::ok(untrained_loss_t(th));
  const double batch = static_cast<double>(run.batch);
  const double steps = static_cast<double>(run.steps);
  const auto nodes = summation_nodes(run.n_params, rule);
  const T trained = sum_over_nodes(nodes, [&](const WeightedNode& node) {
    return detail::constant_rate_loss_term(mode_quantities(th, node.log_n), batch, steps);
  });
  return Evaluation<T>::ok(th.irreducible + appx_error_t(th, run.n_params) + trained);
}

std::vector<WeightedNode> layernorm_grid(std::int64_t n_params, const LayerNormConfig& ln) {
  std::vector<WeightedNode> nodes;
  const std::int64_t head = std::min(n_params, ln.exact_head);
  for (std::int64_t n = 1; n <= head; ++n) nodes.push_back({double(n), std::log(double(n)), 1.0});
  if (head == n_params) return nodes;

  // sum_{n=H+1}^N f ~= int_H^N f dn + (f(N) - f(H)) / 2, with the integral by
  // the trapezoid rule in u = log n on mode_grid_size nodes.
  const double a = std::log(double(head));
  const double b = std::log(double(n_params));
  const std::int64_t g = ln.mode_grid_size;
  const double h = (b - a) / double(g - 1);
  nodes.back().weight += -0.5 + 0.5 * h * double(head);
  for (std::int64_t i = 1; i < g; ++i) {
    const double u = (i == g - 1) ? b : a + h * double(i);
    const double n = std::exp(u);
    const double trap = (i == g - 1) ? 0.5 * h : h;
    nodes.push_back({n, u, trap * n + (i == g - 1 ? 0.5 : 0.0)});
  }
  return nodes;
}

}  // namespace

double appx_error(const NqsParams& theta, std::int64_t n_params) {
  if (!(theta.approx_exponent > 1.0)) throw std::domain_error("appx_error: p must exceed 1");
  return appx_error_t(theta, n_params);
}

Evaluation<double> bias_error(const NqsParams& theta, std::int64_t n_params, std::int64_t steps,
                              const SummationRule& rule) {
  validate(RunConfig{n_params, 1, steps, 1});
  if (auto bad = detail::unstable_mode(theta, 1.0, steps)) return Evaluation<double>::unstable(*bad);
  if (steps == 0)
    return Evaluation<double>::ok(theta.approx_scale * (zeta_tail(theta.approx_exponent, 0) -
                                                        zeta_tail(theta.approx_exponent, n_params)));
  const double k = static_cast<double>(steps);
  return Evaluation<double>::ok(sum_over_nodes(summation_nodes(n_params, rule), [&](const WeightedNode& node) {
    const auto m = mode_quantities(theta, node.log_n);
    return m.approx * std::exp(2.0 * k * m.log_abs_rho);
  }));
}

Evaluation<double> var_error(const NqsParams& theta, std::int64_t n_params, std::int64_t batch, std::int64_t steps,
                             const SummationRule& rule) {
  validate(RunConfig{n_params, batch, steps, 1});
  if (auto bad = detail::unstable_mode(theta, 1.0, steps)) return Evaluation<double>::unstable(*bad);
  if (steps == 0) return Evaluation<double>::ok(0.0);
  const double k = static_cast<double>(steps);
  const double sum = sum_over_nodes(summation_nodes(n_params, rule), [&](const WeightedNode& node) {
    const auto m = mode_quantities(theta, node.log_n);
    return m.noise * geometric_sum_sq_from(2.0 * m.log_abs_rho, m.one_minus_rho_sq, k);
  });
  return Evaluation<double>::ok(sum / static_cast<double>(batch));
}

Evaluation<double> nqs_loss(const NqsParams& theta, const RunConfig& run, const SummationRule& rule) {
  return loss_t(theta, run, rule);
}

Evaluation<ParamDual> nqs_loss_dual(const NqsParams& theta, const RunConfig& run, const SummationRule& rule) {
  return loss_t(seed_dual(theta), run, rule);
}

BasicNqsParams<ParamDual> seed_dual(const NqsParams& theta) {
  const auto a = theta.to_array();
  std::array<ParamDual, kNumParams> d;
  for (std::size_t i = 0; i < kNumParams; ++i) d[i] = ParamDual::variable(a[i], i);
  return BasicNqsParams<ParamDual>::from_array(d);
}

Evaluation<Gradient> nqs_gradient(const NqsParams& theta, const RunConfig& run, const SummationRule& rule) {
  const auto loss = nqs_loss_dual(theta, run, rule);
  if (!loss) return Evaluation<Gradient>::unstable(*loss.unstable_mode);
  return Evaluation<Gradient>::ok(loss.value.partials);
}

Evaluation<double> nqs_loss_scheduled(const NqsParams& theta, const LrSchedule& schedule, const RunConfig& run,
                                      const SummationRule& rule) {
  validate(run);
  validate(schedule, run.steps);
  if (auto bad = detail::unstable_mode(theta, detail::max_gamma(schedule), run.steps))
    return Evaluation<double>::unstable(*bad);
  if (run.steps == 0) return Evaluation<double>::ok(untrained_loss_t(theta));
  const double batch = static_cast<double>(run.batch);
  const auto nodes = summation_nodes(run.n_params, rule);
  const double trained = sum_over_nodes(nodes, [&](const WeightedNode& node) {
    const auto m = mode_quantities(theta, node.log_n);
    const auto sm = detail::run_schedule(m.contraction, schedule);
    return m.approx * std::exp(sm.log_decay) + m.noise * sm.noise_sum / batch;
  });
  return Evaluation<double>::ok(theta.irreducible + appx_error(theta, run.n_params) + trained);
}

Evaluation<double> expected_weight_norm_sq(const NqsParams& theta, const LayerNormConfig& ln, const RunConfig& run,
                                           const SummationRule& rule) {
  validate(run);
  validate(ln);
  if (auto bad = detail::unstable_mode(theta, 1.0, run.steps)) return Evaluation<double>::unstable(*bad);
  if (run.steps == 0) return Evaluation<double>::ok(ln.s);
  const double batch = static_cast<double>(run.batch);
  const double k = static_cast<double>(run.steps);
  const int sign_if_overshoot = (run.steps % 2 == 1) ? -1 : 1;
  const double moved = sum_over_nodes(summation_nodes(run.n_params, rule), [&](const WeightedNode& node) {
    const auto m = mode_quantities(theta, node.log_n);
    const double disp = 2.0 * m.approx / m.contraction;    // E(w*_n - w_n^(0))^2
    const double noise_w = 2.0 * m.noise / m.contraction;  // per-step weight noise at B = 1
    const int sign = m.contraction > 1.0 ? sign_if_overshoot : 1;
    const double gap = detail::one_minus_factor(2.0 * k * m.log_abs_rho, sign);
    return gap * gap * disp + noise_w / batch * geometric_sum_sq_from(2.0 * m.log_abs_rho, m.one_minus_rho_sq, k);
  });
  return Evaluation<double>::ok(ln.s + moved);
}

Evaluation<double> expected_weight_norm_sq(const NqsParams& theta, double s, const LrSchedule& schedule,
                                           const RunConfig& run, const SummationRule& rule) {
  validate(run);
  validate(schedule, run.steps);
  if (!(s > 0.0)) throw std::invalid_argument("expected_weight_norm_sq: s must be positive");
  if (auto bad = detail::unstable_mode(theta, detail::max_gamma(schedule), run.steps))
    return Evaluation<double>::unstable(*bad);
  if (run.steps == 0) return Evaluation<double>::ok(s);
  const double batch = static_cast<double>(run.batch);
  const double moved = sum_over_nodes(summation_nodes(run.n_params, rule), [&](const WeightedNode& node) {
    const auto m = mode_quantities(theta, node.log_n);
    const auto sm = detail::run_schedule(m.contraction, schedule);
    const double gap = detail::one_minus_factor(sm.log_decay, sm.sign);
    return gap * gap * (2.0 * m.approx / m.contraction) + (2.0 * m.noise / m.contraction) * sm.noise_sum / batch;
  });
  return Evaluation<double>::ok(s + moved);
}

std::vector<std::int64_t> layernorm_boundaries(std::int64_t steps, std::int64_t n_segments) {
  std::vector<std::int64_t> ends;
  if (steps <= 0) return ends;
  const std::int64_t segs = std::clamp<std::int64_t>(n_segments, 1, steps);
  const double log_k = std::log(static_cast<double>(steps));
  std::int64_t prev = 0;
  for (std::int64_t j = 1; j <= segs; ++j) {
    auto end = static_cast<std::int64_t>(std::llround(std::exp(log_k * double(j) / double(segs))));
    end = std::clamp(end, prev + 1, steps - (segs - j));
    ends.push_back(end);
    prev = end;
  }
  return ends;
}

Evaluation<LrSchedule> layernorm_schedule(const NqsParams& theta, const LayerNormConfig& ln, const RunConfig& run) {
  validate(run);
  validate(ln);
  LrSchedule schedule;
  if (run.steps == 0) return Evaluation<LrSchedule>::ok(schedule);
  if (auto bad = detail::unstable_mode(theta, ln.gamma_init, run.steps))
    return Evaluation<LrSchedule>::unstable(*bad);

  struct NodeState {
    double weight;
    double contraction;
    double displacement;  // E(w*_n - w_n^(0))^2
    double noise;         // weight-space noise variance per step at unit rate
    double factor = 1.0;  // signed bias factor prod (1 - gamma_k x)
    double gap = 0.0;     // 1 - factor, kept without cancellation
    double noise_sum = 0.0;
  };
  std::vector<NodeState> state;
  const double batch = static_cast<double>(run.batch);
  for (const auto& node : layernorm_grid(run.n_params, ln)) {
    const auto m = mode_quantities(theta, node.log_n);
    state.push_back({node.weight, m.contraction, 2.0 * m.approx / m.contraction,
                     2.0 * m.noise / m.contraction / batch});
  }

  std::int64_t prev = 0;
  for (std::int64_t end : layernorm_boundaries(run.steps, ln.n_segments)) {
    double norm = ln.s;
    for (const auto& st : state) {
      norm += st.weight * (st.gap * st.gap * st.displacement + st.noise_sum * st.noise);
    }
    const double gamma = ln.gamma_init * ln.s / norm;
    if (!std::isfinite(gamma) || !(gamma > 0.0)) throw NonFiniteError(0.0, "layernorm_schedule: weight norm");
    const std::int64_t len = end - prev;
    const double m = static_cast<double>(len);
    for (auto& st : state) {
      const double x = gamma * st.contraction;
      double f, one_minus_f, geo;
      if (len == 1) {
        f = 1.0 - x;
        one_minus_f = x;
        geo = 1.0;
      } else {
        const double log_abs = log_abs_one_minus(x);
        const bool negative = x > 1.0 && len % 2 == 1;
        const double mag = std::exp(m * log_abs);
        f = negative ? -mag : mag;
        one_minus_f = negative ? 1.0 + mag : -std::expm1(m * log_abs);
        geo = geometric_sum_sq_from(2.0 * log_abs, x * (2.0 - x), m);
      }
      st.gap += st.factor * one_minus_f;
      st.factor *= f;
      st.noise_sum = f * f * st.noise_sum + gamma * gamma * geo;
    }
    if (!schedule.segments.empty() && schedule.segments.back().gamma == gamma)
      schedule.segments.back().steps += len;
    else
      schedule.segments.push_back({len, gamma});
    prev = end;
  }
  return Evaluation<LrSchedule>::ok(std::move(schedule));
}

Evaluation<double> nqs_loss_layernorm(const NqsParams& theta, const LayerNormConfig& ln, const RunConfig& run,
                                      const SummationRule& rule) {
  const auto schedule = layernorm_schedule(theta, ln, run);
  if (!schedule) return Evaluation<double>::unstable(*schedule.unstable_mode);
  return nqs_loss_scheduled(theta, schedule.value, run, rule);
}

Evaluation<std::vector<double>> bias_bound_ratio(const NqsParams& theta, std::int64_t n_params,
                                                 std::span<const std::int64_t> steps) {
  std::vector<double> out;
  const double exponent = (theta.approx_exponent - 1.0) / theta.hessian_exponent;
  for (std::int64_t k : steps) {
    if (k < 1) throw std::invalid_argument("bias_bound_ratio: K must be >= 1");
    const auto b = bias_error(theta, n_params, k);
    if (!b) return Evaluation<std::vector<double>>::unstable(*b.unstable_mode);
    out.push_back(b.value * std::pow(static_cast<double>(k), exponent));
  }
  return Evaluation<std::vector<double>>::ok(std::move(out));
}

// ---------------------------------------------------------------------------

BatchLossEvaluator::BatchLossEvaluator(std::span<const RunConfig> runs, const SummationRule& rule)
    : n_runs_(runs.size()) {
  std::map<std::int64_t, std::size_t> by_size;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    validate(runs[i]);
    auto [it, inserted] = by_size.try_emplace(runs[i].n_params, groups_.size());
    if (inserted) groups_.push_back({runs[i].n_params, summation_nodes(runs[i].n_params, rule), {}});
    groups_[it->second].members.push_back(
        {i, static_cast<double>(runs[i].batch), static_cast<double>(runs[i].steps)});
  }
}

template <typename T>
std::vector<Evaluation<T>> BatchLossEvaluator::evaluate_impl(const BasicNqsParams<T>& th) const {
  std::vector<Evaluation<T>> out(n_runs_);
  std::vector<T> sums;
  for (const auto& group : groups_) {
    const T base = th.irreducible + appx_error_t(th, group.n_params);
    sums.assign(group.members.size(), T(0.0));
    for (const auto& node : group.nodes) {
      const auto m = mode_quantities(th, node.log_n);
      for (std::size_t j = 0; j < group.members.size(); ++j) {
        const auto& mem = group.members[j];
        sums[j] += node.weight * detail::constant_rate_loss_term(m, mem.batch, mem.steps);
      }
    }
    for (std::size_t j = 0; j < group.members.size(); ++j) {
      const auto& mem = group.members[j];
      if (auto bad = detail::unstable_mode(th, 1.0, static_cast<std::int64_t>(mem.steps))) {
        out[mem.index] = Evaluation<T>::unstable(*bad);
        continue;
      }
      const T total = mem.steps == 0.0 ? untrained_loss_t(th) : base + sums[j];
      if (!std::isfinite(value_of(total))) throw NonFiniteError(double(group.n_params), "batch NQS evaluation");
      out[mem.index] = Evaluation<T>::ok(total);
    }
  }
  return out;
}

std::vector<Evaluation<double>> BatchLossEvaluator::evaluate(const NqsParams& theta) const {
  return evaluate_impl(theta);
}

namespace {

// Per-node pieces of the constant-rate summand that do not depend on (B, K).
struct NodeTerms {
  double approx, noise, contraction;
  double log_abs_rho;      // log|1 - x|
  double inv_rho;          // 1 / (1 - x), 0 when x = 1
  double one_minus_rho_sq; // x (2 - x)
  double d_one_minus_rho_sq;
  bool limit;              // geometric sum by its Taylor form
};

NodeTerms node_terms(const NqsParams& theta, double log_n) {
  const auto m = mode_quantities(theta, log_n);
  const double rho = 1.0 - m.contraction;
  return {m.approx,
          m.noise,
          m.contraction,
          m.log_abs_rho,
          rho == 0.0 ? 0.0 : 1.0 / rho,
          m.one_minus_rho_sq,
          2.0 * rho,
          std::abs(m.one_minus_rho_sq) < kGeometricLimitThreshold};
}

// Summand A rho^{2K} + noise G / B and its partials in (A, noise, x), with
// G = (1 - rho^{2K}) / (1 - rho^2). Matches constant_rate_loss_term.
struct LocalTerm {
  double value, d_approx, d_noise, d_x;
};

LocalTerm local_term(const NodeTerms& t, double batch, double steps) {
  if (steps <= 0.0) return {t.approx, 1.0, 0.0, 0.0};
  const double em1 = std::expm1(2.0 * steps * t.log_abs_rho);
  const double decay = em1 + 1.0;
  const double d_decay = -2.0 * steps * decay * t.inv_rho;
  double geo, d_geo;
  if (t.limit) {
    geo = steps - 0.5 * steps * (steps - 1.0) * t.one_minus_rho_sq;
    d_geo = -0.5 * steps * (steps - 1.0) * t.d_one_minus_rho_sq;
  } else {
    geo = -em1 / t.one_minus_rho_sq;
    d_geo = -(d_decay + geo * t.d_one_minus_rho_sq) / t.one_minus_rho_sq;
  }
  return {t.approx * decay + t.noise * geo / batch, decay, geo / batch, t.approx * d_decay + t.noise * d_geo / batch};
}

}  // namespace

// Each summand depends on theta only through A = P n^-p, the noise scale
// Q R n^-(q+r) and x = Q n^-q, so it is differentiated in those three and
// chained to theta with per-run accumulators.
std::vector<Evaluation<ParamDual>> BatchLossEvaluator::evaluate_dual(const NqsParams& theta) const {
  std::vector<Evaluation<ParamDual>> out(n_runs_);
  const auto seeded = seed_dual(theta);
  struct Acc {
    double value = 0.0;
    double d_approx = 0.0, d_approx_log = 0.0;  // sums of w A dT/dA, and times -log n
    double d_noise = 0.0, d_noise_log = 0.0;
    double d_x = 0.0, d_x_log = 0.0;
  };
  std::vector<Acc> acc;
  for (const auto& group : groups_) {
    acc.assign(group.members.size(), Acc{});
    for (const auto& node : group.nodes) {
      const auto t = node_terms(theta, node.log_n);
      const double w = node.weight;
      for (std::size_t j = 0; j < group.members.size(); ++j) {
        const auto& mem = group.members[j];
        const auto lt = local_term(t, mem.batch, mem.steps);
        auto& a = acc[j];
        const double ga = w * lt.d_approx * t.approx;
        const double gn = w * lt.d_noise * t.noise;
        const double gx = w * lt.d_x * t.contraction;
        a.value += w * lt.value;
        a.d_approx += ga;
        a.d_approx_log -= ga * node.log_n;
        a.d_noise += gn;
        a.d_noise_log -= gn * node.log_n;
        a.d_x += gx;
        a.d_x_log -= gx * node.log_n;
      }
    }
    const ParamDual base = seeded.irreducible + appx_error_t(seeded, group.n_params);
    for (std::size_t j = 0; j < group.members.size(); ++j) {
      const auto& mem = group.members[j];
      if (auto bad = detail::unstable_mode(theta, 1.0, static_cast<std::int64_t>(mem.steps))) {
        out[mem.index] = Evaluation<ParamDual>::unstable(*bad);
        continue;
      }
      if (mem.steps == 0.0) {
        out[mem.index] = Evaluation<ParamDual>::ok(untrained_loss_t(seeded));
        continue;
      }
      const auto& a = acc[j];
      ParamDual total = base;
      total.value += a.value;
      auto& g = total.partials;
      g[std::size_t(Param::approx_exponent)] += a.d_approx_log;
      g[std::size_t(Param::approx_scale)] += a.d_approx / theta.approx_scale;
      g[std::size_t(Param::hessian_exponent)] += a.d_noise_log + a.d_x_log;
      g[std::size_t(Param::hessian_scale)] += (a.d_noise + a.d_x) / theta.hessian_scale;
      g[std::size_t(Param::noise_exponent)] += a.d_noise_log;
      g[std::size_t(Param::noise_scale)] += a.d_noise / theta.noise_scale;
      if (!std::isfinite(total.value)) throw NonFiniteError(double(group.n_params), "batch NQS evaluation");
      out[mem.index] = Evaluation<ParamDual>::ok(total);
    }
  }
  return out;
}

}  // namespace nqs

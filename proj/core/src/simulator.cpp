#include "nqs/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "nqs/optim.hpp"

namespace nqs {

namespace {

std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double unit_open(std::uint64_t bits) {
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;  // (0, 1)
}

class KahanSum {
 public:
  void add(double x) {
    const double y = x - c_;
    const double t = sum_ + y;
    c_ = (t - sum_) - y;
    sum_ = t;
  }
  double value() const { return sum_; }

 private:
  double sum_ = 0.0;
  double c_ = 0.0;
};

struct MeanStderr {
  double mean = 0.0;
  double stderr_ = 0.0;
};

MeanStderr summarize(const std::vector<double>& xs) {
  MeanStderr out;
  if (xs.empty()) return out;
  KahanSum s;
  for (double x : xs) s.add(x);
  const double n = static_cast<double>(xs.size());
  out.mean = s.value() / n;
  if (xs.size() < 2) return out;
  KahanSum ss;
  for (double x : xs) ss.add((x - out.mean) * (x - out.mean));
  out.stderr_ = std::sqrt(ss.value() / (n - 1.0) / n);
  return out;
}

struct ModeSetup {
  std::vector<double> lambda;      // M entries
  std::vector<double> init_sd;     // M entries
  std::vector<double> noise_sd;    // N entries, at the run's batch size
};

ModeSetup mode_setup(const NqsParams& th, std::int64_t n_params, std::int64_t latent, std::int64_t batch) {
  ModeSetup m;
  for (std::int64_t n = 1; n <= latent; ++n) {
    const double ln = std::log(static_cast<double>(n));
    const double lambda = th.hessian_scale * std::exp(-th.hessian_exponent * ln);
    m.lambda.push_back(lambda);
    m.init_sd.push_back(std::sqrt(2.0 * th.approx_scale * std::exp(-th.approx_exponent * ln) / lambda));
    if (n <= n_params)
      m.noise_sd.push_back(std::sqrt(2.0 * th.noise_scale * std::exp(-th.noise_exponent * ln) / double(batch)));
  }
  return m;
}

// Step index k (1-based) -> whether gamma is refreshed before that step.
std::vector<char> refresh_points(std::int64_t steps, std::int64_t segments) {
  std::vector<char> refresh(std::size_t(steps) + 1, 0);
  std::int64_t prev = 0;
  for (std::int64_t end : layernorm_boundaries(steps, segments == 0 ? steps : segments)) {
    refresh[std::size_t(prev + 1)] = 1;
    prev = end;
  }
  return refresh;
}

std::vector<double> per_step_gammas(const LrSchedule& schedule) {
  std::vector<double> g;
  for (const auto& seg : schedule.segments)
    for (std::int64_t i = 0; i < seg.steps; ++i) g.push_back(seg.gamma);
  return g;
}

}  // namespace

double counter_normal(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  const std::uint64_t h1 = mix64(mix64(mix64(seed ^ 0x6a09e667f3bcc909ULL) ^ a) ^ (b * 0x9e3779b97f4a7c15ULL) ^ c);
  const std::uint64_t h2 = mix64(h1 ^ 0xbb67ae8584caa73bULL);
  return std::sqrt(-2.0 * std::log(unit_open(h1))) * std::cos(2.0 * std::numbers::pi * unit_open(h2));
}

std::int64_t SimConfig::resolved_latent_modes() const {
  return latent_modes == 0 ? 4 * run.n_params : latent_modes;
}

void SimConfig::validate() const {
  nqs::validate(theta);
  nqs::validate(run);
  if (trials < 1) throw std::invalid_argument("SimConfig: trials must be >= 1");
  if (latent_modes != 0 && latent_modes < run.n_params)
    throw std::invalid_argument("SimConfig: latent_modes must be >= n_params");
  if (s && !(*s > 0.0)) throw std::invalid_argument("SimConfig: s must be positive");
  if (feedback != NormFeedback::none) {
    if (!s) throw std::invalid_argument("SimConfig: weight-norm feedback needs s");
    if (schedule) throw std::invalid_argument("SimConfig: schedule and weight-norm feedback are exclusive");
  }
  if (schedule) nqs::validate(*schedule, run.steps);
  if (!(gamma_init > 0.0)) throw std::invalid_argument("SimConfig: gamma_init must be positive");
  if (feedback_segments < 0) throw std::invalid_argument("SimConfig: feedback_segments must be >= 0");
}

MomentResult deterministic_moments(const SimConfig& cfg) {
  cfg.validate();
  const auto& th = cfg.theta;
  const std::int64_t n_params = cfg.run.n_params;
  const std::int64_t steps = cfg.run.steps;
  const auto modes = mode_setup(th, n_params, n_params, cfg.run.batch);
  const double s = cfg.s.value_or(0.0);

  const auto dim = static_cast<std::size_t>(n_params);
  std::vector<double> v0(dim), second(dim), cross(dim);
  for (std::size_t i = 0; i < v0.size(); ++i) {
    v0[i] = modes.init_sd[i] * modes.init_sd[i];
    second[i] = v0[i];  // E d^2
    cross[i] = v0[i];   // E d d0
  }
  auto moved = [&] {
    double acc = 0.0;
    for (std::size_t i = 0; i < v0.size(); ++i) acc += second[i] - 2.0 * cross[i] + v0[i];
    return acc;
  };

  std::vector<double> fixed;
  if (cfg.feedback == NormFeedback::none)
    fixed = per_step_gammas(cfg.schedule ? *cfg.schedule : LrSchedule::constant(steps));
  const auto refresh = refresh_points(steps, cfg.feedback_segments);

  MomentResult out;
  double gamma = cfg.gamma_init;
  for (std::int64_t k = 1; k <= steps; ++k) {
    if (cfg.feedback == NormFeedback::none)
      gamma = fixed[std::size_t(k - 1)];
    else if (refresh[std::size_t(k)])
      gamma = cfg.gamma_init * s / (s + moved());
    for (std::size_t i = 0; i < v0.size(); ++i) {
      const double a = 1.0 - gamma * modes.lambda[i];
      const double noise = gamma * modes.noise_sd[i];
      second[i] = a * a * second[i] + noise * noise;
      cross[i] *= a;
    }
    out.schedule.segments.push_back({1, gamma});
  }

  double trained = 0.0;
  for (std::size_t i = 0; i < v0.size(); ++i) {
    out.mode_loss.push_back(0.5 * modes.lambda[i] * second[i]);
    trained += out.mode_loss.back();
  }
  out.loss = th.irreducible + appx_error(th, n_params) + trained;
  out.weight_norm_sq = s + moved();
  return out;
}

SimResult simulate_run(const SimConfig& cfg) {
  cfg.validate();
  const auto& th = cfg.theta;
  const std::int64_t n_params = cfg.run.n_params;
  const std::int64_t steps = cfg.run.steps;
  const std::int64_t latent = cfg.resolved_latent_modes();
  const auto modes = mode_setup(th, n_params, latent, cfg.run.batch);
  const double tail = appx_error(th, latent);
  const double s = cfg.s.value_or(0.0);

  std::vector<double> gammas;
  if (cfg.feedback == NormFeedback::none)
    gammas = per_step_gammas(cfg.schedule ? *cfg.schedule : LrSchedule::constant(steps));
  else if (cfg.feedback == NormFeedback::expected)
    gammas = per_step_gammas(deterministic_moments(cfg).schedule);
  const auto refresh = refresh_points(steps, cfg.feedback_segments);

  const auto n_trials = static_cast<std::size_t>(cfg.trials);
  std::vector<double> losses(n_trials), norms(n_trials);
  std::vector<char> ok(n_trials, 0);
  parallel_for(n_trials, cfg.threads, [&](std::size_t t) {
    std::vector<double> d(static_cast<std::size_t>(latent)), d0(static_cast<std::size_t>(n_params));
    for (std::size_t i = 0; i < d.size(); ++i) {
      d[i] = modes.init_sd[i] * counter_normal(cfg.seed, t, 0, i);
      if (i < d0.size()) d0[i] = d[i];
    }
    double gamma = cfg.gamma_init;
    for (std::int64_t k = 1; k <= steps; ++k) {
      if (cfg.feedback != NormFeedback::empirical) {
        gamma = gammas[std::size_t(k - 1)];
      } else if (refresh[std::size_t(k)]) {
        double moved = 0.0;
        for (std::size_t i = 0; i < d0.size(); ++i) moved += (d[i] - d0[i]) * (d[i] - d0[i]);
        gamma = cfg.gamma_init * s / (s + moved);
      }
      for (std::size_t i = 0; i < d0.size(); ++i)
        d[i] = (1.0 - gamma * modes.lambda[i]) * d[i] +
               gamma * modes.noise_sd[i] * counter_normal(cfg.seed, t, std::uint64_t(k), i);
    }
    double loss = 0.0, moved = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) loss += 0.5 * modes.lambda[i] * d[i] * d[i];
    for (std::size_t i = 0; i < d0.size(); ++i) moved += (d[i] - d0[i]) * (d[i] - d0[i]);
    losses[t] = th.irreducible + tail + loss;
    norms[t] = s + moved;
    ok[t] = std::isfinite(losses[t]) && std::isfinite(norms[t]);
  });

  std::vector<double> good_loss, good_norm;
  for (std::size_t t = 0; t < n_trials; ++t) {
    if (!ok[t]) continue;
    good_loss.push_back(losses[t]);
    good_norm.push_back(norms[t]);
  }
  SimResult r;
  r.trials = std::int64_t(good_loss.size());
  r.failed_trials = cfg.trials - r.trials;
  const auto l = summarize(good_loss);
  r.mean_loss = l.mean;
  r.stderr_loss = l.stderr_;
  if (cfg.s) {
    const auto w = summarize(good_norm);
    r.mean_weight_norm_sq = w.mean;
    r.stderr_weight_norm_sq = w.stderr_;
  }
  return r;
}

SimResult simulate_layernorm_run(SimConfig cfg) {
  if (!cfg.s) throw std::invalid_argument("simulate_layernorm_run: s must be set");
  if (cfg.feedback == NormFeedback::none) cfg.feedback = NormFeedback::expected;
  return simulate_run(cfg);
}

double IsoFlopsDesign::resolved_base_compute() const {
  if (base_compute > 0.0) return base_compute;
  return 6.0 * double(n_base) * double(batch) * double(seq_len) * std::ldexp(1.0, int(models_per_level));
}

namespace {

void check_design(const IsoFlopsDesign& d) {
  if (d.levels < 1 || d.models_per_level < 1) throw std::invalid_argument("isoflops design: empty level grid");
  if (d.n_base < 1 || d.batch < 1 || d.seq_len < 1) throw std::invalid_argument("isoflops design: sizes must be >= 1");
  if (d.levels + d.models_per_level > 60) throw std::invalid_argument("isoflops design: model sizes overflow");
}

void check_design(const IsoTokensDesign& d) {
  if (d.n_params.empty() || d.levels < 1) throw std::invalid_argument("isotokens design: empty grid");
  for (auto n : d.n_params)
    if (n < 1) throw std::invalid_argument("isotokens design: n_params must be >= 1");
  if (d.batch_min < 1 || d.batch_max < d.batch_min || d.seq_len < 1 || !(d.base_tokens > 0.0))
    throw std::invalid_argument("isotokens design: invalid batch or token settings");
}

std::int64_t power_of_two_near(double x) {
  if (x <= 1.0) return 1;
  return std::int64_t{1} << std::llround(std::log2(x));
}

}  // namespace

SyntheticDataset generate_synthetic_dataset(const NqsParams& theta, const DatasetDesign& design, double noise_sd,
                                            std::uint64_t seed, const std::optional<LayerNormConfig>& ln) {
  validate(theta);
  if (!(noise_sd >= 0.0)) throw std::invalid_argument("generate_synthetic_dataset: noise_sd must be >= 0");
  SyntheticDataset out;

  auto emit = [&](const RunConfig& run, const std::string& design_tag, std::int64_t level) {
    const auto pred = ln ? nqs_loss_layernorm(theta, *ln, run) : nqs_loss(theta, run);
    if (!pred) throw std::invalid_argument("generate_synthetic_dataset: theta diverges at mode " +
                                           std::to_string(*pred.unstable_mode));
    Record r;
    r.run = run;
    r.row = out.data.size() + 1;
    const double eps = noise_sd == 0.0 ? 0.0 : noise_sd * counter_normal(seed, r.row, 0x5eed, 0);
    r.loss = pred.value * std::exp(eps);
    r.tags = {design_tag, "level=" + std::to_string(level)};
    out.data.append(std::move(r));
  };

  if (const auto* iso = std::get_if<IsoFlopsDesign>(&design)) {
    check_design(*iso);
    const double base = iso->resolved_base_compute();
    for (std::int64_t j = 0; j < iso->levels; ++j) {
      const double compute = base * std::ldexp(1.0, int(2 * j));
      for (std::int64_t i = 0; i < iso->models_per_level; ++i) {
        const std::int64_t n = iso->n_base << (j + i);
        const double tokens = compute / (6.0 * double(n));
        const std::int64_t b = iso->batch_rule == BatchRule::fixed
                                   ? iso->batch
                                   : power_of_two_near(double(iso->batch) *
                                                       std::pow(compute / base, iso->batch_exponent));
        const auto k = std::llround(tokens / (double(b) * double(iso->seq_len)));
        if (k < 1) {
          out.skipped.push_back("level " + std::to_string(j) + ", N=" + std::to_string(n) + ", B=" +
                                std::to_string(b) + ": fewer than one step");
          continue;
        }
        emit({n, b, k, iso->seq_len}, "isoflops", j);
      }
    }
  } else {
    const auto& tok = std::get<IsoTokensDesign>(design);
    check_design(tok);
    for (std::int64_t n : tok.n_params)
      for (std::int64_t j = 0; j < tok.levels; ++j) {
        const double tokens = tok.base_tokens * std::ldexp(1.0, int(2 * j));
        for (std::int64_t b = tok.batch_min; b <= tok.batch_max; b *= 2) {
          const auto k = std::llround(tokens / (double(b) * double(tok.seq_len)));
          if (k < 1) {
            out.skipped.push_back("N=" + std::to_string(n) + ", level " + std::to_string(j) + ", B=" +
                                  std::to_string(b) + ": fewer than one step");
            continue;
          }
          emit({n, b, k, tok.seq_len}, "isotokens", j);
        }
      }
  }
  return out;
}

}  // namespace nqs

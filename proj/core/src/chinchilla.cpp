#include "nqs/chinchilla.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "nqs/numerics/dual.hpp"

namespace nqs {

namespace {

constexpr std::size_t kChinDim = 5;
using ChinDual = Dual<kChinDim>;
using UVec = std::array<double, kChinDim>;

// Unconstrained coordinates: log(p - 1), log P, log q, log Q, e_irr.
ChinParams from_unconstrained(const UVec& u) {
  return {1.0 + std::exp(u[0]), std::exp(u[1]), std::exp(u[2]), std::exp(u[3]), u[4]};
}

template <typename T>
T chin_loss_u(const std::array<T, kChinDim>& u, double log_n, double log_d) {
  using std::exp;
  const T pm1 = exp(u[0]);
  return u[4] + exp(u[1] - pm1 * log_n) + exp(u[3] - pm1 / exp(u[2]) * log_d);
}

struct Sample {
  double log_n;
  double log_d;
  double log_loss;
};

std::vector<Sample> prepare(const ScalingDataset& data) {
  validate(data);
  if (data.size() < kChinDim)
    throw std::invalid_argument("chin_fit: underdetermined, " + std::to_string(data.size()) +
                                " records for 5 parameters");
  std::vector<Sample> out;
  for (const auto& r : data.records) {
    if (r.run.tokens() < 1.0) throw DataError(r.row, "steps", "Chinchilla fit needs D = B*K*seq_len >= 1");
    out.push_back({std::log(double(r.run.n_params)), std::log(r.run.tokens()), std::log(r.loss)});
  }
  return out;
}

struct ObjectiveGrad {
  double value;
  UVec grad;
};

ObjectiveGrad objective_u(const UVec& u, const std::vector<Sample>& samples, const FitConfig& cfg) {
  std::array<ChinDual, kChinDim> ud;
  for (std::size_t i = 0; i < kChinDim; ++i) ud[i] = ChinDual::variable(u[i], i);
  ObjectiveGrad out{0.0, {}};
  for (const auto& s : samples) {
    const ChinDual pred = chin_loss_u(ud, s.log_n, s.log_d);
    if (!(pred.value > 0.0) || !std::isfinite(pred.value)) {
      const double v = std::isfinite(pred.value) ? pred.value : -1.0;
      out.value += cfg.penalty * (1.0 - v);
      if (std::isfinite(pred.value))
        for (std::size_t i = 0; i < kChinDim; ++i) out.grad[i] -= cfg.penalty * pred.partials[i];
      continue;
    }
    const double r = std::log(pred.value);
    double loss, dloss;
    if (cfg.residual == Residual::huber) {
      loss = huber(r, s.log_loss, cfg.huber_delta);
      dloss = huber_derivative(r, s.log_loss, cfg.huber_delta);
    } else {
      const double d = r - s.log_loss;
      loss = d * d;
      dloss = 2.0 * d;
    }
    out.value += loss;
    for (std::size_t i = 0; i < kChinDim; ++i) out.grad[i] += dloss / pred.value * pred.partials[i];
  }
  const double m = static_cast<double>(samples.size());
  out.value /= m;
  for (auto& g : out.grad) g /= m;
  return out;
}

// Levenberg-Marquardt on the log residuals; a step is kept only when it lowers
// the configured objective.
UVec refine(UVec u, double& objective, const std::vector<Sample>& samples, const FitConfig& cfg) {
  const auto m = static_cast<Eigen::Index>(samples.size());
  double lambda = 1e-3;
  for (int iter = 0; iter < 200 && objective > 0.0; ++iter) {
    std::array<ChinDual, kChinDim> ud;
    for (std::size_t i = 0; i < kChinDim; ++i) ud[i] = ChinDual::variable(u[i], i);
    Eigen::MatrixXd jac(m, kChinDim);
    Eigen::VectorXd res(m);
    bool ok = true;
    for (Eigen::Index k = 0; k < m; ++k) {
      const auto pred = chin_loss_u(ud, samples[k].log_n, samples[k].log_d);
      if (!(pred.value > 0.0)) {
        ok = false;
        break;
      }
      res[k] = std::log(pred.value) - samples[k].log_loss;
      for (std::size_t i = 0; i < kChinDim; ++i) jac(k, Eigen::Index(i)) = pred.partials[i] / pred.value;
    }
    if (!ok) break;
    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    const Eigen::VectorXd jtr = jac.transpose() * res;
    bool improved = false;
    for (int tries = 0; tries < 20; ++tries) {
      Eigen::MatrixXd a = jtj;
      a.diagonal() += lambda * (jtj.diagonal().array() + 1e-12).matrix();
      const Eigen::VectorXd step = a.ldlt().solve(-jtr);
      UVec cand = u;
      for (std::size_t i = 0; i < kChinDim; ++i) cand[i] += step[Eigen::Index(i)];
      const double value = objective_u(cand, samples, cfg).value;
      if (std::isfinite(value) && value < objective) {
        u = cand;
        objective = value;
        lambda = std::max(lambda * 0.3, 1e-12);
        improved = true;
        break;
      }
      lambda *= 10.0;
    }
    if (!improved) break;
  }
  return u;
}

}  // namespace

void validate(const ChinParams& phi) {
  if (!(phi.approx_exponent > 1.0)) throw std::invalid_argument("ChinParams: p must exceed 1");
  if (!(phi.data_exponent > 0.0)) throw std::invalid_argument("ChinParams: q must be positive");
  if (phi.size_scale < 0.0 || phi.data_scale < 0.0) throw std::invalid_argument("ChinParams: scales must be >= 0");
}

double chin_loss(const ChinParams& phi, double n_params, double tokens) {
  if (n_params < 1.0 || tokens < 1.0) throw std::invalid_argument("chin_loss: N and D must be >= 1");
  const double pm1 = phi.approx_exponent - 1.0;
  return phi.irreducible + phi.size_scale * std::pow(n_params, -pm1) +
         phi.data_scale * std::pow(tokens, -pm1 / phi.data_exponent);
}

std::vector<Range> default_chin_init_ranges() {
  return {{1.05, 2.5}, {0.3, 2.5}, {-1.0, 5.0}, {-1.0, 5.0}, {0.0, 3.0}};
}

double chin_objective(const ChinParams& phi, const ScalingDataset& data, double delta, Residual residual) {
  validate(data);
  double acc = 0.0;
  for (const auto& r : data.records) {
    const double lp = std::log(chin_loss(phi, double(r.run.n_params), r.run.tokens()));
    const double ll = std::log(r.loss);
    acc += residual == Residual::huber ? huber(lp, ll, delta) : (lp - ll) * (lp - ll);
  }
  return acc / static_cast<double>(data.size());
}

ChinFitResult chin_fit(const ScalingDataset& data, const FitConfig& config) {
  config.validate();
  const auto samples = prepare(data);
  const auto ranges = config.init_ranges.empty() ? default_chin_init_ranges() : config.init_ranges;
  if (ranges.size() != kChinDim) throw std::invalid_argument("chin_fit: need 5 init ranges");
  const auto starts = latin_hypercube(ranges, std::size_t(config.n_inits), config.seed);

  struct Trial {
    UVec best_u;
    double best = std::numeric_limits<double>::infinity();
  };
  std::vector<Trial> trials(starts.size());
  parallel_for(starts.size(), config.threads, [&](std::size_t i) {
    const auto& s = starts[i];
    UVec u{std::log(s[0] - 1.0), s[2], std::log(s[1]), s[3], s[4]};
    Adam adam(kChinDim, config.lr, config.clip);
    Trial t;
    for (std::int64_t it = 0; it < config.n_iters; ++it) {
      const auto og = objective_u(u, samples, config);
      if (std::isfinite(og.value) && og.value < t.best) {
        t.best = og.value;
        t.best_u = u;
      }
      if (!std::isfinite(og.value)) break;
      adam.step(u, og.grad);
    }
    trials[i] = t;
  });

  ChinFitResult result;
  std::size_t arg = trials.size();
  for (std::size_t i = 0; i < trials.size(); ++i) {
    result.per_init.push_back({i, trials[i].best});
    if (std::isfinite(trials[i].best) && (arg == trials.size() || trials[i].best < trials[arg].best)) arg = i;
  }
  if (arg == trials.size()) throw std::runtime_error("chin_fit: every initialization diverged");
  UVec u = trials[arg].best_u;
  double objective = trials[arg].best;
  if (config.refine) {
    const double before = objective;
    u = refine(u, objective, samples, config);
    result.refined = objective < before;
  }
  result.best = from_unconstrained(u);
  result.best_objective = objective;
  return result;
}

ChinAllocation chin_optimal_nd(const ChinParams& phi, double compute, std::int64_t seq_len) {
  if (!(compute > 0.0)) throw std::invalid_argument("chin_optimal_nd: compute must be positive");
  if (seq_len < 1) throw std::invalid_argument("chin_optimal_nd: seq_len must be >= 1");
  validate(phi);
  const double budget = compute / 6.0;  // N * D
  if (budget < 1.0) throw std::invalid_argument("chin_optimal_nd: compute below 6 FLOPs");
  auto finish = [&](double n, AllocationBoundary b) {
    const double d = budget / n;
    return ChinAllocation{n, d, d / double(seq_len), chin_loss(phi, n, d), b};
  };
  if (phi.size_scale == 0.0 && phi.data_scale == 0.0) return finish(std::sqrt(budget), AllocationBoundary::interior);
  if (phi.size_scale == 0.0) return finish(1.0, AllocationBoundary::all_to_data);
  if (phi.data_scale == 0.0) return finish(budget, AllocationBoundary::all_to_params);

  const double hi_x = std::log(budget);
  auto f = [&](double x) { return chin_loss(phi, std::exp(x), budget / std::exp(x)); };
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = 0.0, b = hi_x;
  double c = b - inv_phi * (b - a), d = a + inv_phi * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > 1e-6) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  const double x = 0.5 * (a + b);
  AllocationBoundary boundary = AllocationBoundary::interior;
  if (x < 1e-6) boundary = AllocationBoundary::all_to_data;
  if (x > hi_x - 1e-6) boundary = AllocationBoundary::all_to_params;
  return finish(std::exp(x), boundary);
}

}  // namespace nqs

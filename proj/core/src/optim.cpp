#include "nqs/optim.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>

namespace nqs {

double huber(double x, double y, double delta) {
  const double d = std::abs(x - y);
  return d <= delta ? 0.5 * d * d : delta * (d - 0.5 * delta);
}

double huber_derivative(double x, double y, double delta) {
  const double d = x - y;
  return std::clamp(d, -delta, delta);
}

void FitConfig::validate() const {
  if (n_inits < 1) throw std::invalid_argument("FitConfig: n_inits must be >= 1");
  if (n_iters < 1) throw std::invalid_argument("FitConfig: n_iters must be >= 1");
  if (!(clip > 0.0)) throw std::invalid_argument("FitConfig: clip must be positive");
  if (!(huber_delta > 0.0)) throw std::invalid_argument("FitConfig: huber_delta must be positive");
  if (!(lr > 0.0)) throw std::invalid_argument("FitConfig: lr must be positive");
  for (const auto& r : init_ranges)
    if (!(r.low < r.high)) throw std::invalid_argument("FitConfig: init range needs low < high");
}

Adam::Adam(std::size_t dim, double lr, double clip, double beta1, double beta2, double eps)
    : lr_(lr), clip_(clip), beta1_(beta1), beta2_(beta2), eps_(eps), m_(dim, 0.0), v_(dim, 0.0) {}

void Adam::step(std::span<double> x, std::span<const double> grad) {
  ++t_;
  beta1_pow_ *= beta1_;
  beta2_pow_ *= beta2_;
  const double c1 = 1.0 - beta1_pow_;
  const double c2 = 1.0 - beta2_pow_;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double g = std::clamp(grad[i], -clip_, clip_);
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
    x[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

std::vector<std::vector<double>> latin_hypercube(std::span<const Range> ranges, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("latin_hypercube: n must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::vector<double>> points(n, std::vector<double>(ranges.size()));
  std::vector<std::size_t> strata(n);
  for (std::size_t d = 0; d < ranges.size(); ++d) {
    const auto [lo, hi] = ranges[d];
    if (!(lo < hi)) throw std::invalid_argument("latin_hypercube: each range needs low < high");
    std::iota(strata.begin(), strata.end(), std::size_t{0});
    std::shuffle(strata.begin(), strata.end(), rng);
    const double width = (hi - lo) / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double v = lo + width * (static_cast<double>(strata[i]) + unit(rng));
      points[i][d] = std::min(v, std::nextafter(lo + width * static_cast<double>(strata[i] + 1), lo));
    }
  }
  return points;
}

std::vector<Range> default_nqs_init_ranges() {
  return {
      {1.05, 2.5},  // p
      {10.0, 100.0},  // P
      {0.6, 2.5},   // q
      {0.05, 20.0},  // Q
      {0.6, 2.5},   // r
      {0.1, 10.0},  // sqrt(R)
      {1.0, 1.5},   // e_irr
  };
}

std::vector<NqsParams> nqs_initializations(std::span<const Range> ranges, std::size_t n, std::uint64_t seed) {
  if (ranges.size() != kNumParams) throw std::invalid_argument("nqs_initializations: need 7 ranges");
  std::vector<NqsParams> out;
  out.reserve(n);
  for (const auto& pt : latin_hypercube(ranges, n, seed)) {
    std::array<double, kNumParams> a{};
    std::copy(pt.begin(), pt.end(), a.begin());
    a[static_cast<std::size_t>(Param::noise_scale)] *= a[static_cast<std::size_t>(Param::noise_scale)];
    out.push_back(NqsParams::from_array(a));
  }
  return out;
}

unsigned resolve_threads(unsigned requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("NQS_THREADS")) {
    try {
      const int v = std::stoi(env);
      if (v > 0) return static_cast<unsigned>(v);
    } catch (const std::exception&) {
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& body) {
  const unsigned workers = std::min<std::size_t>(resolve_threads(threads), std::max<std::size_t>(n, 1));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        body(i);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace nqs

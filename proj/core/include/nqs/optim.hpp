#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "nqs/model.hpp"

namespace nqs {

// 0.5 d^2 for |d| <= delta, delta (|d| - delta / 2) beyond.
double huber(double x, double y, double delta);
// d huber / dx.
double huber_derivative(double x, double y, double delta);

// squared is d^2 without the 1/2 of the Huber quadratic branch.
enum class Residual { huber, squared };

struct Range {
  double low = 0.0;
  double high = 1.0;
};

struct FitConfig {
  std::int64_t n_inits = 1000;
  std::int64_t n_iters = 5000;
  double lr = 1e-2;
  double clip = 1.0;
  double huber_delta = 1e-3;
  std::uint64_t seed = 0;
  // Per-parameter initialization box; empty selects the model's default.
  std::vector<Range> init_ranges;
  double penalty = 1e6;
  Residual residual = Residual::huber;
  // Extra starting points appended after the Latin hypercube draws.
  std::vector<NqsParams> extra_inits;
  // Chinchilla only: Levenberg-Marquardt polish of the best candidate.
  bool refine = true;
  unsigned threads = 0;  // 0: NQS_THREADS or hardware concurrency

  void validate() const;
};

// Adam with per-component gradient clipping to [-clip, clip].
class Adam {
 public:
  Adam(std::size_t dim, double lr, double clip, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(std::span<double> x, std::span<const double> grad);
  std::int64_t iterations() const { return t_; }

 private:
  double lr_, clip_, beta1_, beta2_, eps_;
  std::vector<double> m_, v_;
  std::int64_t t_ = 0;
  double beta1_pow_ = 1.0, beta2_pow_ = 1.0;
};

// n points in the box; along every dimension each of the n equal strata holds
// exactly one point. Deterministic for a given seed.
std::vector<std::vector<double>> latin_hypercube(std::span<const Range> ranges, std::size_t n, std::uint64_t seed);

// Default NQS initialization box in Param order; the noise-scale entry bounds
// sqrt(R) rather than R.
std::vector<Range> default_nqs_init_ranges();
// Latin hypercube over the ranges above with sqrt(R) squared on the way out.
std::vector<NqsParams> nqs_initializations(std::span<const Range> ranges, std::size_t n, std::uint64_t seed);

// Worker count: explicit request, else NQS_THREADS, else hardware concurrency.
unsigned resolve_threads(unsigned requested);

// Runs body(i) for i in [0, n) on up to `threads` workers; each index runs once.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& body);

}  // namespace nqs

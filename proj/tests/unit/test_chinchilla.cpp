#include <algorithm>
#include <cmath>
#include <limits>

#include "doctest.h"
#include "nqs/chinchilla.hpp"
#include "nqs/dataset.hpp"

using namespace nqs;

namespace {

ScalingDataset chin_data(const ChinParams& phi, int n) {
  ScalingDataset d;
  for (int i = 0; i < n; ++i) {
    const std::int64_t N = std::int64_t{1000} << (i % 6);
    const std::int64_t B = std::int64_t{4} << (i % 3);
    const std::int64_t K = 100 * (1 + i / 3);
    RunConfig run{N, B, K, 16};
    d.append({run, chin_loss(phi, double(N), run.tokens()), {}, 0, {}});
  }
  return d;
}

}  // namespace

TEST_SUITE("chinchilla") {
  TEST_CASE("loss examples") {
    CHECK(chin_loss({2.0, 0.0, 1.0, 0.0, 1.0}, 123.0, 4567.0) == 1.0);
    CHECK(chin_loss({2.0, 1.0, 1.0, 0.0, 0.0}, 10.0, 1.0) == doctest::Approx(0.1).epsilon(1e-15));
    const ChinParams phi{1.4, 30.0, 0.9, 8.0, 1.1};
    CHECK(chin_loss(phi, 1e6, 1e9) < chin_loss(phi, 1e5, 1e9));
    CHECK(chin_loss(phi, 1e6, 1e9) < chin_loss(phi, 1e6, 1e8));
    CHECK(chin_loss(phi, 1e30, 1e30) == doctest::Approx(1.1).epsilon(1e-6));
    CHECK_THROWS_AS(validate(ChinParams{0.9, 1.0, 1.0, 1.0, 0.0}), std::invalid_argument);
    CHECK_THROWS_AS(chin_loss(phi, 0.5, 10.0), std::invalid_argument);
  }

  TEST_CASE("fit recovers noiseless data") {
    const ChinParams phi{1.4, 30.0, 0.9, 8.0, 1.1};
    const auto data = chin_data(phi, 30);
    FitConfig cfg;
    cfg.n_inits = 32;
    cfg.n_iters = 1000;
    cfg.seed = 3;
    const auto rep = chin_fit(data, cfg);
    CHECK(rep.best_objective <= 1e-8);
    CHECK(rep.per_init.size() == 32);
    for (const auto& o : rep.per_init) CHECK(o.objective >= rep.best_objective);
    // Held-out configuration.
    CHECK(chin_loss(rep.best, 3e7, 5e10) == doctest::Approx(chin_loss(phi, 3e7, 5e10)).epsilon(1e-3));
    CHECK(chin_objective(rep.best, data, cfg.huber_delta) == doctest::Approx(rep.best_objective).epsilon(1e-9));
  }

  TEST_CASE("duplicated records fit like the originals") {
    const ChinParams phi{1.6, 12.0, 1.3, 20.0, 0.8};
    const auto data = chin_data(phi, 12);
    auto twice = data;
    for (const auto& r : data.records) twice.append(r);
    FitConfig cfg;
    cfg.n_inits = 8;
    cfg.n_iters = 500;
    cfg.refine = false;
    const auto a = chin_fit(data, cfg);
    const auto b = chin_fit(twice, cfg);
    // The objective is a mean, so duplication leaves it unchanged pointwise.
    for (const ChinParams& at : {phi, a.best, ChinParams{1.2, 3.0, 2.0, 50.0, 0.1}})
      CHECK(chin_objective(at, twice, cfg.huber_delta) == doctest::Approx(chin_objective(at, data, cfg.huber_delta)).epsilon(1e-12));
    CHECK(b.best_objective == doctest::Approx(a.best_objective).epsilon(0.2));
  }

  TEST_CASE("fit errors") {
    const ChinParams phi{1.6, 12.0, 1.3, 20.0, 0.8};
    FitConfig cfg;
    cfg.n_inits = 2;
    cfg.n_iters = 10;
    CHECK_THROWS_AS(chin_fit(chin_data(phi, 4), cfg), std::invalid_argument);
    auto bad = chin_data(phi, 10);
    bad.records[3].loss = std::numeric_limits<double>::quiet_NaN();
    try {
      chin_fit(bad, cfg);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(e.row() == 4);
      CHECK(e.column() == "loss");
    }
  }

  TEST_CASE("compute-optimal split") {
    // Equal exponents and scales split compute evenly.
    const ChinParams sym{2.0, 5.0, 1.0, 5.0, 1.0};
    const double C = 6e12;
    const auto a = chin_optimal_nd(sym, C);
    CHECK(a.boundary == AllocationBoundary::interior);
    // The search resolves log N to 1e-6.
    CHECK(a.n_params == doctest::Approx(std::sqrt(C / 6)).epsilon(1e-5));
    CHECK(a.tokens == doctest::Approx(std::sqrt(C / 6)).epsilon(1e-5));

    CHECK(chin_optimal_nd({2.0, 0.0, 1.0, 5.0, 1.0}, C).boundary == AllocationBoundary::all_to_data);
    CHECK(chin_optimal_nd({2.0, 5.0, 1.0, 0.0, 1.0}, C).boundary == AllocationBoundary::all_to_params);

    // Dense grid over log N.
    const ChinParams phi{1.35, 40.0, 0.8, 900.0, 1.7};
    for (double c : {1e15, 1e19, 1e22}) {
      const auto got = chin_optimal_nd(phi, c, 128);
      const double lo = 0.0, hi = std::log(c / 6.0);
      double best_n = 0, best = std::numeric_limits<double>::infinity();
      constexpr int kPoints = 1'000'000;
      for (int i = 0; i <= kPoints; ++i) {
        const double n = std::min(std::exp(lo + (hi - lo) * i / kPoints), c / 6.0);
        const double l = chin_loss(phi, n, c / (6.0 * n));
        if (l < best) {
          best = l;
          best_n = n;
        }
      }
      CHECK(got.n_params == doctest::Approx(best_n).epsilon(1e-3));
      CHECK(got.loss <= best * (1 + 1e-12));
      CHECK(got.sequences == doctest::Approx(got.tokens / 128).epsilon(1e-15));
    }
  }
}

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "doctest.h"
#include "nqs/loss.hpp"
#include "nqs/optim.hpp"
#include "oracles.hpp"

using namespace nqs;

namespace {

const NqsParams kTheta{1.5, 20.0, 1.0, 1.2, 1.0, 1.0, 1.2};
// Published fit for Adam with a cosine schedule.
const NqsParams kAdamCosine{1.12, 3.6, 0.59, 0.93, 1.5, 4.3, 0.45};

long double brute_bias(const NqsParams& th, std::int64_t N, std::int64_t K) {
  long double acc = 0.0L;
  for (std::int64_t n = N; n >= 1; --n) {
    const double x = th.hessian_scale * std::pow(double(n), -th.hessian_exponent);
    acc += th.approx_scale * std::pow(double(n), -th.approx_exponent) *
           std::pow(static_cast<long double>((1 - x) * (1 - x)), static_cast<long double>(K));
  }
  return acc;
}

long double brute_var(const NqsParams& th, std::int64_t N, std::int64_t B, std::int64_t K) {
  long double acc = 0.0L;
  for (std::int64_t n = N; n >= 1; --n) {
    const long double x = th.hessian_scale * std::pow(static_cast<long double>(n), -static_cast<long double>(th.hessian_exponent));
    const long double omr = x * (2.0L - x);  // 1 - rho^2
    const long double g = -std::expm1(static_cast<long double>(K) * std::log1p(-omr)) / omr;
    acc += th.hessian_scale * th.noise_scale / double(B) *
           std::pow(static_cast<long double>(n), -static_cast<long double>(th.hessian_exponent + th.noise_exponent)) * g;
  }
  return acc;
}

}  // namespace

TEST_SUITE("loss") {
  TEST_CASE("parameter validation") {
    CHECK(is_valid(kTheta));
    auto bad = kTheta;
    bad.approx_exponent = 1.0;
    CHECK_FALSE(is_valid(bad));
    CHECK_THROWS_AS(validate(bad), std::invalid_argument);
    bad = kTheta;
    bad.noise_scale = 0.0;
    CHECK_FALSE(is_valid(bad));
    bad = kTheta;
    bad.irreducible = std::nan("");
    CHECK_FALSE(is_valid(bad));
    CHECK_THROWS_AS(validate(RunConfig{0, 1, 1, 1}), std::invalid_argument);
    CHECK_THROWS_AS(validate(RunConfig{1, 0, 1, 1}), std::invalid_argument);
    CHECK_THROWS_AS(validate(RunConfig{1, 1, -1, 1}), std::invalid_argument);
    const RunConfig run{100, 8, 50, 128};
    CHECK(run.tokens() == 8.0 * 50 * 128);
    CHECK(run.compute() == 6.0 * 100 * 8 * 50 * 128);
  }

  TEST_CASE("appx error") {
    NqsParams th = kTheta;
    th.approx_scale = 1.0;
    th.approx_exponent = 2.0;
    CHECK(std::abs(appx_error(th, 1) - (std::numbers::pi * std::numbers::pi / 6 - 1)) <= 1e-14);
    CHECK(oracle::relative_error(appx_error(kAdamCosine, 10'000'000),
                                 oracle::appx_brute(1.12, 3.6, 10'000'000, 40'000'000)) <= 1e-4);
    // Far tail: P N^{1-p} / (p - 1) to leading order.
    CHECK(oracle::relative_error(appx_error(kTheta, 1'000'000'000'000), kTheta.approx_scale * 1e-6 / 0.5) <= 1e-5);
    th.approx_exponent = 0.9;
    CHECK_THROWS_AS(appx_error(th, 10), std::domain_error);
  }

  TEST_CASE("bias error examples") {
    const NqsParams th{2.0, 1.0, 1.0, 0.5, 1.0, 1.0, 0.0};
    CHECK(*bias_error(th, 1, 1) == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(*bias_error(th, 2, 0) == doctest::Approx(1.25).epsilon(1e-14));
    CHECK(oracle::relative_error(*bias_error(kAdamCosine, 100'000, 1000),
                                 static_cast<double>(brute_bias(kAdamCosine, 100'000, 1000))) <= 1e-4);
  }

  TEST_CASE("var error examples") {
    const NqsParams th{2.0, 1.0, 1.0, 0.5, 1.0, 2.0, 0.0};
    CHECK(*var_error(th, 1, 1, 1) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(*var_error(kTheta, 500, 2, 300) == doctest::Approx(*var_error(kTheta, 500, 1, 300) / 2).epsilon(1e-15));
    CHECK(*var_error(kTheta, 500, 2, 0) == 0.0);
    CHECK(oracle::relative_error(*var_error(kAdamCosine, 10'000, 256, 10'000),
                                 static_cast<double>(brute_var(kAdamCosine, 10'000, 256, 10'000))) <= 1e-4);
  }

  TEST_CASE("untrained loss is the full series") {
    NqsParams th = kTheta;
    th.approx_exponent = 2.0;
    th.approx_scale = 1.0;
    th.irreducible = 0.4;
    const double want = 0.4 + std::numbers::pi * std::numbers::pi / 6;
    for (std::int64_t N : {1, 7, 1000, 10'000'000})
      for (std::int64_t B : {1, 256}) CHECK(std::abs(*nqs_loss(th, {N, B, 0, 1}) - want) <= 1e-14);
  }

  TEST_CASE("loss is the sum of its parts") {
    const RunConfig run{10'000'000, 256, 10'000, 128};
    const double parts = kAdamCosine.irreducible + appx_error(kAdamCosine, run.n_params) +
                         *bias_error(kAdamCosine, run.n_params, run.steps) +
                         *var_error(kAdamCosine, run.n_params, run.batch, run.steps);
    CHECK(*nqs_loss(kAdamCosine, run) == doctest::Approx(parts).epsilon(1e-14));
    // Mode-by-mode sum over all 1e7 trained modes.
    const long double brute = kAdamCosine.irreducible + appx_error(kAdamCosine, run.n_params) +
                              brute_bias(kAdamCosine, run.n_params, run.steps) +
                              brute_var(kAdamCosine, run.n_params, run.batch, run.steps);
    CHECK(oracle::relative_error(*nqs_loss(kAdamCosine, run), static_cast<double>(brute)) <= 1e-4);
  }

  TEST_CASE("divergence is flagged at mode 1") {
    NqsParams th = kTheta;
    th.hessian_scale = 2.5;
    const auto e = nqs_loss(th, {100, 4, 10, 1});
    CHECK_FALSE(e.stable());
    CHECK(*e.unstable_mode == 1);
    CHECK_THROWS_AS((void)*e, DivergenceError);
    CHECK(nqs_loss(th, {100, 4, 0, 1}).stable());
    CHECK_FALSE(bias_error(th, 10, 3).stable());
    CHECK_FALSE(var_error(th, 10, 1, 3).stable());
    th.hessian_scale = 1.999;
    CHECK(nqs_loss(th, {100, 4, 10, 1}).stable());
  }

  TEST_CASE("scheduled loss reductions") {
    for (std::int64_t N : {8, 5000}) {
      const RunConfig run{N, 4, 64, 1};
      const double base = *nqs_loss(kTheta, run);
      CHECK(*nqs_loss_scheduled(kTheta, LrSchedule::constant(64), run) == doctest::Approx(base).epsilon(1e-14));
      const LrSchedule halves{{{32, 1.0}, {32, 1.0}}};
      CHECK(*nqs_loss_scheduled(kTheta, halves, run) == doctest::Approx(base).epsilon(1e-13));
    }
    CHECK_THROWS_AS(nqs_loss_scheduled(kTheta, LrSchedule::constant(10), {8, 4, 64, 1}), std::invalid_argument);
  }

  TEST_CASE("scheduled loss against the recurrence") {
    const std::int64_t N = 8, B = 3, K = 32;
    LrSchedule sched;
    for (std::int64_t k = 0; k < K; ++k) sched.segments.push_back({1, k % 2 == 0 ? 0.5 : 1.0});
    const double appx = appx_error(kTheta, N);
    const auto t = oracle::recurrence(kTheta, N, B, K, appx, 1.0, [](std::int64_t k, double) { return k % 2 == 0 ? 0.5 : 1.0; });
    CHECK(oracle::relative_error(*nqs_loss_scheduled(kTheta, sched, {N, B, K, 1}), t.loss[K]) <= 1e-10);
    CHECK(oracle::relative_error(*expected_weight_norm_sq(kTheta, 1.0, sched, {N, B, K, 1}), t.weight_norm[K]) <= 1e-10);
  }

  TEST_CASE("expected weight norm") {
    CHECK(*expected_weight_norm_sq(kTheta, LayerNormConfig{1.7}, {50, 2, 0, 1}) == 1.7);
    // Without noise the norm settles at s + 2 sum (P/Q) n^(q-p).
    const NqsParams quiet{2.0, 1.0, 1.0, 1.0, 1.0, 1e-30, 0.0};
    CHECK(*expected_weight_norm_sq(quiet, LayerNormConfig{0.3}, {1, 1, 10'000, 1}) ==
          doctest::Approx(2.3).epsilon(1e-6));
    const auto t = oracle::recurrence(kTheta, 8, 4, 64, appx_error(kTheta, 8), 0.9, [](std::int64_t, double) { return 1.0; });
    CHECK(oracle::relative_error(*expected_weight_norm_sq(kTheta, LayerNormConfig{0.9}, {8, 4, 64, 1}), t.weight_norm[64]) <=
          1e-10);
  }

  TEST_CASE("layernorm boundaries") {
    CHECK(layernorm_boundaries(0, 4).empty());
    const auto b = layernorm_boundaries(1000, 10);
    CHECK(b.size() == 10);
    CHECK(b.back() == 1000);
    for (std::size_t i = 1; i < b.size(); ++i) {
      CHECK(b[i] > b[i - 1]);
      CHECK(b[i] - b[i - 1] >= b[i - 1] - (i >= 2 ? b[i - 2] : 0) - 1);  // lengths grow
    }
    const auto per_step = layernorm_boundaries(7, 100);
    CHECK(per_step == std::vector<std::int64_t>{1, 2, 3, 4, 5, 6, 7});
  }

  TEST_CASE("layernorm loss") {
    const RunConfig run{8, 2, 64, 1};
    LayerNormConfig ln{0.5};
    ln.n_segments = 64;
    const auto t = oracle::recurrence(kTheta, 8, 2, 64, appx_error(kTheta, 8), 0.5,
                                      [](std::int64_t, double w) { return 0.5 / w; });
    CHECK(oracle::relative_error(*nqs_loss_layernorm(kTheta, ln, run), t.loss[64]) <= 1e-8);

    for (const RunConfig& r : {RunConfig{8, 2, 64, 1}, RunConfig{100'000, 64, 5000, 1}}) {
      LayerNormConfig huge{1e12};
      CHECK(oracle::relative_error(*nqs_loss_layernorm(kTheta, huge, r), *nqs_loss(kTheta, r)) <= 1e-6);
    }
    ln.mode_grid_size = 8;
    CHECK_THROWS_AS(nqs_loss_layernorm(kTheta, ln, run), std::invalid_argument);
  }

  TEST_CASE("layernorm schedule slows down as the norm grows") {
    LayerNormConfig ln{0.05};
    ln.n_segments = 16;
    const auto sched = *layernorm_schedule(kTheta, ln, {4096, 8, 2000, 1});
    CHECK(sched.total_steps() == 2000);
    CHECK(sched.segments.front().gamma == doctest::Approx(1.0));
    for (std::size_t i = 1; i < sched.segments.size(); ++i) CHECK(sched.segments[i].gamma <= sched.segments[i - 1].gamma);
  }

  TEST_CASE("gradient") {
    for (const RunConfig& run : {RunConfig{9, 2, 30, 1}, RunConfig{3'000'000, 64, 20'000, 1}}) {
      const auto g = *nqs_gradient(kTheta, run);
      const auto a = kTheta.to_array();
      for (std::size_t j = 0; j < kNumParams; ++j) {
        const double h = 1e-6 * std::abs(a[j]);
        auto hi = a, lo = a;
        hi[j] += h;
        lo[j] -= h;
        const double fd = (*nqs_loss(NqsParams::from_array(hi), run) - *nqs_loss(NqsParams::from_array(lo), run)) / (2 * h);
        CHECK(g[j] == doctest::Approx(fd).epsilon(1e-6));
      }
      CHECK(g[static_cast<std::size_t>(Param::irreducible)] == 1.0);
      CHECK(nqs_loss_dual(kTheta, run).value.value == doctest::Approx(*nqs_loss(kTheta, run)).epsilon(1e-15));
    }
  }

  TEST_CASE("bias bound ratio stays bounded") {
    const NqsParams th{2.0, 1.0, 1.0, 0.5, 1.0, 1.0, 0.0};
    std::vector<std::int64_t> ks;
    for (int e = 4; e <= 14; ++e) ks.push_back(std::int64_t{1} << e);
    const auto r = *bias_bound_ratio(th, 1'000'000'000, ks);
    REQUIRE(r.size() == ks.size());
    const auto top = std::vector<double>(r.begin() + 5, r.end());
    CHECK(*std::max_element(top.begin(), top.end()) / *std::min_element(top.begin(), top.end()) < 3.0);
    CHECK_THROWS_AS(bias_bound_ratio(th, 10, std::vector<std::int64_t>{0}), std::invalid_argument);
  }

  TEST_CASE("batch evaluator matches single-run evaluation") {
    std::vector<RunConfig> runs;
    std::mt19937_64 rng(5);
    for (int i = 0; i < 60; ++i) {
      const std::int64_t N = std::vector<std::int64_t>{16, 300, 40'000, 5'000'000}[i % 4];
      runs.push_back({N, std::int64_t{1} << (rng() % 8), static_cast<std::int64_t>(rng() % 20000), 1});
    }
    runs.push_back({300, 4, 0, 1});
    const BatchLossEvaluator ev(runs);
    for (const auto& th : nqs_initializations(default_nqs_init_ranges(), 8, 9)) {
      if (th.hessian_scale >= 2.0) continue;
      const auto vals = ev.evaluate(th);
      const auto duals = ev.evaluate_dual(th);
      for (std::size_t i = 0; i < runs.size(); ++i) {
        const auto ref = *nqs_loss_dual(th, runs[i]);
        CHECK(oracle::relative_error(vals[i].value, ref.value) <= 1e-13);
        CHECK(oracle::relative_error(duals[i].value.value, ref.value) <= 1e-13);
        for (std::size_t j = 0; j < kNumParams; ++j)
          CHECK(std::abs(duals[i].value.partials[j] - ref.partials[j]) <=
                1e-11 * std::max(std::abs(ref.partials[j]), 1e-3 * ref.value));
      }
    }
  }
}

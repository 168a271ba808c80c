#include <cmath>
#include <limits>
#include <set>

#include "doctest.h"
#include "nqs/fitting.hpp"
#include "nqs/loss.hpp"
#include "nqs/optim.hpp"
#include "nqs/simulator.hpp"

using namespace nqs;

namespace {

const NqsParams kTheta{1.5, 20.0, 1.0, 1.2, 1.0, 1.0, 1.2};

ScalingDataset exact_data(const NqsParams& th, const std::vector<RunConfig>& runs) {
  ScalingDataset d;
  for (const auto& r : runs) d.append({r, *nqs_loss(th, r), {}, 0, {}});
  return d;
}

}  // namespace

TEST_SUITE("optim") {
  TEST_CASE("huber") {
    CHECK(huber(0.0, 0.0005, 1e-3) == doctest::Approx(1.25e-7).epsilon(1e-12));
    CHECK(huber(0.0, 0.01, 1e-3) == doctest::Approx(9.5e-6).epsilon(1e-12));
    CHECK(huber(0.3, 0.3, 0.5) == 0.0);
    CHECK(huber_derivative(0.0, 0.0005, 1e-3) == doctest::Approx(-0.0005));
    CHECK(huber_derivative(0.0, 0.01, 1e-3) == doctest::Approx(-1e-3));
    CHECK(huber_derivative(0.02, 0.0, 1e-3) == doctest::Approx(1e-3));
  }

  TEST_CASE("latin hypercube stratification") {
    const std::vector<Range> box(3, Range{0.0, 4.0});
    const auto pts = latin_hypercube(box, 4, 11);
    REQUIRE(pts.size() == 4);
    for (std::size_t d = 0; d < 3; ++d) {
      std::set<int> strata;
      for (const auto& p : pts) strata.insert(static_cast<int>(std::floor(p[d])));
      CHECK(strata == std::set<int>{0, 1, 2, 3});
    }
    CHECK(latin_hypercube(box, 4, 11) == pts);
    CHECK(latin_hypercube(box, 4, 12) != pts);

    const auto big = latin_hypercube(default_nqs_init_ranges(), 1000, 5);
    const auto ranges = default_nqs_init_ranges();
    for (std::size_t d = 0; d < ranges.size(); ++d) {
      std::vector<int> count(1000, 0);
      for (const auto& p : big) {
        const double u = (p[d] - ranges[d].low) / (ranges[d].high - ranges[d].low);
        const int k = std::min(999, static_cast<int>(u * 1000));
        ++count[static_cast<std::size_t>(k)];
      }
      CHECK(std::count(count.begin(), count.end(), 1) == 1000);
    }
  }

  TEST_CASE("initializations square the noise-scale draw") {
    auto ranges = default_nqs_init_ranges();
    const auto inits = nqs_initializations(ranges, 50, 3);
    for (const auto& th : inits) {
      CHECK(th.noise_scale >= 0.01 - 1e-12);
      CHECK(th.noise_scale <= 100.0 + 1e-9);
      CHECK(th.approx_exponent >= 1.05);
    }
  }

  TEST_CASE("adam with clipping") {
    Adam opt(2, 0.1, 1.0);
    std::vector<double> x{3.0, -2.0};
    for (int i = 0; i < 500; ++i) {
      const std::vector<double> g{2 * x[0] * 100, 2 * x[1]};
      opt.step(x, g);
    }
    CHECK(std::abs(x[0]) < 1e-2);
    CHECK(std::abs(x[1]) < 1e-2);
    CHECK(opt.iterations() == 500);
  }

  TEST_CASE("config validation") {
    FitConfig c;
    CHECK_NOTHROW(c.validate());
    c.n_inits = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  }

  TEST_CASE("parallel_for visits every index once") {
    std::vector<int> seen(257, 0);
    parallel_for(seen.size(), 4, [&](std::size_t i) { ++seen[i]; });
    CHECK(std::count(seen.begin(), seen.end(), 1) == 257);
  }
}

TEST_SUITE("fitting") {
  TEST_CASE("objective") {
    const auto data = exact_data(kTheta, {{100, 4, 100, 1}, {1000, 8, 500, 1}, {64, 1, 0, 1}});
    CHECK(nqs_objective(kTheta, data, 1e-3).value <= 1e-12);
    CHECK(nqs_objective(kTheta, data, 1e-3).penalized == 0);
    NqsParams wild = kTheta;
    wild.hessian_scale = 3.0;
    const auto pen = nqs_objective(wild, data, 1e-3, Residual::huber, 1e6);
    CHECK(pen.penalized == 2);
    CHECK(pen.value >= 1e6 / 3.0);
    // Squared residuals.
    ScalingDataset off = data;
    for (auto& r : off.records) r.loss *= std::exp(0.1);
    CHECK(nqs_objective(kTheta, off, 1e-3, Residual::squared).value == doctest::Approx(0.01).epsilon(1e-9));
  }

  TEST_CASE("objective gradient in unconstrained coordinates") {
    ScalingDataset data = exact_data(kTheta, {{100, 4, 100, 1}, {3000, 8, 500, 1}, {20000, 32, 4000, 1}});
    for (auto& r : data.records) r.loss *= 1.01;
    const NqsObjective obj(data, 1e-3, Residual::huber, 1e6);
    NqsParams start = kTheta;
    start.hessian_scale = 0.7;
    const auto u = to_unconstrained(start);
    const auto og = obj(u);
    CHECK(og.value == doctest::Approx(nqs_objective(start, data, 1e-3).value).epsilon(1e-12));
    for (std::size_t j = 0; j < kNumParams; ++j) {
      const double h = 1e-6;
      auto hi = u, lo = u;
      hi[j] += h;
      lo[j] -= h;
      const double fd = (obj(hi).value - obj(lo).value) / (2 * h);
      CHECK(og.grad[j] == doctest::Approx(fd).epsilon(1e-5).scale(1e-9));
    }
    const auto back = from_unconstrained(u);
    for (std::size_t j = 0; j < kNumParams; ++j)
      CHECK(back.to_array()[j] == doctest::Approx(start.to_array()[j]).epsilon(1e-14));
  }

  TEST_CASE("small-batch filter") {
    ScalingDataset d;
    d.append({{512, 8, 100, 1}, 3.00, {}, 0, {}});
    d.append({{512, 4, 200, 1}, 2.99, {}, 0, {}});
    auto f = filter_small_batch(d, 0.05);
    CHECK(f.kept.size() == 1);
    CHECK(f.removed_rows == std::vector<std::size_t>{1});
    CHECK(f.kept.records[0].run.batch == 4);

    d.records[1].loss = 2.90;
    f = filter_small_batch(d, 0.05);
    CHECK(f.kept.size() == 2);
    CHECK(f.removed_rows.empty());

    ScalingDataset lone;
    lone.append({{512, 8, 100, 1}, 3.00, {}, 0, {}});
    lone.append({{512, 4, 300, 1}, 3.00, {}, 0, {}});  // not the (B/2, 2K) neighbour
    CHECK(filter_small_batch(lone).kept.size() == 2);
  }

  TEST_CASE("fit recovers noiseless data") {
    // Three decades in N and K, two in B.
    std::vector<RunConfig> train, held;
    for (std::int64_t N : {64, 512, 4096, 32768})
      for (std::int64_t B : {1, 10, 100})
        for (std::int64_t K : {30, 300, 3000}) (train.size() < 40 ? train : held).push_back({N, B, K, 1});
    for (std::int64_t N : {128, 2048, 16384, 65536})
      for (std::int64_t B : {3, 30})
        for (std::int64_t K : {100, 1000, 10000}) {
          if (held.size() < 20) held.push_back({N, B, K, 1});
        }
    FitConfig cfg;
    cfg.n_inits = 64;
    cfg.n_iters = 1500;
    cfg.seed = 21;
    const auto rep = fit_nqs(exact_data(kTheta, train), cfg);
    CHECK(train.size() >= 36);
    CHECK(held.size() == 20);
    CHECK(nqs_objective(rep.best_theta, exact_data(kTheta, held), 1e-3).value <= 1e-5);
    double min_obj = std::numeric_limits<double>::infinity();
    for (const auto& o : rep.per_init) min_obj = std::min(min_obj, o.objective);
    CHECK(rep.best_objective == min_obj);
    CHECK(rep.per_init.size() == 64);
    CHECK(rep.seed == 21);
  }

  TEST_CASE("fit determinism and degenerate data") {
    const auto data = exact_data(kTheta, {{100, 4, 100, 1}, {1000, 8, 500, 1}, {10000, 8, 2000, 1}});
    FitConfig cfg;
    cfg.n_inits = 6;
    cfg.n_iters = 200;
    cfg.seed = 4;
    cfg.threads = 3;
    const auto a = fit_nqs(data, cfg);
    cfg.threads = 1;
    const auto b = fit_nqs(data, cfg);
    CHECK(a.best_theta == b.best_theta);
    CHECK(a.best_objective == b.best_objective);
    CHECK(a.per_init.size() == b.per_init.size());
    for (std::size_t i = 0; i < a.per_init.size(); ++i) CHECK(a.per_init[i].theta == b.per_init[i].theta);
    CHECK_FALSE(a.warnings.empty());  // fewer records than parameters

    const auto one = fit_nqs(data.subset({0}), cfg);
    CHECK_FALSE(one.warnings.empty());
    CHECK(std::isfinite(one.best_objective));
  }

  TEST_CASE("fit fails when every start diverges") {
    const auto data = exact_data(kTheta, {{100, 4, 100, 1}, {1000, 8, 500, 1}});
    FitConfig cfg;
    cfg.n_inits = 3;
    cfg.n_iters = 1;
    cfg.lr = 1e-12;
    auto ranges = default_nqs_init_ranges();
    ranges[static_cast<std::size_t>(Param::hessian_scale)] = {50.0, 60.0};
    cfg.init_ranges = ranges;
    CHECK_THROWS_AS(fit_nqs(data, cfg), FitError);
  }

  TEST_CASE("s selection") {
    CHECK(default_s_grid(1.0).size() == 9);
    CHECK(default_s_grid(1.0).front() == doctest::Approx(1.0 / 16));
    CHECK(default_s_grid(1.0).back() == doctest::Approx(16.0));

    ScalingDataset data;
    for (std::int64_t B : {1, 4})
      for (std::int64_t K : {32, 128}) {
        SimConfig c;
        c.theta = kTheta;
        c.run = {8, B, K, 1};
        c.s = 3.0;
        c.feedback = NormFeedback::expected;
        data.append({c.run, deterministic_moments(c).loss, {}, 0, {}});
      }
    LayerNormConfig ln;
    ln.n_segments = 1 << 20;
    CHECK(select_s(kTheta, data, {7.5}, ln).s == 7.5);
    const auto sel = select_s(kTheta, data, default_s_grid(3.0), ln);
    CHECK(sel.s == doctest::Approx(3.0));
    CHECK(sel.curve.size() == 9);
    // Per-parameter scaling multiplies by N = 8.
    const auto per = select_s(kTheta, data, default_s_grid(3.0 / 8), ln, SScaling::per_parameter);
    CHECK(per.s == doctest::Approx(3.0 / 8));
    CHECK_THROWS_AS(select_s(kTheta, ScalingDataset{}, {1.0}, ln), std::invalid_argument);
  }

  TEST_CASE("quantiles") {
    CHECK(empirical_quantile({3, 1, 2}, 0.5) == 2.0);
    CHECK(empirical_quantile({1, 2, 3, 4}, 0.5) == 2.5);
    CHECK(empirical_quantile({1, 2, 3, 4}, 0.0) == 1.0);
    CHECK(empirical_quantile({1, 2, 3, 4}, 1.0) == 4.0);
  }

  TEST_CASE("bootstrap intervals") {
    const std::vector<RunConfig> queries = {{300, 4, 300, 1}, {5000, 16, 2000, 1}};
    FitConfig cfg;
    cfg.n_inits = 3;
    cfg.n_iters = 100;
    cfg.seed = 2;

    // No sampling variability: every subsample is the same multiset.
    ScalingDataset same;
    for (int i = 0; i < 12; ++i) same.append({{1000, 8, 500, 1}, *nqs_loss(kTheta, {1000, 8, 500, 1}), {}, 0, {}});
    const auto flat = bootstrap_ci(same, cfg, queries, 5, 0.5, 0.9);
    for (const auto& iv : flat.intervals) CHECK(iv.lo == iv.hi);

    // level 0 collapses to the median of the trial predictions.
    const auto data = exact_data(kTheta, {{100, 4, 100, 1}, {1000, 8, 500, 1}, {10000, 8, 2000, 1}, {300, 2, 50, 1},
                                          {3000, 32, 800, 1}, {30000, 16, 8000, 1}, {64, 1, 10, 1}, {640, 64, 64, 1}});
    const auto med = bootstrap_ci(data, cfg, queries, 5, 0.5, 0.0);
    REQUIRE(med.predictions.size() == 5);
    for (std::size_t q = 0; q < queries.size(); ++q) {
      std::vector<double> col;
      for (const auto& t : med.predictions) col.push_back(t[q]);
      CHECK(med.intervals[q].lo == empirical_quantile(col, 0.5));
      CHECK(med.intervals[q].hi == med.intervals[q].lo);
    }
    // Subsamples of 4 records draw a warning per trial.
    CHECK(med.warnings.size() >= 5);
  }
}

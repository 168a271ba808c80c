#include <algorithm>
#include <cmath>
#include <limits>

#include "doctest.h"
#include "nqs/allocator.hpp"
#include "nqs/loss.hpp"

using namespace nqs;

namespace {

const NqsParams kTheta{1.5, 20.0, 1.0, 1.2, 1.0, 1.0, 1.2};

GridSpec small_grid() {
  return {Axis::log_spaced(64, 65536, 8), Axis::log_spaced(1, 256, 8), Axis::log_spaced(10, 100000, 8)};
}

}  // namespace

TEST_SUITE("allocator") {
  TEST_CASE("axes") {
    const auto a = Axis::log_spaced(1, 1000, 3);
    CHECK(a.values == std::vector<std::int64_t>{1, 2, 5, 10, 22, 46, 100, 215, 464, 1000});
    CHECK(Axis::from_values({5, 3, 5, 1}).values == std::vector<std::int64_t>{1, 3, 5});
    CHECK_THROWS(Axis::from_values({0, 2}));
  }

  TEST_CASE("constraints") {
    ConstraintSet c;
    c.compute_max = 6e6;
    c.memory_max = 1000;
    c.data_max = 5000;
    c.time_max = 1e5;
    c.seq_len = 2;
    const RunConfig run{100, 10, 100, 2};
    CHECK(c.satisfied(run, Constraint::compute));  // 6*100*10*100*2 = 1.2e6
    CHECK(c.satisfied(run, Constraint::memory));   // 1000
    CHECK(c.satisfied(run, Constraint::data));     // 2000
    CHECK(c.satisfied(run, Constraint::time));     // 1e4
    c.time_rule = TimeRule::steps_only;
    CHECK(c.satisfied(run, Constraint::time));
    c.time_max = 50;
    CHECK_FALSE(c.satisfied(run, Constraint::time));
    CHECK_FALSE(c.feasible(run));
    CHECK(c.active().size() == 4);
    ConstraintSet only;
    only.compute_max = 1e3;
    CHECK(only.satisfied(run, Constraint::memory));
    CHECK(only.active() == std::vector<Constraint>{Constraint::compute});
    ConstraintSet bad;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    CHECK(std::string(to_string(Constraint::memory)) == "memory");
  }

  TEST_CASE("search matches a scan") {
    const auto grid = small_grid();
    ConstraintSet c;
    c.compute_max = 1e12;
    c.memory_max = 3e5;
    const auto model = LossModel::nqs(kTheta);
    const auto r = constrained_search(model, c, grid);
    double best = std::numeric_limits<double>::infinity();
    RunConfig arg;
    std::size_t feasible = 0;
    for (auto N : grid.n_params.values)
      for (auto B : grid.batch.values)
        for (auto K : grid.steps.values) {
          const RunConfig run{N, B, K, 1};
          if (6.0 * N * B * K > 1e12 || double(B) * N > 3e5) continue;
          ++feasible;
          const double l = *nqs_loss(kTheta, run);
          if (l < best) {
            best = l;
            arg = run;
          }
        }
    REQUIRE(r.found());
    CHECK(*r.best == arg);
    CHECK(r.best_loss == best);
    CHECK(r.feasible_count == feasible);
    CHECK(constrained_search(model, c, grid, 1).best == r.best);
    CHECK(constrained_search(model, c, grid, 4).best == r.best);
  }

  TEST_CASE("single feasible point") {
    const GridSpec grid{Axis::from_values({10, 100}), Axis::from_values({1, 2}), Axis::from_values({5, 50})};
    ConstraintSet c;
    c.compute_max = 6.0 * 10 * 1 * 5;
    const auto r = constrained_search(LossModel::nqs(kTheta), c, grid);
    REQUIRE(r.found());
    CHECK(*r.best == RunConfig{10, 1, 5, 1});
    CHECK(r.feasible_count == 1);
  }

  TEST_CASE("ties go to the smaller configuration") {
    const ChinParams flat{2.0, 0.0, 1.0, 0.0, 1.5};
    const GridSpec grid{Axis::from_values({10, 100}), Axis::from_values({1, 2}), Axis::from_values({5, 50})};
    ConstraintSet c;
    c.compute_max = 1e9;
    const auto r = constrained_search(LossModel::chinchilla(flat), c, grid);
    CHECK(*r.best == RunConfig{10, 1, 5, 1});
    CHECK(r.best_loss == 1.5);
  }

  TEST_CASE("infeasible sets name the binding constraint") {
    const auto grid = small_grid();
    ConstraintSet c;
    c.compute_max = 1e15;
    c.memory_max = 10;  // below the smallest N*B = 64
    const auto r = constrained_search(LossModel::nqs(kTheta), c, grid);
    CHECK_FALSE(r.found());
    CHECK(r.feasible_count == 0);
    CHECK(r.binding == std::vector<Constraint>{Constraint::memory});

    ConstraintSet tiny;
    tiny.compute_max = 10;
    CHECK(constrained_search(LossModel::nqs(kTheta), tiny, grid).binding == std::vector<Constraint>{Constraint::compute});
  }

  TEST_CASE("unstable points are skipped") {
    NqsParams hot = kTheta;
    hot.hessian_scale = 3.0;
    const GridSpec grid{Axis::from_values({10}), Axis::from_values({1}), Axis::from_values({1, 5})};
    ConstraintSet c;
    c.compute_max = 1e9;
    const auto r = constrained_search(LossModel::nqs(hot), c, grid);
    CHECK(r.unstable_count == 2);
    CHECK(r.feasible_count == 2);
    CHECK_FALSE(r.found());
  }

  TEST_CASE("isoflop slice") {
    const double C = 6e11;
    ConstraintSet c;
    c.compute_max = C;
    const auto n_axis = Axis::log_spaced(100, 1e6, 4);
    const auto fixed = isoflop_slice(LossModel::nqs(kTheta), C, c, n_axis, {SliceBatch::fixed, 16, {}});
    REQUIRE_FALSE(fixed.rows.empty());
    for (const auto& row : fixed.rows) {
      CHECK(row.run.batch == 16);
      CHECK(row.run.steps == std::llround(C / (6.0 * row.run.n_params * 16)));
      CHECK(row.loss == *nqs_loss(kTheta, row.run));
    }
    for (std::size_t i = 1; i < fixed.rows.size(); ++i) CHECK(fixed.rows[i].run.n_params > fixed.rows[i - 1].run.n_params);

    const auto best = isoflop_slice(LossModel::nqs(kTheta), C, c, n_axis,
                                    {SliceBatch::best, 1, Axis::log_spaced(1, 1024, 3)});
    // A fixed batch runs out of steps at large N; a free batch does not.
    CHECK(best.rows.size() >= fixed.rows.size());
    for (const auto& row : fixed.rows) {
      const auto it = std::find_if(best.rows.begin(), best.rows.end(),
                                   [&](const SliceRow& b) { return b.run.n_params == row.run.n_params; });
      REQUIRE(it != best.rows.end());
      CHECK(it->loss <= row.loss);
    }

    ConstraintSet mem = c;
    mem.memory_max = 16 * 1000;
    const auto limited = isoflop_slice(LossModel::nqs(kTheta), C, mem, n_axis, {SliceBatch::fixed, 16, {}});
    CHECK(limited.rows.size() < fixed.rows.size());
    CHECK_FALSE(limited.notes.empty());
  }
}

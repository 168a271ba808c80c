#include <cmath>
#include <limits>
#include <sstream>

#include "doctest.h"
#include "nqs/io.hpp"

using namespace nqs;

TEST_SUITE("io") {
  TEST_CASE("reads a small file") {
    std::istringstream in(
        "n_params,batch,steps,seq_len,loss,tags,note\n"
        "1000,4,100,16,2.5,isoflops;level=0,a\n"
        "1e6,8,2e3,16,1.25,,b c\n"
        "2000,4,100,16,2.0,x,\n");
    const auto d = read_dataset(in);
    REQUIRE(d.size() == 3);
    CHECK(d.records[1].run == RunConfig{1000000, 8, 2000, 16});
    CHECK(d.records[0].has_tag("level=0"));
    CHECK(d.records[0].tags.size() == 2);
    CHECK(d.records[1].tags.empty());
    CHECK(d.records[2].row == 3);
    CHECK(d.extra_columns == std::vector<std::string>{"note"});
    CHECK(d.records[1].extra.at("note") == "b c");
  }

  TEST_CASE("bad rows are reported with their row") {
    std::istringstream neg(
        "n_params,batch,steps,seq_len,loss\n"
        "1000,4,100,16,2.5\n"
        "1000,4,100,16,-1\n");
    try {
      read_dataset(neg);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(e.row() == 2);
      CHECK(std::string(e.what()).find("row 2") != std::string::npos);
    }
    std::istringstream missing("n_params,batch,steps,loss\n1000,4,100,2.5\n");
    try {
      read_dataset(missing);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(e.row() == 0);
      CHECK(std::string(e.what()).find("seq_len") != std::string::npos);
    }
    std::istringstream frac("n_params,batch,steps,seq_len,loss\n1000.5,4,100,16,2.5\n");
    CHECK_THROWS_AS(read_dataset(frac), DataError);
    std::istringstream junk("n_params,batch,steps,seq_len,loss\n1000,4,100,16,abc\n");
    CHECK_THROWS_AS(read_dataset(junk), DataError);
  }

  TEST_CASE("dataset round trip") {
    ScalingDataset d;
    d.extra_columns = {"note"};
    d.append({{1000, 4, 100, 16}, 2.0 / 3.0, {"a", "b"}, 1, {{"note", "x"}}});
    d.append({{123456789, 1, 1, 1}, 1e-7, {}, 2, {{"note", ""}}});
    std::stringstream io;
    write_dataset(io, d);
    CHECK(read_dataset(io) == d);
  }

  TEST_CASE("format_double") {
    CHECK(format_double(0.5) == "0.5");
    CHECK(format_double(1e20) == "1e+20");
    for (double x : {0.1, 1.0 / 3.0, 2.718281828459045, 1e-300, 6.02214076e23}) CHECK(std::stod(format_double(x)) == x);
  }

  TEST_CASE("report round trip") {
    Report r;
    r.tool_version = "test";
    r.command = "fit";
    r.nqs = NqsParams{1.12, 3.6, 0.59, 0.93, 1.5, 4.3, 0.45};
    r.nqs_objective = 1.0 / 7.0;
    r.chinchilla = ChinParams{1.4, 30.0, 0.9, 8.0, 1.1};
    r.seed = 42;
    r.config.n_inits = 12;
    r.filter_removed = {3, 9};
    r.warnings = {"few records"};
    LayerNormReport ln;
    ln.s = 0.25;
    ln.scaling = SScaling::per_parameter;
    ln.curve = {{0.1, 2.0}, {0.25, 1.5}};
    r.layernorm = ln;
    std::stringstream io;
    write_report(io, r);
    const auto back = read_report(io);
    CHECK(back.nqs->approx_exponent == r.nqs->approx_exponent);
    CHECK(back.nqs->irreducible == r.nqs->irreducible);
    CHECK(*back.nqs_objective == *r.nqs_objective);
    CHECK(back.chinchilla->irreducible == 1.1);
    CHECK(back.seed == 42);
    CHECK(back.config.n_inits == 12);
    CHECK(back.filter_removed == r.filter_removed);
    CHECK(back.warnings == r.warnings);
    REQUIRE(back.layernorm);
    CHECK(back.layernorm->curve == ln.curve);
    CHECK(back.layernorm->for_run(100).s == doctest::Approx(25.0));

    std::istringstream wrong(R"({"version": 99})");
    CHECK_THROWS_AS(read_report(wrong), IoError);
    std::istringstream garbage("not json");
    CHECK_THROWS_AS(read_report(garbage), IoError);
  }
}

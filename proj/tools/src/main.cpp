// nqs command-line front end.

#include <CLI11.hpp>
#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "nqs/allocator.hpp"
#include "nqs/chinchilla.hpp"
#include "nqs/fitting.hpp"
#include "nqs/io.hpp"
#include "nqs/loss.hpp"
#include "nqs/simulator.hpp"
#include "nqs/version.hpp"

namespace {

using namespace nqs;

// Failure with a category for the one-line error message.
struct CliError : std::runtime_error {
  CliError(std::string category, const std::string& what, int code)
      : std::runtime_error(what), category(std::move(category)), code(code) {}
  std::string category;
  int code;
};

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitInfeasible = 4;
constexpr int kExitFit = 5;

CliError usage(const std::string& what) { return {"usage", what, kExitUsage}; }

double parse_quantity(const std::string& text) {
  std::string t = text;
  double scale = 1.0;
  if (t.size() > 2) {
    std::string tail = t.substr(t.size() - 2);
    std::transform(tail.begin(), tail.end(), tail.begin(), [](unsigned char c) { return std::toupper(c); });
    if (tail == "PF") {
      scale = 1e15;
      t.resize(t.size() - 2);
    }
  }
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size())
    throw usage("cannot parse quantity '" + text + "'");
  return v * scale;
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_quantity(item));
  return out;
}

NqsParams theta_from_list(const std::string& text) {
  const auto v = parse_list(text);
  if (v.size() != kNumParams) throw usage("--theta needs 7 values p,P,q,Q,r,R,e_irr");
  NqsParams th = NqsParams::from_array({v[0], v[1], v[2], v[3], v[4], v[5], v[6]});
  validate(th);
  return th;
}

std::ostream& open_out(const std::string& path, std::ofstream& file) {
  if (path.empty() || path == "-") return std::cout;
  file.open(path);
  if (!file) throw CliError("io", "cannot write '" + path + "'", 1);
  return file;
}

struct Common {
  std::uint64_t seed = 0;
  unsigned threads = 0;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Random seed");
  cmd->add_option("--threads", c.threads, "Worker threads (0: NQS_THREADS or all cores)");
}

struct FitFlags {
  std::string config_path;
  std::optional<std::int64_t> inits, iters;
  std::optional<double> lr, clip, delta;
};

void add_fit_flags(CLI::App* cmd, FitFlags& f) {
  cmd->add_option("--config", f.config_path, "JSON file with fit settings")->check(CLI::ExistingFile);
  cmd->add_option("--inits", f.inits, "Number of initializations");
  cmd->add_option("--iters", f.iters, "Adam iterations per initialization");
  cmd->add_option("--lr", f.lr, "Adam learning rate");
  cmd->add_option("--clip", f.clip, "Per-component gradient clip");
  cmd->add_option("--delta", f.delta, "Huber delta on log loss");
}

FitConfig make_fit_config(const FitFlags& f, const Common& c) {
  FitConfig cfg;
  if (!f.config_path.empty()) {
    std::ifstream in(f.config_path);
    try {
      const auto j = nlohmann::json::parse(in);
      cfg.n_inits = j.value("n_inits", cfg.n_inits);
      cfg.n_iters = j.value("n_iters", cfg.n_iters);
      cfg.lr = j.value("lr", cfg.lr);
      cfg.clip = j.value("clip", cfg.clip);
      cfg.huber_delta = j.value("huber_delta", cfg.huber_delta);
      cfg.penalty = j.value("penalty", cfg.penalty);
      cfg.refine = j.value("refine", cfg.refine);
      if (j.contains("residual")) {
        const auto r = j["residual"].get<std::string>();
        if (r != "huber" && r != "squared") throw usage("config: residual must be huber or squared");
        cfg.residual = r == "huber" ? Residual::huber : Residual::squared;
      }
      if (j.contains("init_ranges"))
        for (const auto& r : j["init_ranges"]) cfg.init_ranges.push_back({r.at(0).get<double>(), r.at(1).get<double>()});
    } catch (const nlohmann::json::exception& e) {
      throw usage(std::string("config: ") + e.what());
    }
  }
  if (f.inits) cfg.n_inits = *f.inits;
  if (f.iters) cfg.n_iters = *f.iters;
  if (f.lr) cfg.lr = *f.lr;
  if (f.clip) cfg.clip = *f.clip;
  if (f.delta) cfg.huber_delta = *f.delta;
  cfg.seed = c.seed;
  cfg.threads = c.threads;
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw usage(e.what());
  }
  return cfg;
}

ScalingDataset read_data(const std::string& path) {
  try {
    return load_dataset(path);
  } catch (const DataError& e) {
    throw CliError("data", path + ": " + e.what(), kExitData);
  }
}

// ---- fit ---------------------------------------------------------------------

struct FitCmd {
  Common common;
  FitFlags flags;
  std::string data, out, small_batch, s_grid, s_scaling = "per_parameter";
  double s_anchor = 0.02 * 0.02;
  bool no_filter = false;
  double filter_margin = 0.05;
  std::int64_t ln_segments = 64;
};

int run_fit(const FitCmd& c) {
  auto data = read_data(c.data);
  const auto cfg = make_fit_config(c.flags, c.common);
  Report report;
  report.command = "fit";
  report.seed = cfg.seed;
  report.config = cfg;
  if (!c.no_filter) {
    auto filtered = filter_small_batch(data, c.filter_margin);
    report.filter_removed = filtered.removed_rows;
    data = std::move(filtered.kept);
  }
  if (data.empty()) throw CliError("data", "no records left after filtering", kExitData);
  FitReport fit;
  try {
    fit = fit_nqs(data, cfg);
  } catch (const FitError& e) {
    throw CliError("fit", e.what(), kExitFit);
  }
  report.nqs = fit.best_theta;
  report.nqs_objective = fit.best_objective;
  report.warnings = fit.warnings;

  if (!c.small_batch.empty()) {
    const auto sb = read_data(c.small_batch);
    if (c.s_scaling != "absolute" && c.s_scaling != "per_parameter")
      throw usage("--s-scaling must be absolute or per_parameter");
    const auto scaling = c.s_scaling == "absolute" ? SScaling::absolute : SScaling::per_parameter;
    const auto grid = c.s_grid.empty() ? default_s_grid(c.s_anchor) : parse_list(c.s_grid);
    LayerNormConfig ln;
    ln.n_segments = c.ln_segments;
    const auto sel = select_s(fit.best_theta, sb, grid, ln, scaling, cfg.huber_delta, cfg.residual);
    report.layernorm = LayerNormReport{sel.s, scaling, ln, sel.curve};
  }

  std::ofstream file;
  if (c.out.empty()) throw usage("--out is required");
  std::ostream& os = open_out(c.out, file);
  write_report(os, report);
  std::cerr << "objective " << format_double(fit.best_objective) << " over " << data.size() << " records\n";
  for (const auto& w : fit.warnings) std::cerr << "warning: " << w << '\n';
  return 0;
}

// ---- predict -----------------------------------------------------------------

struct PredictCmd {
  std::string report, data, out, model = "nqs";
  std::optional<std::int64_t> n, batch, steps;
  std::int64_t seq_len = 1;
  bool layernorm = false;
};

LossModel model_from_report(const Report& r, const std::string& which, bool layernorm, std::int64_t n_params) {
  if (which == "chinchilla") {
    if (!r.chinchilla) throw usage("report has no chinchilla parameters");
    if (layernorm) throw usage("--layernorm applies to the nqs model only");
    return LossModel::chinchilla(*r.chinchilla);
  }
  if (which != "nqs") throw usage("--model must be nqs or chinchilla");
  if (!r.nqs) throw usage("report has no nqs parameters");
  if (!layernorm) return LossModel::nqs(*r.nqs);
  if (!r.layernorm) throw usage("report has no selected s; fit with --small-batch-data");
  return LossModel::nqs(*r.nqs, r.layernorm->for_run(n_params));
}

Report read_report_file(const std::string& path) {
  try {
    return load_report(path);
  } catch (const IoError& e) {
    throw CliError("io", e.what(), 1);
  }
}

int run_predict(const PredictCmd& c) {
  const auto report = read_report_file(c.report);
  std::vector<RunConfig> runs;
  ScalingDataset data;
  const bool single = c.n || c.batch || c.steps;
  if (single && !c.data.empty()) throw usage("give either --data or --n/--batch/--steps");
  if (single) {
    if (!c.n || !c.batch || !c.steps) throw usage("--n, --batch and --steps go together");
    runs.push_back({*c.n, *c.batch, *c.steps, c.seq_len});
  } else if (!c.data.empty()) {
    data = read_data(c.data);
    runs = data.runs();
  } else {
    throw usage("nothing to predict: pass --data or --n/--batch/--steps");
  }

  std::ofstream file;
  std::ostream& os = open_out(c.out, file);
  os << "n_params,batch,steps,seq_len,predicted_loss\n";
  std::size_t nonpositive = 0;
  for (const auto& run : runs) {
    validate(run);
    const auto model = model_from_report(report, c.model, c.layernorm, run.n_params);
    const auto e = model(run);
    os << run.n_params << ',' << run.batch << ',' << run.steps << ',' << run.seq_len << ','
       << (e ? format_double(e.value) : std::string("diverged")) << '\n';
    if (e && !(e.value > 0.0)) ++nonpositive;
  }
  if (nonpositive > 0)
    std::cerr << "warning: " << nonpositive << " predicted losses are <= 0; the fitted parameters do not extrapolate here\n";
  return 0;
}

// ---- allocate / isoflop ------------------------------------------------------

struct GridFlags {
  double n_min = 1e6, n_max = 1e10, b_min = 1, b_max = 4096, k_min = 1, k_max = 1e6, ppd = 16;
};

void add_grid_flags(CLI::App* cmd, GridFlags& g, bool with_bk) {
  cmd->add_option("--n-min", g.n_min, "Smallest model size");
  cmd->add_option("--n-max", g.n_max, "Largest model size");
  cmd->add_option("--points-per-decade", g.ppd, "Grid density");
  if (!with_bk) return;
  cmd->add_option("--b-min", g.b_min, "Smallest batch");
  cmd->add_option("--b-max", g.b_max, "Largest batch");
  cmd->add_option("--k-min", g.k_min, "Fewest steps");
  cmd->add_option("--k-max", g.k_max, "Most steps");
}

struct AllocateCmd {
  Common common;
  GridFlags grid;
  std::string report, model = "nqs", compute_max, time_max, memory_max, data_max, time_rule = "nk", out;
  std::int64_t seq_len = 1;
  bool layernorm = false;
};

ConstraintSet make_constraints(const std::string& compute, const std::string& time, const std::string& memory,
                               const std::string& data, const std::string& time_rule, std::int64_t seq_len) {
  ConstraintSet cons;
  cons.compute_max = compute.empty() ? 0.0 : parse_quantity(compute);
  if (!time.empty()) cons.time_max = parse_quantity(time);
  if (!memory.empty()) cons.memory_max = parse_quantity(memory);
  if (!data.empty()) cons.data_max = parse_quantity(data);
  if (time_rule != "nk" && time_rule != "k") throw usage("--time-rule must be nk or k");
  cons.time_rule = time_rule == "nk" ? TimeRule::params_times_steps : TimeRule::steps_only;
  cons.seq_len = seq_len;
  try {
    cons.validate();
  } catch (const std::invalid_argument& e) {
    throw usage(e.what());
  }
  return cons;
}

int run_allocate(const AllocateCmd& c) {
  const auto report = read_report_file(c.report);
  const auto cons = make_constraints(c.compute_max, c.time_max, c.memory_max, c.data_max, c.time_rule, c.seq_len);
  if (c.layernorm && report.layernorm && report.layernorm->scaling == SScaling::per_parameter)
    throw usage("--layernorm with per-parameter s is not supported by allocate; use isoflop");
  const auto model = model_from_report(report, c.model, c.layernorm, 1);
  const GridSpec grid{Axis::log_spaced(c.grid.n_min, c.grid.n_max, c.grid.ppd),
                      Axis::log_spaced(c.grid.b_min, c.grid.b_max, c.grid.ppd),
                      Axis::log_spaced(c.grid.k_min, c.grid.k_max, c.grid.ppd)};
  const auto res = constrained_search(model, cons, grid, c.common.threads);
  if (!res.found()) {
    if (res.feasible_count > 0)
      throw CliError("diverged", "model diverges at all " + std::to_string(res.feasible_count) + " feasible points",
                     kExitInfeasible);
    std::string names;
    for (auto b : res.binding) names += (names.empty() ? "" : ",") + std::string(to_string(b));
    throw CliError("infeasible", "no grid point satisfies the constraints; binding: " + names, kExitInfeasible);
  }
  std::ofstream file;
  std::ostream& os = open_out(c.out, file);
  const auto& b = *res.best;
  os << "n_params,batch,steps,seq_len,compute,predicted_loss,feasible_points\n"
     << b.n_params << ',' << b.batch << ',' << b.steps << ',' << b.seq_len << ',' << format_double(b.compute()) << ','
     << format_double(res.best_loss) << ',' << res.feasible_count << '\n';
  if (!(res.best_loss > 0.0))
    std::cerr << "warning: best predicted loss is <= 0; the model is extrapolating beyond where its fit holds\n";
  return 0;
}

struct IsoflopCmd {
  Common common;
  GridFlags grid;
  std::string report, model = "nqs", compute, time_max, memory_max, data_max, time_rule = "nk", out;
  std::int64_t seq_len = 1;
  std::optional<std::int64_t> batch;
  bool best_batch = false, layernorm = false;
};

int run_isoflop(const IsoflopCmd& c) {
  const auto report = read_report_file(c.report);
  if (c.compute.empty()) throw usage("--compute is required");
  if (c.batch.has_value() == c.best_batch) throw usage("pass exactly one of --batch and --best-batch");
  const auto cons = make_constraints(c.compute, c.time_max, c.memory_max, c.data_max, c.time_rule, c.seq_len);
  SliceSpec spec;
  if (c.best_batch) {
    spec.rule = SliceBatch::best;
    spec.batch_axis = Axis::log_spaced(c.grid.b_min, c.grid.b_max, c.grid.ppd);
  } else {
    spec.batch = *c.batch;
  }
  const auto n_axis = Axis::log_spaced(c.grid.n_min, c.grid.n_max, c.grid.ppd);

  std::ofstream file;
  std::ostream& os = open_out(c.out, file);
  os << "n_params,batch,steps,seq_len,predicted_loss\n";
  std::vector<std::string> notes;
  // The weight-norm config may depend on N, so slices are built one N at a time.
  for (auto n : n_axis.values) {
    const auto model = model_from_report(report, c.model, c.layernorm, n);
    const auto slice = isoflop_slice(model, cons.compute_max, cons, Axis::from_values({n}), spec);
    for (const auto& row : slice.rows)
      os << row.run.n_params << ',' << row.run.batch << ',' << row.run.steps << ',' << row.run.seq_len << ','
         << format_double(row.loss) << '\n';
    notes.insert(notes.end(), slice.notes.begin(), slice.notes.end());
  }
  for (const auto& n : notes) std::cerr << "note: " << n << '\n';
  return 0;
}

// ---- simulate / generate -----------------------------------------------------

NqsParams theta_from(const std::string& report_path, const std::string& theta) {
  if (report_path.empty() == theta.empty()) throw usage("pass exactly one of --report and --theta");
  if (!theta.empty()) return theta_from_list(theta);
  const auto r = read_report_file(report_path);
  if (!r.nqs) throw usage("report has no nqs parameters");
  return *r.nqs;
}

struct SimulateCmd {
  Common common;
  std::string report, theta, feedback = "none", out;
  std::int64_t n = 8, batch = 4, steps = 64, seq_len = 1, trials = 1000, latent = 0, segments = 0;
  std::optional<double> s;
  double gamma_init = 1.0;
};

int run_simulate(const SimulateCmd& c) {
  SimConfig cfg;
  cfg.theta = theta_from(c.report, c.theta);
  cfg.run = {c.n, c.batch, c.steps, c.seq_len};
  cfg.s = c.s;
  cfg.trials = c.trials;
  cfg.seed = c.common.seed;
  cfg.threads = c.common.threads;
  cfg.latent_modes = c.latent;
  cfg.gamma_init = c.gamma_init;
  cfg.feedback_segments = c.segments;
  if (c.feedback == "none")
    cfg.feedback = NormFeedback::none;
  else if (c.feedback == "expected")
    cfg.feedback = NormFeedback::expected;
  else if (c.feedback == "empirical")
    cfg.feedback = NormFeedback::empirical;
  else
    throw usage("--feedback must be none, expected or empirical");
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw usage(e.what());
  }
  const auto sim = simulate_run(cfg);
  const auto exact = deterministic_moments(cfg);

  std::ofstream file;
  std::ostream& os = open_out(c.out, file);
  os << "mean_loss,stderr_loss,mean_weight_norm_sq,stderr_weight_norm_sq,trials,failed_trials,exact_loss,"
        "exact_weight_norm_sq\n"
     << format_double(sim.mean_loss) << ',' << format_double(sim.stderr_loss) << ','
     << format_double(sim.mean_weight_norm_sq) << ',' << format_double(sim.stderr_weight_norm_sq) << ','
     << sim.trials << ',' << sim.failed_trials << ',' << format_double(exact.loss) << ','
     << format_double(cfg.s ? exact.weight_norm_sq : 0.0) << '\n';
  return 0;
}

struct GenerateCmd {
  Common common;
  std::string report, theta, design = "isoflops", out;
  IsoFlopsDesign iso;
  IsoTokensDesign tok;
  std::string batch_rule = "fixed";
  double noise_sd = 0.0;
};

int run_generate(const GenerateCmd& c) {
  const auto theta = theta_from(c.report, c.theta);
  DatasetDesign design;
  if (c.design == "isoflops") {
    auto iso = c.iso;
    if (c.batch_rule != "fixed" && c.batch_rule != "power_law") throw usage("--batch-rule must be fixed or power_law");
    iso.batch_rule = c.batch_rule == "fixed" ? BatchRule::fixed : BatchRule::power_law;
    design = iso;
  } else if (c.design == "isotokens") {
    design = c.tok;
  } else {
    throw usage("--design must be isoflops or isotokens");
  }
  SyntheticDataset gen;
  try {
    gen = generate_synthetic_dataset(theta, design, c.noise_sd, c.common.seed);
  } catch (const std::invalid_argument& e) {
    throw usage(e.what());
  }
  std::ofstream file;
  std::ostream& os = open_out(c.out, file);
  write_dataset(os, gen.data);
  for (const auto& s : gen.skipped) std::cerr << "skipped: " << s << '\n';
  return 0;
}

// ---- baseline-chinchilla / bootstrap ----------------------------------------

struct ChinCmd {
  Common common;
  FitFlags flags;
  std::string data, out, report;
  bool no_refine = false;
};

int run_chinchilla(const ChinCmd& c) {
  const auto data = read_data(c.data);
  auto cfg = make_fit_config(c.flags, c.common);
  if (c.no_refine) cfg.refine = false;
  Report report;
  if (!c.report.empty()) report = read_report_file(c.report);
  report.command = report.command.empty() ? "baseline-chinchilla" : report.command + "+baseline-chinchilla";
  ChinFitResult fit;
  try {
    fit = chin_fit(data, cfg);
  } catch (const std::invalid_argument& e) {
    throw CliError("fit", e.what(), kExitFit);
  } catch (const std::runtime_error& e) {
    throw CliError("fit", e.what(), kExitFit);
  }
  report.chinchilla = fit.best;
  report.chinchilla_objective = fit.best_objective;
  if (!report.nqs) {
    report.seed = cfg.seed;
    report.config = cfg;
  }
  if (c.out.empty()) throw usage("--out is required");
  std::ofstream file;
  std::ostream& os = open_out(c.out, file);
  write_report(os, report);
  std::cerr << "objective " << format_double(fit.best_objective) << '\n';
  return 0;
}

struct BootstrapCmd {
  Common common;
  FitFlags flags;
  std::string data, queries, out;
  std::int64_t trials = 100;
  double frac = 0.5, level = 0.9;
};

int run_bootstrap(const BootstrapCmd& c) {
  const auto data = read_data(c.data);
  const auto cfg = make_fit_config(c.flags, c.common);
  const auto queries = read_data(c.queries).runs();
  BootstrapResult res;
  try {
    res = bootstrap_ci(data, cfg, queries, c.trials, c.frac, c.level);
  } catch (const FitError& e) {
    throw CliError("fit", e.what(), kExitFit);
  } catch (const std::invalid_argument& e) {
    throw usage(e.what());
  }
  std::ofstream file;
  std::ostream& os = open_out(c.out, file);
  os << "n_params,batch,steps,seq_len,lo,hi\n";
  for (std::size_t i = 0; i < queries.size(); ++i)
    os << queries[i].n_params << ',' << queries[i].batch << ',' << queries[i].steps << ',' << queries[i].seq_len << ','
       << format_double(res.intervals[i].lo) << ',' << format_double(res.intervals[i].hi) << '\n';
  for (const auto& w : res.warnings) std::cerr << "warning: " << w << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Noisy quadratic scaling-law toolkit"};
  app.set_version_flag("--version", std::string(nqs::kVersion));
  app.require_subcommand(1);
  std::function<int()> action;

  FitCmd fit;
  auto* f = app.add_subcommand("fit", "Fit NQS parameters to a dataset");
  f->add_option("--data", fit.data, "Dataset CSV")->required()->check(CLI::ExistingFile);
  f->add_option("--out", fit.out, "Report path")->required();
  f->add_option("--small-batch-data", fit.small_batch, "Dataset for selecting s")->check(CLI::ExistingFile);
  f->add_option("--s-grid", fit.s_grid, "Comma-separated s candidates");
  f->add_option("--s-anchor", fit.s_anchor, "Centre of the default s grid");
  f->add_option("--s-scaling", fit.s_scaling, "absolute or per_parameter");
  f->add_option("--ln-segments", fit.ln_segments, "Step-size refreshes per run for the weight-norm model");
  f->add_flag("--no-filter", fit.no_filter, "Keep runs the small-batch filter would drop");
  f->add_option("--filter-margin", fit.filter_margin, "Loss margin of the small-batch filter");
  add_fit_flags(f, fit.flags);
  add_common(f, fit.common);
  f->callback([&] { action = [&] { return run_fit(fit); }; });

  PredictCmd pred;
  auto* p = app.add_subcommand("predict", "Predict losses from a report");
  p->add_option("--report", pred.report, "Report path")->required()->check(CLI::ExistingFile);
  p->add_option("--data", pred.data, "Dataset CSV of configurations")->check(CLI::ExistingFile);
  p->add_option("--n", pred.n, "Model size");
  p->add_option("--batch", pred.batch, "Batch size");
  p->add_option("--steps", pred.steps, "Steps");
  p->add_option("--seq-len", pred.seq_len, "Sequence length");
  p->add_option("--model", pred.model, "nqs or chinchilla");
  p->add_flag("--layernorm", pred.layernorm, "Use the weight-norm adjusted loss");
  p->add_option("--out", pred.out, "Output CSV (default stdout)");
  p->callback([&] { action = [&] { return run_predict(pred); }; });

  AllocateCmd alloc;
  auto* a = app.add_subcommand("allocate", "Best (N, B, K) under resource constraints");
  a->add_option("--report", alloc.report, "Report path")->required()->check(CLI::ExistingFile);
  a->add_option("--model", alloc.model, "nqs or chinchilla");
  a->add_option("--compute-max", alloc.compute_max, "FLOP budget (suffix PF for PetaFLOPs)")->required();
  a->add_option("--time-max", alloc.time_max, "Bound on N*K (or K with --time-rule k)");
  a->add_option("--time-rule", alloc.time_rule, "nk or k");
  a->add_option("--memory-max", alloc.memory_max, "Bound on B*N");
  a->add_option("--data-max", alloc.data_max, "Bound on B*K*seq_len");
  a->add_option("--seq-len", alloc.seq_len, "Sequence length");
  a->add_flag("--layernorm", alloc.layernorm, "Use the weight-norm adjusted loss");
  a->add_option("--out", alloc.out, "Output CSV (default stdout)");
  add_grid_flags(a, alloc.grid, true);
  add_common(a, alloc.common);
  a->callback([&] { action = [&] { return run_allocate(alloc); }; });

  IsoflopCmd iso;
  auto* i = app.add_subcommand("isoflop", "Loss along an IsoFLOP slice");
  i->add_option("--report", iso.report, "Report path")->required()->check(CLI::ExistingFile);
  i->add_option("--model", iso.model, "nqs or chinchilla");
  i->add_option("--compute", iso.compute, "FLOPs (suffix PF for PetaFLOPs)")->required();
  i->add_option("--batch", iso.batch, "Fixed batch size");
  i->add_flag("--best-batch", iso.best_batch, "Choose the best batch per N");
  i->add_option("--time-max", iso.time_max, "Bound on N*K (or K with --time-rule k)");
  i->add_option("--time-rule", iso.time_rule, "nk or k");
  i->add_option("--memory-max", iso.memory_max, "Bound on B*N");
  i->add_option("--data-max", iso.data_max, "Bound on B*K*seq_len");
  i->add_option("--seq-len", iso.seq_len, "Sequence length");
  i->add_flag("--layernorm", iso.layernorm, "Use the weight-norm adjusted loss");
  i->add_option("--out", iso.out, "Output CSV (default stdout)");
  add_grid_flags(i, iso.grid, true);
  add_common(i, iso.common);
  i->callback([&] { action = [&] { return run_isoflop(iso); }; });

  SimulateCmd sim;
  auto* s = app.add_subcommand("simulate", "Monte Carlo run of the noisy quadratic");
  s->add_option("--report", sim.report, "Report with nqs parameters")->check(CLI::ExistingFile);
  s->add_option("--theta", sim.theta, "p,P,q,Q,r,R,e_irr");
  s->add_option("--n", sim.n, "Trained modes");
  s->add_option("--batch", sim.batch, "Batch size");
  s->add_option("--steps", sim.steps, "Steps");
  s->add_option("--seq-len", sim.seq_len, "Sequence length");
  s->add_option("--trials", sim.trials, "Monte Carlo trials");
  s->add_option("--latent-modes", sim.latent, "Simulated modes (0: 4N)");
  s->add_option("--s", sim.s, "Initial squared weight norm");
  s->add_option("--feedback", sim.feedback, "none, expected or empirical");
  s->add_option("--gamma-init", sim.gamma_init, "Initial step size under feedback");
  s->add_option("--feedback-segments", sim.segments, "Step-size refreshes (0: every step)");
  s->add_option("--out", sim.out, "Output CSV (default stdout)");
  add_common(s, sim.common);
  s->callback([&] { action = [&] { return run_simulate(sim); }; });

  GenerateCmd gen;
  auto* g = app.add_subcommand("generate", "Synthetic scaling dataset");
  g->add_option("--report", gen.report, "Report with nqs parameters")->check(CLI::ExistingFile);
  g->add_option("--theta", gen.theta, "p,P,q,Q,r,R,e_irr");
  g->add_option("--design", gen.design, "isoflops or isotokens");
  g->add_option("--levels", gen.iso.levels, "Compute levels (isoflops)");
  g->add_option("--models-per-level", gen.iso.models_per_level, "Model sizes per level (isoflops)");
  g->add_option("--n-base", gen.iso.n_base, "Smallest model (isoflops)");
  g->add_option("--base-compute", gen.iso.base_compute, "Level-0 compute (isoflops)");
  g->add_option("--batch", gen.iso.batch, "Batch size (isoflops)");
  g->add_option("--batch-rule", gen.batch_rule, "fixed or power_law (isoflops)");
  g->add_option("--batch-exponent", gen.iso.batch_exponent, "Exponent of the power-law batch rule");
  g->add_option("--n", gen.tok.n_params, "Model sizes (isotokens)");
  g->add_option("--base-tokens", gen.tok.base_tokens, "Level-0 tokens (isotokens)");
  g->add_option("--token-levels", gen.tok.levels, "Token levels (isotokens)");
  g->add_option("--b-min", gen.tok.batch_min, "Smallest batch (isotokens)");
  g->add_option("--b-max", gen.tok.batch_max, "Largest batch (isotokens)");
  g->add_option("--seq-len", gen.iso.seq_len, "Sequence length");
  g->add_option("--noise-sd", gen.noise_sd, "Multiplicative log-normal noise");
  g->add_option("--out", gen.out, "Output CSV (default stdout)");
  add_common(g, gen.common);
  g->callback([&] {
    gen.tok.seq_len = gen.iso.seq_len;
    action = [&] { return run_generate(gen); };
  });

  ChinCmd chin;
  auto* c = app.add_subcommand("baseline-chinchilla", "Fit the Chinchilla baseline");
  c->add_option("--data", chin.data, "Dataset CSV")->required()->check(CLI::ExistingFile);
  c->add_option("--out", chin.out, "Report path")->required();
  c->add_option("--report", chin.report, "Existing report to extend")->check(CLI::ExistingFile);
  c->add_flag("--no-refine", chin.no_refine, "Skip the Levenberg-Marquardt polish");
  add_fit_flags(c, chin.flags);
  add_common(c, chin.common);
  c->callback([&] { action = [&] { return run_chinchilla(chin); }; });

  BootstrapCmd boot;
  auto* b = app.add_subcommand("bootstrap", "Subsample intervals for predictions");
  b->add_option("--data", boot.data, "Dataset CSV")->required()->check(CLI::ExistingFile);
  b->add_option("--queries", boot.queries, "CSV of configurations (loss column required, ignored)")
      ->required()
      ->check(CLI::ExistingFile);
  b->add_option("--trials", boot.trials, "Subsample refits");
  b->add_option("--frac", boot.frac, "Subsample fraction");
  b->add_option("--level", boot.level, "Interval level");
  b->add_option("--out", boot.out, "Output CSV (default stdout)");
  add_fit_flags(b, boot.flags);
  add_common(b, boot.common);
  b->callback([&] { action = [&] { return run_bootstrap(boot); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    return action();
  } catch (const CliError& e) {
    std::cerr << "error: " << e.category << ": " << e.what() << '\n';
    return e.code;
  } catch (const DataError& e) {
    std::cerr << "error: data: " << e.what() << '\n';
    return kExitData;
  } catch (const IoError& e) {
    std::cerr << "error: io: " << e.what() << '\n';
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: argument: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << '\n';
    return 1;
  }
}

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "nqs/chinchilla.hpp"
#include "nqs/dataset.hpp"
#include "nqs/fitting.hpp"
#include "nqs/model.hpp"
#include "nqs/optim.hpp"

namespace nqs {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// CSV with a header row. Required columns: n_params, batch, steps, seq_len,
// loss; `tags` (semicolon-separated) is optional. Other columns are kept
// verbatim in Record::extra. Integer columns accept integral values written
// in exponent form (1e6). Rows are numbered from 1 after the header; a bad
// header reports row 0.
ScalingDataset read_dataset(std::istream& in);
ScalingDataset load_dataset(const std::filesystem::path& path);

void write_dataset(std::ostream& out, const ScalingDataset& data);
void save_dataset(const std::filesystem::path& path, const ScalingDataset& data);

// Shortest decimal form that parses back to the same double.
std::string format_double(double x);

inline constexpr int kReportVersion = 1;

struct LayerNormReport {
  double s = 0.0;                 // as selected; per-parameter values are multiplied by N
  SScaling scaling = SScaling::absolute;
  LayerNormConfig config;         // gamma_init, segments and grid used with s
  std::vector<std::pair<double, double>> curve;

  // LayerNorm settings for a run of n_params.
  LayerNormConfig for_run(std::int64_t n_params) const;
};

struct Report {
  int version = kReportVersion;
  std::string tool_version;
  std::string command;
  std::optional<NqsParams> nqs;
  std::optional<double> nqs_objective;
  std::optional<ChinParams> chinchilla;
  std::optional<double> chinchilla_objective;
  std::optional<LayerNormReport> layernorm;
  std::uint64_t seed = 0;
  FitConfig config;
  std::vector<std::size_t> filter_removed;
  std::vector<std::string> warnings;
};

void write_report(std::ostream& out, const Report& report);
Report read_report(std::istream& in);
void save_report(const std::filesystem::path& path, const Report& report);
Report load_report(const std::filesystem::path& path);

}  // namespace nqs

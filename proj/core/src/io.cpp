#include "nqs/io.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <nlohmann/json.hpp>
#include <ostream>
#include <sstream>

#include "nqs/version.hpp"

namespace nqs {

namespace {

using nlohmann::json;

constexpr std::array<const char*, 5> kRequiredColumns = {"n_params", "batch", "steps", "seq_len", "loss"};
constexpr const char* kTagsColumn = "tags";

// RFC 4180 fields on one line: commas separate, double quotes enclose, and a
// doubled quote inside quotes is a literal quote.
std::vector<std::string> split_csv_line(const std::string& line, std::size_t row) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back() += c;
    }
  }
  if (quoted) throw DataError(row, "", "unterminated quoted field");
  return fields;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_real(const std::string& text, std::size_t row, const std::string& column) {
  const std::string t = trim(text);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size())
    throw DataError(row, column, "cannot parse number '" + text + "'");
  return v;
}

std::int64_t parse_integer(const std::string& text, std::size_t row, const std::string& column) {
  const double v = parse_real(text, row, column);
  if (!std::isfinite(v) || v != std::floor(v) || std::abs(v) > 9.0e15)
    throw DataError(row, column, "expected an integer, got '" + text + "'");
  return static_cast<std::int64_t>(v);
}

std::vector<std::string> split_tags(const std::string& s) {
  std::vector<std::string> tags;
  std::stringstream ss(s);
  std::string tag;
  while (std::getline(ss, tag, ';')) {
    tag = trim(tag);
    if (!tag.empty()) tags.push_back(tag);
  }
  return tags;
}

const char* scaling_name(SScaling s) { return s == SScaling::absolute ? "absolute" : "per_parameter"; }

SScaling parse_scaling(const std::string& s) {
  if (s == "absolute") return SScaling::absolute;
  if (s == "per_parameter") return SScaling::per_parameter;
  throw IoError("report: unknown s scaling '" + s + "'");
}

json nqs_to_json(const NqsParams& th) {
  json j;
  const auto a = th.to_array();
  for (std::size_t i = 0; i < kNumParams; ++i) j[kParamNames[i]] = a[i];
  return j;
}

NqsParams nqs_from_json(const json& j) {
  std::array<double, kNumParams> a{};
  for (std::size_t i = 0; i < kNumParams; ++i) a[i] = j.at(kParamNames[i]).get<double>();
  return NqsParams::from_array(a);
}

json chin_to_json(const ChinParams& phi) {
  return {{"p", phi.approx_exponent}, {"P", phi.size_scale}, {"q", phi.data_exponent},
          {"Q", phi.data_scale},      {"e_irr", phi.irreducible}};
}

ChinParams chin_from_json(const json& j) {
  return {j.at("p").get<double>(), j.at("P").get<double>(), j.at("q").get<double>(), j.at("Q").get<double>(),
          j.at("e_irr").get<double>()};
}

json config_to_json(const FitConfig& c) {
  json ranges = json::array();
  for (const auto& r : c.init_ranges) ranges.push_back({r.low, r.high});
  return {{"n_inits", c.n_inits},
          {"n_iters", c.n_iters},
          {"lr", c.lr},
          {"clip", c.clip},
          {"huber_delta", c.huber_delta},
          {"seed", c.seed},
          {"init_ranges", ranges},
          {"penalty", c.penalty},
          {"residual", c.residual == Residual::huber ? "huber" : "squared"},
          {"refine", c.refine}};
}

FitConfig config_from_json(const json& j) {
  FitConfig c;
  c.n_inits = j.at("n_inits").get<std::int64_t>();
  c.n_iters = j.at("n_iters").get<std::int64_t>();
  c.lr = j.at("lr").get<double>();
  c.clip = j.at("clip").get<double>();
  c.huber_delta = j.at("huber_delta").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& r : j.at("init_ranges")) c.init_ranges.push_back({r.at(0).get<double>(), r.at(1).get<double>()});
  c.penalty = j.at("penalty").get<double>();
  const auto residual = j.at("residual").get<std::string>();
  if (residual != "huber" && residual != "squared") throw IoError("report: unknown residual '" + residual + "'");
  c.residual = residual == "huber" ? Residual::huber : Residual::squared;
  c.refine = j.at("refine").get<bool>();
  return c;
}

}  // namespace

std::string format_double(double x) {
  std::array<char, 32> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), x);
  return std::string(buf.data(), ptr);
}

ScalingDataset read_dataset(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError(0, "", "missing header row");
  auto header = split_csv_line(line, 0);
  for (auto& h : header) h = trim(h);

  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i].empty()) throw DataError(0, "", "empty column name in header");
    if (!index.emplace(header[i], i).second) throw DataError(0, header[i], "duplicate column");
  }
  for (const char* col : kRequiredColumns)
    if (!index.count(col)) throw DataError(0, col, "missing required column");

  ScalingDataset data;
  std::vector<std::size_t> extra_idx;
  for (std::size_t i = 0; i < header.size(); ++i) {
    bool known = header[i] == kTagsColumn;
    for (const char* col : kRequiredColumns) known = known || header[i] == col;
    if (!known) {
      data.extra_columns.push_back(header[i]);
      extra_idx.push_back(i);
    }
  }

  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto fields = split_csv_line(line, row);
    if (fields.size() != header.size())
      throw DataError(row, "", "expected " + std::to_string(header.size()) + " fields, found " +
                                   std::to_string(fields.size()));
    Record r;
    r.row = row;
    r.run.n_params = parse_integer(fields[index["n_params"]], row, "n_params");
    r.run.batch = parse_integer(fields[index["batch"]], row, "batch");
    r.run.steps = parse_integer(fields[index["steps"]], row, "steps");
    r.run.seq_len = parse_integer(fields[index["seq_len"]], row, "seq_len");
    r.loss = parse_real(fields[index["loss"]], row, "loss");
    if (auto it = index.find(kTagsColumn); it != index.end()) r.tags = split_tags(fields[it->second]);
    for (auto i : extra_idx) r.extra[header[i]] = fields[i];
    data.records.push_back(std::move(r));
  }
  validate(data);
  return data;
}

ScalingDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset '" + path.string() + "'");
  return read_dataset(in);
}

void write_dataset(std::ostream& out, const ScalingDataset& data) {
  out << "n_params,batch,steps,seq_len,loss,tags";
  for (const auto& c : data.extra_columns) out << ',' << csv_field(c);
  out << '\n';
  for (const auto& r : data.records) {
    std::string tags;
    for (std::size_t i = 0; i < r.tags.size(); ++i) tags += (i ? ";" : "") + r.tags[i];
    out << r.run.n_params << ',' << r.run.batch << ',' << r.run.steps << ',' << r.run.seq_len << ','
        << format_double(r.loss) << ',' << csv_field(tags);
    for (const auto& c : data.extra_columns) {
      const auto it = r.extra.find(c);
      out << ',' << csv_field(it == r.extra.end() ? std::string() : it->second);
    }
    out << '\n';
  }
}

void save_dataset(const std::filesystem::path& path, const ScalingDataset& data) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write dataset '" + path.string() + "'");
  write_dataset(out, data);
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

LayerNormConfig LayerNormReport::for_run(std::int64_t n_params) const {
  LayerNormConfig ln = config;
  ln.s = scaling == SScaling::absolute ? s : s * static_cast<double>(n_params);
  return ln;
}

void write_report(std::ostream& out, const Report& r) {
  json j;
  j["format"] = "nqs-report";
  j["version"] = r.version;
  j["tool_version"] = r.tool_version.empty() ? std::string(kVersion) : r.tool_version;
  j["command"] = r.command;
  j["seed"] = r.seed;
  if (r.nqs) {
    j["nqs"] = nqs_to_json(*r.nqs);
    if (r.nqs_objective) j["nqs"]["objective"] = *r.nqs_objective;
  }
  if (r.chinchilla) {
    j["chinchilla"] = chin_to_json(*r.chinchilla);
    if (r.chinchilla_objective) j["chinchilla"]["objective"] = *r.chinchilla_objective;
  }
  if (r.layernorm) {
    const auto& l = *r.layernorm;
    json curve = json::array();
    for (const auto& [s, v] : l.curve) curve.push_back({s, v});
    j["layernorm"] = {{"s", l.s},
                      {"scaling", scaling_name(l.scaling)},
                      {"gamma_init", l.config.gamma_init},
                      {"n_segments", l.config.n_segments},
                      {"mode_grid_size", l.config.mode_grid_size},
                      {"exact_head", l.config.exact_head},
                      {"curve", curve}};
  }
  j["fit_config"] = config_to_json(r.config);
  j["filter_removed"] = r.filter_removed;
  j["warnings"] = r.warnings;
  out << j.dump(2) << '\n';
}

Report read_report(std::istream& in) {
  try {
    const json j = json::parse(in);
    if (j.value("format", "") != "nqs-report") throw IoError("report: not an nqs report");
    Report r;
    r.version = j.at("version").get<int>();
    if (r.version != kReportVersion)
      throw IoError("report: unsupported version " + std::to_string(r.version));
    r.tool_version = j.at("tool_version").get<std::string>();
    r.command = j.value("command", "");
    r.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("nqs")) {
      r.nqs = nqs_from_json(j["nqs"]);
      validate(*r.nqs);
      if (j["nqs"].contains("objective")) r.nqs_objective = j["nqs"]["objective"].get<double>();
    }
    if (j.contains("chinchilla")) {
      r.chinchilla = chin_from_json(j["chinchilla"]);
      validate(*r.chinchilla);
      if (j["chinchilla"].contains("objective")) r.chinchilla_objective = j["chinchilla"]["objective"].get<double>();
    }
    if (j.contains("layernorm")) {
      const auto& l = j["layernorm"];
      LayerNormReport ln;
      ln.s = l.at("s").get<double>();
      ln.scaling = parse_scaling(l.at("scaling").get<std::string>());
      ln.config.gamma_init = l.at("gamma_init").get<double>();
      ln.config.n_segments = l.at("n_segments").get<std::int64_t>();
      ln.config.mode_grid_size = l.at("mode_grid_size").get<std::int64_t>();
      ln.config.exact_head = l.at("exact_head").get<std::int64_t>();
      for (const auto& p : l.value("curve", json::array()))
        ln.curve.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
      ln.config.s = ln.s;
      validate(ln.config);
      r.layernorm = ln;
    }
    r.config = config_from_json(j.at("fit_config"));
    r.filter_removed = j.value("filter_removed", std::vector<std::size_t>{});
    r.warnings = j.value("warnings", std::vector<std::string>{});
    return r;
  } catch (const json::exception& e) {
    throw IoError(std::string("report: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw IoError(std::string("report: ") + e.what());
  }
}

void save_report(const std::filesystem::path& path, const Report& report) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report '" + path.string() + "'");
  write_report(out, report);
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

Report load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open report '" + path.string() + "'");
  return read_report(in);
}

}  // namespace nqs

#include "nqs/dataset.hpp"

#include <algorithm>
#include <cmath>

namespace nqs {

bool Record::has_tag(const std::string& tag) const { return std::find(tags.begin(), tags.end(), tag) != tags.end(); }

std::vector<RunConfig> ScalingDataset::runs() const {
  std::vector<RunConfig> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.run);
  return out;
}

ScalingDataset ScalingDataset::with_tag(const std::string& tag) const {
  ScalingDataset out{{}, extra_columns};
  for (const auto& r : records)
    if (r.has_tag(tag)) out.records.push_back(r);
  return out;
}

ScalingDataset ScalingDataset::without_tag(const std::string& tag) const {
  ScalingDataset out{{}, extra_columns};
  for (const auto& r : records)
    if (!r.has_tag(tag)) out.records.push_back(r);
  return out;
}

ScalingDataset ScalingDataset::subset(const std::vector<std::size_t>& indices) const {
  ScalingDataset out{{}, extra_columns};
  out.records.reserve(indices.size());
  for (auto i : indices) out.records.push_back(records.at(i));
  return out;
}

void ScalingDataset::append(Record r) {
  if (r.row == 0) r.row = records.size() + 1;
  records.push_back(std::move(r));
}

void validate(const ScalingDataset& data) {
  for (const auto& r : data.records) {
    if (!std::isfinite(r.loss)) throw DataError(r.row, "loss", "loss is not finite");
    if (!(r.loss > 0.0)) throw DataError(r.row, "loss", "loss must be positive");
    if (r.run.n_params < 1) throw DataError(r.row, "n_params", "must be positive");
    if (r.run.batch < 1) throw DataError(r.row, "batch", "must be positive");
    if (r.run.steps < 0) throw DataError(r.row, "steps", "must be nonnegative");
    if (r.run.seq_len < 1) throw DataError(r.row, "seq_len", "must be positive");
  }
}

}  // namespace nqs

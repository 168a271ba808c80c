#pragma once

#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "nqs/model.hpp"

namespace nqs {

class DataError : public std::runtime_error {
 public:
  DataError(std::size_t row, const std::string& column, const std::string& what)
      : std::runtime_error("row " + std::to_string(row) + (column.empty() ? "" : ", column " + column) + ": " + what),
        row_(row),
        column_(column) {}
  std::size_t row() const { return row_; }
  const std::string& column() const { return column_; }

 private:
  std::size_t row_;
  std::string column_;
};

// One observed training run. `row` is the 1-based data row it came from (or
// its position when built in memory) and is used in error messages.
struct Record {
  RunConfig run;
  double loss = 0.0;
  std::vector<std::string> tags;
  std::size_t row = 0;
  std::map<std::string, std::string> extra;  // unrecognised columns, verbatim

  bool has_tag(const std::string& tag) const;
  bool operator==(const Record&) const = default;
};

struct ScalingDataset {
  std::vector<Record> records;
  std::vector<std::string> extra_columns;  // in file order

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }

  std::vector<RunConfig> runs() const;
  ScalingDataset with_tag(const std::string& tag) const;
  ScalingDataset without_tag(const std::string& tag) const;
  ScalingDataset subset(const std::vector<std::size_t>& indices) const;
  void append(Record r);

  bool operator==(const ScalingDataset&) const = default;
};

// Throws DataError for nonpositive/non-finite losses or invalid run fields.
void validate(const ScalingDataset& data);

}  // namespace nqs

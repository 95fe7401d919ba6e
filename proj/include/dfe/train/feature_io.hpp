#pragma once

#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "dfe/train/dataset.hpp"

namespace dfe::train {

/// Feature files: CSV with header `f_0,..,f_{dim-1}` (optionally led by an
/// `id` column), or binary "DFEF": magic | version u32 | count u32 | dim u32 |
/// count x dim f32, little-endian. Readers detect the format from the first
/// four bytes.
Dataset read_features(const std::string& path);
void write_features_csv(const Dataset& data, const std::string& path);
void write_features_binary(const Dataset& data, const std::string& path);

/// Row-chunked reader for files larger than memory. An empty file yields no
/// rows and dim() == 0.
class FeatureStream {
 public:
  explicit FeatureStream(const std::string& path);
  ~FeatureStream();
  FeatureStream(const FeatureStream&) = delete;
  FeatureStream& operator=(const FeatureStream&) = delete;

  std::size_t dim() const noexcept { return dim_; }
  /// Reads up to `max_rows` rows; returns false once the file is exhausted.
  bool next(std::size_t max_rows, std::vector<std::string>& ids, nc::Tensor& rows);

 private:
  bool next_csv_row(std::string& id, std::vector<double>& values);

  std::string path_;
  std::ifstream in_;
  bool binary_ = false;
  bool has_id_ = false;
  std::size_t dim_ = 0;
  std::size_t remaining_ = 0;  // binary only
  std::size_t row_ = 0;
  std::size_t line_ = 1;
};

/// `id,group[,label]` annotations for frame-level files.
struct GroupTable {
  std::vector<std::string> ids;
  std::vector<std::string> groups;
  std::vector<std::int64_t> labels;  // empty when the file has no label column
};

GroupTable read_groups(const std::string& path);
void write_groups(const Dataset& data, const std::string& path);

/// Splits one CSV line on commas (no quoting; fields are trimmed of spaces).
std::vector<std::string> split_csv(const std::string& line);
double parse_double(const std::string& field, const std::string& where);
std::int64_t parse_int(const std::string& field, const std::string& where);

}  // namespace dfe::train

#include "dfe/train/feature_io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>

#include "dfe/numcore/binary_io.hpp"

namespace dfe::train {

using io::FormatError;
using io::FormatErrorKind;

namespace {

constexpr char kMagic[4] = {'D', 'F', 'E', 'F'};
constexpr std::uint32_t kVersion = 1;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

double parse_double(const std::string& field, const std::string& where) {
  double v = 0.0;
  const char* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (ec != std::errc() || ptr != end || field.empty() || !std::isfinite(v))
    throw FormatError(FormatErrorKind::malformed, where + ": '" + field + "' is not a finite number");
  return v;
}

std::int64_t parse_int(const std::string& field, const std::string& where) {
  std::int64_t v = 0;
  const char* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (ec != std::errc() || ptr != end || field.empty())
    throw FormatError(FormatErrorKind::malformed, where + ": '" + field + "' is not an integer");
  return v;
}

FeatureStream::FeatureStream(const std::string& path) : path_(path), in_(path, std::ios::binary) {
  if (!in_) throw io::FileError(path, "cannot open for reading");
  char head[4] = {};
  in_.read(head, 4);
  const std::streamsize got = in_.gcount();
  if (got == 0) return;  // empty file
  if (got == 4 && std::string_view(head, 4) == std::string_view(kMagic, 4)) {
    binary_ = true;
    io::BinaryReader r(in_, path);
    const std::uint32_t version = r.u32();
    if (version != kVersion) throw FormatError(FormatErrorKind::version_skew, path + ": DFEF version " + std::to_string(version));
    remaining_ = r.u32();
    dim_ = r.u32();
    if (dim_ == 0 && remaining_ > 0) throw FormatError(FormatErrorKind::malformed, path + ": zero-dimensional rows");
    return;
  }
  in_.clear();
  in_.seekg(0);
  std::string header;
  std::getline(in_, header);
  auto cols = split_csv(header);
  if (!cols.empty() && cols[0] == "id") {
    has_id_ = true;
    cols.erase(cols.begin());
  }
  for (std::size_t j = 0; j < cols.size(); ++j)
    if (cols[j] != "f_" + std::to_string(j))
      throw FormatError(FormatErrorKind::malformed, path + ": header column '" + cols[j] + "', expected f_" + std::to_string(j));
  dim_ = cols.size();
  if (dim_ == 0) throw FormatError(FormatErrorKind::malformed, path + ": header lists no feature columns");
}

FeatureStream::~FeatureStream() = default;

bool FeatureStream::next_csv_row(std::string& id, std::vector<double>& values) {
  std::string line;
  while (std::getline(in_, line)) {
    ++line_;
    if (trim(line).empty()) continue;
    auto fields = split_csv(line);
    const std::string where = path_ + ":" + std::to_string(line_);
    if (fields.size() != dim_ + (has_id_ ? 1 : 0))
      throw FormatError(FormatErrorKind::shape_mismatch, where + ": " + std::to_string(fields.size()) + " fields, expected " +
                                                             std::to_string(dim_ + (has_id_ ? 1 : 0)));
    id = has_id_ ? fields[0] : std::to_string(row_);
    values.resize(dim_);
    for (std::size_t j = 0; j < dim_; ++j) values[j] = parse_double(fields[j + (has_id_ ? 1 : 0)], where);
    ++row_;
    return true;
  }
  return false;
}

bool FeatureStream::next(std::size_t max_rows, std::vector<std::string>& ids, nc::Tensor& rows) {
  ids.clear();
  if (dim_ == 0 || max_rows == 0) {
    rows = nc::Tensor({0, dim_});
    return false;
  }
  std::vector<double> buf;
  if (binary_) {
    const std::size_t take = std::min(max_rows, remaining_);
    io::BinaryReader r(in_, path_);
    buf.resize(take * dim_);
    for (double& v : buf) {
      v = double(r.f32());
      if (!std::isfinite(v)) throw FormatError(FormatErrorKind::malformed, path_ + ": non-finite value");
    }
    for (std::size_t i = 0; i < take; ++i) ids.push_back(std::to_string(row_++));
    remaining_ -= take;
  } else {
    std::string id;
    std::vector<double> values;
    while (ids.size() < max_rows && next_csv_row(id, values)) {
      ids.push_back(id);
      buf.insert(buf.end(), values.begin(), values.end());
    }
  }
  rows = nc::Tensor({ids.size(), dim_}, std::move(buf));
  return !ids.empty();
}

Dataset read_features(const std::string& path) {
  FeatureStream stream(path);
  Dataset out;
  std::vector<std::string> ids;
  nc::Tensor chunk;
  std::vector<double> all;
  while (stream.next(4096, ids, chunk)) {
    out.ids.insert(out.ids.end(), ids.begin(), ids.end());
    all.insert(all.end(), chunk.data().begin(), chunk.data().end());
  }
  out.rows = nc::Tensor({out.ids.size(), stream.dim()}, std::move(all));
  return out;
}

void write_features_csv(const Dataset& data, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw io::FileError(path, "cannot open for writing");
  os << "id";
  for (std::size_t j = 0; j < data.dim(); ++j) os << ",f_" << j;
  os << '\n';
  for (std::size_t r = 0; r < data.size(); ++r) {
    os << data.id(r);
    for (double v : data.rows.row(r)) os << ',' << fmt(v);
    os << '\n';
  }
  if (!os) throw io::FileError(path, "write failed");
}

void write_features_binary(const Dataset& data, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw io::FileError(path, "cannot open for writing");
  io::BinaryWriter w(os);
  w.bytes(std::string_view(kMagic, 4));
  w.u32(kVersion);
  w.u32(std::uint32_t(data.size()));
  w.u32(std::uint32_t(data.dim()));
  for (double v : data.rows.data()) w.f32(float(v));
  if (!os) throw io::FileError(path, "write failed");
}

GroupTable read_groups(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io::FileError(path, "cannot open for reading");
  std::string line;
  if (!std::getline(in, line)) throw FormatError(FormatErrorKind::malformed, path + ": missing header");
  const auto header = split_csv(line);
  const bool labelled = header.size() == 3 && header[2] == "label";
  if (header.size() < 2 || header[0] != "id" || header[1] != "group" || (header.size() == 3 && !labelled) || header.size() > 3)
    throw FormatError(FormatErrorKind::malformed, path + ": header must be id,group[,label]");
  GroupTable out;
  std::size_t ln = 1;
  while (std::getline(in, line)) {
    ++ln;
    if (trim(line).empty()) continue;
    const auto f = split_csv(line);
    const std::string where = path + ":" + std::to_string(ln);
    if (f.size() != header.size()) throw FormatError(FormatErrorKind::malformed, where + ": wrong field count");
    out.ids.push_back(f[0]);
    out.groups.push_back(f[1]);
    if (labelled) out.labels.push_back(parse_int(f[2], where));
  }
  return out;
}

void write_groups(const Dataset& data, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw io::FileError(path, "cannot open for writing");
  const bool labelled = !data.labels.empty();
  os << "id,group" << (labelled ? ",label" : "") << '\n';
  for (std::size_t r = 0; r < data.size(); ++r) {
    os << data.id(r) << ',' << (data.groups.empty() ? std::string("0") : data.groups[r]);
    if (labelled) os << ',' << data.labels[r];
    os << '\n';
  }
  if (!os) throw io::FileError(path, "write failed");
}

}  // namespace dfe::train

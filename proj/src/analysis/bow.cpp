#include "dfe/analysis/bow.hpp"

#include <cstdio>
#include <fstream>
#include <unordered_map>

#include "dfe/numcore/binary_io.hpp"
#include "dfe/numcore/errors.hpp"

namespace dfe::analysis {

using nc::Tensor;

BowTable bow(std::span<const std::string> ids, std::span<const rvq::TokenSequence> tokens, const train::GroupTable& groups,
             const BowOptions& o) {
  if (ids.size() != tokens.size()) throw ContractViolation("bow: ids and token rows differ in length");
  if (o.codebook_size == 0) throw ContractViolation("bow: codebook size must be positive");
  BowTable out;
  std::unordered_map<std::string, std::size_t> group_index;
  std::unordered_map<std::string, std::size_t> frame_group;
  for (std::size_t i = 0; i < groups.ids.size(); ++i) {
    auto [it, fresh] = group_index.try_emplace(groups.groups[i], out.groups.size());
    if (fresh) out.groups.push_back(groups.groups[i]);
    if (!frame_group.try_emplace(groups.ids[i], it->second).second && frame_group[groups.ids[i]] != it->second)
      throw ContractViolation("bow: frame '" + groups.ids[i] + "' is listed under two groups");
  }
  const std::size_t stages = tokens.empty() ? 0 : tokens.front().size();
  const std::size_t k = o.codebook_size;
  const std::size_t width = o.stage_aware ? k * stages : k;
  Tensor counts({out.groups.size(), width});
  std::vector<std::size_t> frames(out.groups.size(), 0);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const auto it = frame_group.find(ids[r]);
    if (it == frame_group.end()) throw ContractViolation("bow: frame '" + ids[r] + "' has no group");
    if (tokens[r].size() != stages) throw ContractViolation("bow: token sequences of different lengths");
    for (std::size_t s = 0; s < stages; ++s) {
      const std::uint32_t t = tokens[r][s];
      if (t >= k) throw ContractViolation("bow: token " + std::to_string(t) + " outside a codebook of " + std::to_string(k));
      counts.at(it->second, o.stage_aware ? s * k + t : t) += 1.0;
    }
    ++frames[it->second];
  }
  for (std::size_t g = 0; g < out.groups.size(); ++g) {
    if (frames[g] == 0) throw ContractViolation("bow: group '" + out.groups[g] + "' has no frames");
    const double denom = double(frames[g] * stages);
    for (double& v : counts.row(g)) v /= denom;
  }
  out.hist = std::move(counts);
  return out;
}

void write_bow_csv(std::ostream& os, const BowTable& t) {
  const std::size_t width = t.hist.rank() == 2 ? t.hist.cols() : 0;
  os << "group";
  for (std::size_t j = 0; j < width; ++j) os << ",p_" << j;
  os << '\n';
  char buf[32];
  for (std::size_t g = 0; g < t.groups.size(); ++g) {
    os << t.groups[g];
    for (double v : t.hist.row(g)) {
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      os << buf;
    }
    os << '\n';
  }
}

BowTable read_bow_csv(const std::string& path) {
  using io::FormatError;
  using io::FormatErrorKind;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io::FileError(path, "cannot open for reading");
  std::string line;
  if (!std::getline(in, line)) throw FormatError(FormatErrorKind::truncated, path + ": empty BoW file");
  const auto header = train::split_csv(line);
  if (header.size() < 2 || header[0] != "group") throw FormatError(FormatErrorKind::malformed, path + ": header must be group,p_0,..");
  for (std::size_t j = 1; j < header.size(); ++j)
    if (header[j] != "p_" + std::to_string(j - 1))
      throw FormatError(FormatErrorKind::malformed, path + ": header column '" + header[j] + "', expected p_" + std::to_string(j - 1));
  const std::size_t width = header.size() - 1;
  BowTable out;
  std::vector<double> values;
  std::size_t ln = 1;
  while (std::getline(in, line)) {
    ++ln;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = train::split_csv(line);
    const std::string where = path + ":" + std::to_string(ln);
    if (f.size() != width + 1)
      throw FormatError(FormatErrorKind::shape_mismatch, where + ": " + std::to_string(f.size() - 1) + " bins, expected " + std::to_string(width));
    out.groups.push_back(f[0]);
    for (std::size_t j = 1; j < f.size(); ++j) values.push_back(train::parse_double(f[j], where));
  }
  out.hist = Tensor({out.groups.size(), width}, std::move(values));
  return out;
}

std::vector<std::int64_t> group_labels(const BowTable& table, const train::GroupTable& groups) {
  if (groups.labels.empty()) throw ContractViolation("group table has no label column");
  std::unordered_map<std::string, std::int64_t> label;
  for (std::size_t i = 0; i < groups.ids.size(); ++i) {
    auto [it, fresh] = label.try_emplace(groups.groups[i], groups.labels[i]);
    if (!fresh && it->second != groups.labels[i]) throw ContractViolation("group '" + groups.groups[i] + "' carries more than one label");
  }
  std::vector<std::int64_t> out;
  out.reserve(table.groups.size());
  for (const auto& g : table.groups) {
    const auto it = label.find(g);
    if (it == label.end()) throw ContractViolation("group '" + g + "' has no label");
    out.push_back(it->second);
  }
  return out;
}

}  // namespace dfe::analysis

#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "dfe/numcore/tensor.hpp"
#include "dfe/rvq/quantizer.hpp"
#include "dfe/train/feature_io.hpp"

namespace dfe::analysis {

struct BowOptions {
  std::size_t codebook_size = 64;
  /// Separate bins per stage (K * L columns, stage-major) instead of one K-bin histogram.
  bool stage_aware = false;
};

/// One normalized token histogram per group (video).
struct BowTable {
  std::vector<std::string> groups;
  nc::Tensor hist;  // [G, K] or [G, K * L]
};

/// Groups appear in the order of their first row in `groups`. Throws
/// ContractViolation for a frame id without a group, a group without frames,
/// out-of-range tokens or ragged sequences.
BowTable bow(std::span<const std::string> ids, std::span<const rvq::TokenSequence> tokens, const train::GroupTable& groups,
             const BowOptions& options);

/// `group,p_0,..`
void write_bow_csv(std::ostream& os, const BowTable& table);
BowTable read_bow_csv(const std::string& path);

/// One label per BoW row, looked up through the group table. Every frame of a
/// group must carry the same label.
std::vector<std::int64_t> group_labels(const BowTable& table, const train::GroupTable& groups);

}  // namespace dfe::analysis

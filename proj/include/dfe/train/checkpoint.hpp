#pragma once

#include <istream>
#include <memory>
#include <ostream>
#include <string>

#include "dfe/numcore/binary_io.hpp"
#include "dfe/train/trainer.hpp"

namespace dfe::train {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary little-endian layout:
///   "DFEM" | version u32 | hyperparameters | epoch u64 |
///   tensor sections (name, dtype, rank, dims, raw f32) for every parameter and
///   the optional input standardization |
///   optimizer (step count, moment sections, EMA statistics, usage counters) |
///   RNG engine state.
void save_checkpoint(const TrainState& state, std::ostream& os);
void save_checkpoint(const TrainState& state, const std::string& path);

/// Throws io::FormatError: bad_magic, version_skew, shape_mismatch,
/// truncated or malformed.
std::unique_ptr<TrainState> load_checkpoint(std::istream& is);
std::unique_ptr<TrainState> load_checkpoint(const std::string& path);

void write_hyperparams(io::BinaryWriter& w, const model::Hyperparams& hp);
model::Hyperparams read_hyperparams(io::BinaryReader& r);

}  // namespace dfe::train

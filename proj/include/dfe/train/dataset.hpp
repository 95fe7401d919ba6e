#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "dfe/numcore/tensor.hpp"

namespace dfe::train {

/// N expression vectors plus optional per-row id, group (video) and label.
struct Dataset {
  nc::Tensor rows;                   // [N, dim]
  std::vector<std::string> ids;      // empty, or one per row
  std::vector<std::string> groups;   // empty, or one per row
  std::vector<std::int64_t> labels;  // empty, or one per row

  std::size_t size() const noexcept { return rows.rank() == 2 ? rows.rows() : 0; }
  std::size_t dim() const noexcept { return rows.rank() == 2 ? rows.cols() : 0; }
  /// Row id, or the row index when no ids are stored.
  std::string id(std::size_t r) const { return ids.empty() ? std::to_string(r) : ids[r]; }
  /// Throws ContractViolation on a non-finite value, ragged annotations or a
  /// dimension other than `expected_dim` (0 skips that check).
  void validate(std::size_t expected_dim = 0) const;
};

/// Ground-truth generator: G sparse templates, each sample a weighted sum of
/// m distinct templates plus Gaussian noise.
struct SynthSpec {
  std::size_t dim = 50;
  std::size_t templates = 12;
  std::size_t sparsity = 5;
  std::size_t mix_lo = 1;
  std::size_t mix_hi = 3;
  double weight_lo = 0.7;
  double weight_hi = 1.3;
  double noise = 0.02;
  std::size_t samples = 20000;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthResult {
  Dataset data;
  nc::Tensor templates;                              // [G, dim]
  std::vector<std::vector<std::uint32_t>> members;  // templates used by each row
};

SynthResult synth_generate(const SynthSpec& spec);

/// Labelled videos: templates are dealt round-robin into `classes` disjoint
/// subsets and every frame of a class-c video mixes templates of subset c only.
/// `base.samples` is ignored.
struct VideoSpec {
  SynthSpec base;
  std::size_t classes = 2;
  std::size_t videos_per_class = 25;
  std::size_t frames_per_video = 50;
};

SynthResult synth_videos(const VideoSpec& spec);

/// Per-dimension mean and population standard deviation (1 where constant).
void column_moments(const nc::Tensor& rows, nc::Tensor& mean, nc::Tensor& scale);

}  // namespace dfe::train

#pragma once

#include <ostream>
#include <vector>

#include "dfe/codec/blendshape.hpp"
#include "dfe/model/model.hpp"

namespace dfe::codec {

/// u_k = flatten(deform(token_template(k)) - template mesh), one row per code.
nc::Tensor code_displacements(const model::Model& model, const BlendshapeModel& bm, bool with_bias = true);

struct Redundancy {
  double mean_dot = 0.0;          // over all unordered code pairs
  double mean_cosine = 0.0;       // over pairs where both vectors are nonzero
  std::size_t pairs = 0;
  std::size_t cosine_pairs = 0;
  std::size_t zero_codes = 0;     // codes whose displacement is exactly zero
};

/// Pairwise redundancy of displacement rows (any [K, n] matrix).
Redundancy displacement_redundancy(const nc::Tensor& displacements);
Redundancy displacement_redundancy(const model::Model& model, const BlendshapeModel& bm, bool with_bias = true);

/// For each threshold, the fraction of vertices whose displacement norm is
/// strictly above it, averaged over codes. `displacements` is [K, 3N].
std::vector<double> displacement_percentiles(const nc::Tensor& displacements, const std::vector<double>& thresholds);

/// `threshold,fraction` rows.
void write_percentiles_csv(std::ostream& os, const std::vector<double>& thresholds, const std::vector<double>& fractions);

/// `count` evenly spaced thresholds from 0 to the largest per-vertex displacement.
std::vector<double> threshold_grid(const nc::Tensor& displacements, std::size_t count);

}  // namespace dfe::codec

#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "dfe/numcore/tensor.hpp"

namespace dfe::codec {

/// Expression path of a morphable face model: M(psi) = T + sum_j psi_j B_j.
struct BlendshapeModel {
  nc::Tensor mesh;   // [N, 3] neutral template
  nc::Tensor basis;  // [dim, N*3], row j is the flattened offset field B_j

  std::size_t vertices() const noexcept { return mesh.rank() == 2 ? mesh.rows() : 0; }
  std::size_t dim() const noexcept { return basis.rank() == 2 ? basis.rows() : 0; }
  /// Throws ContractViolation on inconsistent shapes or non-finite values.
  void validate() const;
};

/// [N, 3] positions. Coefficients are applied in index order; psi == 0
/// returns the template unchanged.
nc::Tensor deform(std::span<const double> psi, const BlendshapeModel& bm);

/// Stand-in for a real face basis: N points on a unit sphere, each coefficient
/// pushing a random vertex patch along its normals with a Gaussian falloff.
struct SphereSpec {
  std::size_t vertices = 512;
  std::size_t dim = 50;
  double patch_radius = 0.35;  // radians; the falloff is cut at twice this
  double amplitude = 0.05;
  std::uint64_t seed = 0;
};
BlendshapeModel synth_blendshapes(const SphereSpec& spec);

/// "DFEB": magic | version u32 | N u32 | dim u32 | template N x 3 f32 |
/// basis dim x N x 3 f32, little-endian.
void save_blendshapes(const BlendshapeModel& bm, const std::string& path);
BlendshapeModel load_blendshapes(const std::string& path);

}  // namespace dfe::codec

#pragma once

#include <array>
#include <cstdint>
#include <ostream>
#include <span>
#include <vector>

#include "dfe/codec/blendshape.hpp"

namespace dfe::codec {

using Rgb = std::array<std::uint8_t, 3>;

/// Blue (t = 0) to red (t = 1): R = round(255 t), G = 0, B = round(255 (1 - t)).
/// t is clamped to [0, 1].
Rgb colormap(double t);

enum class HeatmapScale {
  max,  // divide by the largest distance
  p99,  // divide by the 99th percentile and clamp, so a few outliers do not wash out the rest
};

struct HeatmapResult {
  std::vector<double> distances;  // per vertex, against the neutral mesh
  double normalizer = 0.0;        // 0 when every distance is 0
  std::vector<Rgb> colors;
};

HeatmapResult heatmap(std::span<const double> psi, const BlendshapeModel& bm, HeatmapScale scale = HeatmapScale::max);

/// ASCII PLY with float x,y,z and uchar red,green,blue per vertex.
void write_ply(std::ostream& os, const nc::Tensor& mesh, const std::vector<Rgb>& colors);
/// `vertex,d` rows.
void write_distances_csv(std::ostream& os, const std::vector<double>& distances);

}  // namespace dfe::codec

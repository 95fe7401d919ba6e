#include "dfe/codec/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "dfe/numcore/errors.hpp"

namespace dfe::codec {

Rgb colormap(double t) {
  t = std::clamp(t, 0.0, 1.0);
  return {std::uint8_t(std::lround(255.0 * t)), 0, std::uint8_t(std::lround(255.0 * (1.0 - t)))};
}

namespace {

// Nearest-rank percentile.
double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const std::size_t rank = std::size_t(std::ceil(q * double(v.size())));
  return v[std::min(v.size() - 1, rank == 0 ? 0 : rank - 1)];
}

}  // namespace

HeatmapResult heatmap(std::span<const double> psi, const BlendshapeModel& bm, HeatmapScale scale) {
  const nc::Tensor moved = deform(psi, bm);
  const nc::Tensor& ref = bm.mesh;
  HeatmapResult out;
  const std::size_t n = bm.vertices();
  out.distances.resize(n);
  for (std::size_t v = 0; v < n; ++v) {
    double s = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      const double d = moved.at(v, c) - ref.at(v, c);
      s += d * d;
    }
    out.distances[v] = std::sqrt(s);
  }
  if (n > 0)
    out.normalizer = scale == HeatmapScale::max ? *std::max_element(out.distances.begin(), out.distances.end())
                                                : percentile(out.distances, 0.99);
  out.colors.reserve(n);
  for (double d : out.distances) out.colors.push_back(colormap(out.normalizer > 0.0 ? d / out.normalizer : 0.0));
  return out;
}

void write_ply(std::ostream& os, const nc::Tensor& mesh, const std::vector<Rgb>& colors) {
  if (mesh.rank() != 2 || mesh.cols() != 3 || colors.size() != mesh.rows())
    throw ContractViolation("write_ply: need one color per vertex of an N x 3 mesh");
  os << "ply\nformat ascii 1.0\ncomment deformation heatmap\nelement vertex " << mesh.rows()
     << "\nproperty float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  char buf[128];
  for (std::size_t v = 0; v < mesh.rows(); ++v) {
    std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g %u %u %u\n", mesh.at(v, 0), mesh.at(v, 1), mesh.at(v, 2), unsigned(colors[v][0]),
                  unsigned(colors[v][1]), unsigned(colors[v][2]));
    os << buf;
  }
}

void write_distances_csv(std::ostream& os, const std::vector<double>& distances) {
  os << "vertex,d\n";
  char buf[64];
  for (std::size_t v = 0; v < distances.size(); ++v) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", v, distances[v]);
    os << buf;
  }
}

}  // namespace dfe::codec

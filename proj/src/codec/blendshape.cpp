#include "dfe/codec/blendshape.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "dfe/numcore/binary_io.hpp"
#include "dfe/numcore/errors.hpp"
#include "dfe/numcore/rng.hpp"

namespace dfe::codec {

using io::FormatError;
using io::FormatErrorKind;
using nc::Tensor;

namespace {

constexpr char kMagic[4] = {'D', 'F', 'E', 'B'};
constexpr std::uint32_t kVersion = 1;

double f32(double v) { return double(float(v)); }

}  // namespace

void BlendshapeModel::validate() const {
  if (mesh.rank() != 2 || mesh.cols() != 3) throw ContractViolation("blendshapes: template must be N x 3");
  if (basis.rank() != 2 || basis.cols() != 3 * mesh.rows())
    throw ContractViolation("blendshapes: basis rows must hold N x 3 offsets");
  if (!mesh.all_finite() || !basis.all_finite()) throw ContractViolation("blendshapes: non-finite value");
}

Tensor deform(std::span<const double> psi, const BlendshapeModel& bm) {
  if (psi.size() != bm.dim())
    throw ContractViolation("deform: " + std::to_string(psi.size()) + " coefficients, blendshapes expect " + std::to_string(bm.dim()));
  const std::size_t n = bm.mesh.size();
  Tensor offset({n});
  for (std::size_t j = 0; j < psi.size(); ++j) {
    if (psi[j] == 0.0) continue;
    const auto b = bm.basis.row(j);
    for (std::size_t i = 0; i < n; ++i) offset[i] += psi[j] * b[i];
  }
  Tensor out = bm.mesh;
  for (std::size_t i = 0; i < n; ++i) out[i] += offset[i];
  return out;
}

BlendshapeModel synth_blendshapes(const SphereSpec& spec) {
  if (spec.vertices < 2 || spec.dim == 0) throw ContractViolation("synth_blendshapes: need at least two vertices and one coefficient");
  if (!(spec.patch_radius > 0.0) || !std::isfinite(spec.amplitude))
    throw ContractViolation("synth_blendshapes: patch radius must be positive and amplitude finite");
  const std::size_t n = spec.vertices;
  BlendshapeModel bm;
  bm.mesh = Tensor({n, 3});
  // Fibonacci lattice.
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (std::size_t v = 0; v < n; ++v) {
    const double y = 1.0 - 2.0 * (double(v) + 0.5) / double(n);
    const double r = std::sqrt(1.0 - y * y);
    const double phi = golden * double(v);
    bm.mesh.at(v, 0) = f32(r * std::cos(phi));
    bm.mesh.at(v, 1) = f32(y);
    bm.mesh.at(v, 2) = f32(r * std::sin(phi));
  }

  Rng rng(Rng::derive(spec.seed, "blendshapes"));
  bm.basis = Tensor({spec.dim, 3 * n});
  for (std::size_t j = 0; j < spec.dim; ++j) {
    const std::size_t centre = rng.index(n);
    const double amp = spec.amplitude * rng.uniform(0.5, 1.5) * (rng.coin() ? 1.0 : -1.0);
    auto row = bm.basis.row(j);
    for (std::size_t v = 0; v < n; ++v) {
      double dot = 0.0;
      for (std::size_t c = 0; c < 3; ++c) dot += bm.mesh.at(v, c) * bm.mesh.at(centre, c);
      const double angle = std::acos(std::clamp(dot, -1.0, 1.0));
      if (angle > 2.0 * spec.patch_radius) continue;
      const double w = amp * std::exp(-0.5 * (angle / spec.patch_radius) * (angle / spec.patch_radius));
      for (std::size_t c = 0; c < 3; ++c) row[3 * v + c] = f32(w * bm.mesh.at(v, c));
    }
  }
  return bm;
}

void save_blendshapes(const BlendshapeModel& bm, const std::string& path) {
  bm.validate();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw io::FileError(path, "cannot open for writing");
  io::BinaryWriter w(os);
  w.bytes(std::string_view(kMagic, 4));
  w.u32(kVersion);
  w.u32(std::uint32_t(bm.vertices()));
  w.u32(std::uint32_t(bm.dim()));
  for (double v : bm.mesh.data()) w.f32(float(v));
  for (double v : bm.basis.data()) w.f32(float(v));
  os.close();
  if (!os) throw io::FileError(path, "write failed");
}

BlendshapeModel load_blendshapes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io::FileError(path, "cannot open for reading");
  io::BinaryReader r(is, path);
  if (r.bytes(4) != std::string_view(kMagic, 4)) throw FormatError(FormatErrorKind::bad_magic, path + ": not a DFEB blendshape file");
  const std::uint32_t version = r.u32();
  if (version != kVersion) throw FormatError(FormatErrorKind::version_skew, path + ": DFEB version " + std::to_string(version));
  const std::uint32_t n = r.u32(), dim = r.u32();
  if (n == 0 || dim == 0 || n > (1u << 24) || dim > (1u << 16))
    throw FormatError(FormatErrorKind::malformed, path + ": implausible sizes");
  BlendshapeModel bm;
  bm.mesh = Tensor({n, 3});
  bm.basis = Tensor({dim, std::size_t(n) * 3});
  for (double& v : bm.mesh.data()) v = double(r.f32());
  for (double& v : bm.basis.data()) v = double(r.f32());
  if (!r.at_end()) throw FormatError(FormatErrorKind::malformed, path + ": trailing bytes");
  try {
    bm.validate();
  } catch (const ContractViolation& e) {
    throw FormatError(FormatErrorKind::malformed, path + ": " + e.what());
  }
  return bm;
}

}  // namespace dfe::codec

#include "dfe/train/dataset.hpp"

#include <cmath>
#include <algorithm>
#include <numeric>
#include <span>

#include "dfe/numcore/errors.hpp"
#include "dfe/numcore/rng.hpp"

namespace dfe::train {

void Dataset::validate(std::size_t expected_dim) const {
  if (rows.rank() != 2 && rows.size() != 0) throw ContractViolation("dataset: rows must form an N x dim matrix");
  if (expected_dim != 0 && size() > 0 && dim() != expected_dim)
    throw ContractViolation("dataset: rows have " + std::to_string(dim()) + " values, expected " + std::to_string(expected_dim));
  for (double v : rows.data())
    if (!std::isfinite(v)) throw ContractViolation("dataset: non-finite value");
  const std::size_t n = size();
  if ((!ids.empty() && ids.size() != n) || (!groups.empty() && groups.size() != n) || (!labels.empty() && labels.size() != n))
    throw ContractViolation("dataset: annotation count does not match row count");
}

void SynthSpec::validate() const {
  if (dim == 0) throw ContractViolation("synth: dim must be positive");
  if (templates < 1) throw ContractViolation("synth: at least one template required");
  if (sparsity < 1 || sparsity > dim) throw ContractViolation("synth: sparsity must lie in [1, dim]");
  if (mix_lo < 1 || mix_lo > mix_hi || mix_hi > templates) throw ContractViolation("synth: mixture range must satisfy 1 <= lo <= hi <= templates");
  if (!(weight_lo <= weight_hi) || !std::isfinite(weight_lo) || !std::isfinite(weight_hi))
    throw ContractViolation("synth: weight range must be finite with lo <= hi");
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw ContractViolation("synth: noise must be finite and non-negative");
}

namespace {

nc::Tensor make_templates(const SynthSpec& spec, Rng& rng) {
  nc::Tensor t({spec.templates, spec.dim});
  std::vector<std::size_t> coords(spec.dim);
  for (std::size_t g = 0; g < spec.templates; ++g) {
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    rng.shuffle(coords);
    for (std::size_t i = 0; i < spec.sparsity; ++i) {
      const double mag = rng.uniform(0.5, 1.5);
      t.at(g, coords[i]) = rng.coin() ? mag : -mag;
    }
  }
  return t;
}

double draw_weight(const SynthSpec& spec, Rng& rng) {
  return spec.weight_lo == spec.weight_hi ? spec.weight_lo : rng.uniform(spec.weight_lo, spec.weight_hi);
}

// One row mixing a random subset (size in [mix_lo, min(mix_hi, pool)]) of `pool`.
void draw_sample(const SynthSpec& spec, const nc::Tensor& templates, std::vector<std::uint32_t> pool, Rng& rng,
                 std::span<double> row, std::vector<std::uint32_t>& members) {
  const std::size_t hi = std::min(spec.mix_hi, pool.size());
  const std::size_t lo = std::min(spec.mix_lo, hi);
  const std::size_t m = lo + rng.index(hi - lo + 1);
  rng.shuffle(pool);
  members.assign(pool.begin(), pool.begin() + std::ptrdiff_t(m));
  for (std::uint32_t g : members) {
    const double w = draw_weight(spec, rng);
    auto t = templates.row(g);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += w * t[j];
  }
  if (spec.noise > 0.0)
    for (double& v : row) v += rng.normal(0.0, spec.noise);
}

}  // namespace

SynthResult synth_generate(const SynthSpec& spec) {
  spec.validate();
  Rng rng(Rng::derive(spec.seed, "data"));
  SynthResult out;
  out.templates = make_templates(spec, rng);
  out.data.rows = nc::Tensor({spec.samples, spec.dim});
  out.members.resize(spec.samples);
  std::vector<std::uint32_t> pool(spec.templates);
  std::iota(pool.begin(), pool.end(), 0u);
  for (std::size_t r = 0; r < spec.samples; ++r) draw_sample(spec, out.templates, pool, rng, out.data.rows.row(r), out.members[r]);
  return out;
}

SynthResult synth_videos(const VideoSpec& spec) {
  spec.base.validate();
  if (spec.classes < 2) throw ContractViolation("synth_videos: at least two classes required");
  if (spec.base.templates < spec.classes) throw ContractViolation("synth_videos: fewer templates than classes");
  if (spec.videos_per_class == 0 || spec.frames_per_video == 0) throw ContractViolation("synth_videos: empty videos");
  Rng rng(Rng::derive(spec.base.seed, "data"));
  SynthResult out;
  out.templates = make_templates(spec.base, rng);

  std::vector<std::vector<std::uint32_t>> subsets(spec.classes);
  for (std::uint32_t g = 0; g < spec.base.templates; ++g) subsets[g % spec.classes].push_back(g);

  const std::size_t videos = spec.classes * spec.videos_per_class;
  const std::size_t n = videos * spec.frames_per_video;
  out.data.rows = nc::Tensor({n, spec.base.dim});
  out.members.resize(n);
  std::size_t r = 0;
  for (std::size_t v = 0; v < videos; ++v) {
    const std::size_t cls = v % spec.classes;
    const std::string vid = "v" + std::to_string(v);
    for (std::size_t f = 0; f < spec.frames_per_video; ++f, ++r) {
      draw_sample(spec.base, out.templates, subsets[cls], rng, out.data.rows.row(r), out.members[r]);
      out.data.ids.push_back(vid + "_f" + std::to_string(f));
      out.data.groups.push_back(vid);
      out.data.labels.push_back(std::int64_t(cls));
    }
  }
  return out;
}

void column_moments(const nc::Tensor& rows, nc::Tensor& mean, nc::Tensor& scale) {
  const std::size_t n = rows.rows(), d = rows.cols();
  if (n == 0) throw ContractViolation("column_moments: empty data");
  mean = nc::Tensor({d});
  scale = nc::Tensor({d});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < d; ++j) mean[j] += rows.at(r, j);
  for (std::size_t j = 0; j < d; ++j) mean[j] /= double(n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < d; ++j) {
      const double c = rows.at(r, j) - mean[j];
      scale[j] += c * c;
    }
  for (std::size_t j = 0; j < d; ++j) {
    const double sd = std::sqrt(scale[j] / double(n));
    scale[j] = sd > 0.0 ? sd : 1.0;
  }
}

}  // namespace dfe::train

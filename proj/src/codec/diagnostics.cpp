#include "dfe/codec/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "dfe/codec/tokens.hpp"
#include "dfe/numcore/errors.hpp"

namespace dfe::codec {

using nc::Tensor;

namespace {

double vertex_norm(std::span<const double> u, std::size_t v) {
  const double x = u[3 * v], y = u[3 * v + 1], z = u[3 * v + 2];
  return std::sqrt(x * x + y * y + z * z);
}

}  // namespace

Tensor code_displacements(const model::Model& model, const BlendshapeModel& bm, bool with_bias) {
  if (model.hp().input_dim != bm.dim())
    throw ContractViolation("blendshapes have " + std::to_string(bm.dim()) + " coefficients, model decodes " +
                            std::to_string(model.hp().input_dim));
  const std::size_t k = model.hp().codebook_size, n = bm.mesh.size();
  Tensor out({k, n});
  for (std::size_t c = 0; c < k; ++c) {
    const Tensor psi = token_template(model, c, with_bias);
    const Tensor mesh = deform(psi.data(), bm);
    auto row = out.row(c);
    for (std::size_t i = 0; i < n; ++i) row[i] = mesh[i] - bm.mesh[i];
  }
  return out;
}

Redundancy displacement_redundancy(const Tensor& u) {
  if (u.rank() != 2) throw ContractViolation("displacement_redundancy: expected a [K, n] matrix");
  const std::size_t k = u.rows();
  std::vector<double> norms(k);
  Redundancy r;
  for (std::size_t i = 0; i < k; ++i) {
    double s = 0.0;
    for (double v : u.row(i)) s += v * v;
    norms[i] = std::sqrt(s);
    if (norms[i] == 0.0) ++r.zero_codes;
  }
  double dot_sum = 0.0, cos_sum = 0.0;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j) {
      const auto a = u.row(i), b = u.row(j);
      double dot = 0.0;
      for (std::size_t t = 0; t < a.size(); ++t) dot += a[t] * b[t];
      dot_sum += dot;
      ++r.pairs;
      if (norms[i] > 0.0 && norms[j] > 0.0) {
        cos_sum += dot / (norms[i] * norms[j]);
        ++r.cosine_pairs;
      }
    }
  r.mean_dot = r.pairs ? dot_sum / double(r.pairs) : 0.0;
  r.mean_cosine = r.cosine_pairs ? cos_sum / double(r.cosine_pairs) : 0.0;
  return r;
}

Redundancy displacement_redundancy(const model::Model& model, const BlendshapeModel& bm, bool with_bias) {
  return displacement_redundancy(code_displacements(model, bm, with_bias));
}

std::vector<double> displacement_percentiles(const Tensor& u, const std::vector<double>& thresholds) {
  if (u.rank() != 2 || u.cols() % 3 != 0 || u.cols() == 0) throw ContractViolation("displacement_percentiles: expected [K, 3N] displacements");
  const std::size_t k = u.rows(), n = u.cols() / 3;
  std::vector<double> out(thresholds.size(), 0.0);
  if (k == 0) return out;
  std::vector<double> d(n);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t v = 0; v < n; ++v) d[v] = vertex_norm(u.row(c), v);
    std::sort(d.begin(), d.end());
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      const auto above = std::size_t(d.end() - std::upper_bound(d.begin(), d.end(), thresholds[t]));
      out[t] += double(above) / double(n);
    }
  }
  for (double& f : out) f /= double(k);
  return out;
}

void write_percentiles_csv(std::ostream& os, const std::vector<double>& thresholds, const std::vector<double>& fractions) {
  if (thresholds.size() != fractions.size()) throw ContractViolation("write_percentiles_csv: length mismatch");
  os << "threshold,fraction\n";
  char buf[80];
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", thresholds[i], fractions[i]);
    os << buf;
  }
}

std::vector<double> threshold_grid(const Tensor& u, std::size_t count) {
  if (count < 2) throw ContractViolation("threshold_grid: need at least two thresholds");
  double mx = 0.0;
  for (std::size_t c = 0; c < u.rows(); ++c)
    for (std::size_t v = 0; v < u.cols() / 3; ++v) mx = std::max(mx, vertex_norm(u.row(c), v));
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = mx * double(i) / double(count - 1);
  return out;
}

}  // namespace dfe::codec

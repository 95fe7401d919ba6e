#include "dfe/rvq/quantizer.hpp"

#include <cmath>
#include <string>

#include "dfe/numcore/errors.hpp"

namespace dfe::rvq {

Codebook::Codebook(std::size_t size, std::size_t dim) : Codebook(nc::Tensor({size, dim})) {}

Codebook::Codebook(nc::Tensor entries) : entries_("codebook", std::move(entries)) {
  if (entries_.value.rank() != 2) throw ContractViolation("Codebook: entries must be a K x D matrix");
  usage_.assign(size(), 0);
}

void Codebook::record(std::span<const std::uint32_t> tokens) {
  for (std::uint32_t k : tokens) {
    if (k >= usage_.size()) throw ContractViolation("Codebook::record: token out of range");
    ++usage_[k];
  }
}

void Codebook::reset_usage() { usage_.assign(size(), 0); }

void Codebook::set_usage(std::vector<std::uint64_t> usage) {
  if (usage.size() != size()) throw ContractViolation("Codebook::set_usage: size mismatch");
  usage_ = std::move(usage);
}

std::uint32_t nearest_code(std::span<const double> r, const Codebook& cb) {
  const std::size_t k_count = cb.size();
  if (k_count == 0) throw ContractViolation("nearest_code: empty codebook");
  if (r.size() != cb.dim()) throw ContractViolation("nearest_code: dimension mismatch");
  std::uint32_t best = 0;
  double best_d = INFINITY;
  for (std::size_t k = 0; k < k_count; ++k) {
    auto e = cb.entry(k);
    double d = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) {
      const double diff = r[j] - e[j];
      d += diff * diff;
    }
    if (d < best_d) {
      best_d = d;
      best = std::uint32_t(k);
    }
  }
  return best;
}

QuantizationResult quantize(std::span<const double> z0, const Codebook& cb, std::size_t stages) {
  if (cb.size() == 0) throw ContractViolation("quantize: empty codebook");
  if (stages == 0) throw ContractViolation("quantize: at least one stage required");
  const std::size_t d = cb.dim();
  if (z0.size() != d) throw ContractViolation("quantize: latent has " + std::to_string(z0.size()) + " dims, codebook " + std::to_string(d));

  QuantizationResult res;
  res.tokens.reserve(stages);
  res.residuals = nc::Tensor({stages + 1, d});
  res.quantized = nc::Tensor({d});
  std::copy(z0.begin(), z0.end(), res.residuals.row(0).begin());
  for (std::size_t i = 1; i <= stages; ++i) {
    auto prev = res.residuals.row(i - 1);
    for (double v : prev)
      if (!std::isfinite(v)) throw NumericFault("quantize", "non-finite residual at stage " + std::to_string(i));
    const std::uint32_t k = nearest_code(prev, cb);
    res.tokens.push_back(k);
    auto e = cb.entry(k);
    auto cur = res.residuals.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      cur[j] = prev[j] - e[j];
      res.quantized[j] += e[j];
    }
  }
  return res;
}

nc::Var straight_through(nc::Var z0, const nc::Tensor& zq) {
  if (z0.shape() != zq.shape())
    throw ContractViolation("straight_through: " + nc::shape_string(z0.shape()) + " vs " + nc::shape_string(zq.shape()));
  return z0.tape().record("straight_through", zq, {z0}, [](const nc::BackwardContext& c) {
    if (nc::Tensor* g = c.input_grad(0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += c.grad()[i];
  });
}

DeadCodeReport reinit_dead_codes(Codebook& cb, const nc::Tensor& latents, std::uint64_t threshold, Rng& rng, double noise_std) {
  DeadCodeReport report;
  if (threshold == 0) return report;
  if (latents.rows() == 0) throw ContractViolation("reinit_dead_codes: empty batch");
  if (latents.cols() != cb.dim()) throw ContractViolation("reinit_dead_codes: latent dimension mismatch");
  nc::Tensor& table = cb.entries().value;
  for (std::size_t k = 0; k < cb.size(); ++k) {
    if (cb.usage()[k] >= threshold) continue;
    auto src = latents.row(rng.index(latents.rows()));
    auto dst = table.row(k);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = src[j] + rng.normal(0.0, noise_std);
    report.rows.push_back(k);
  }
  cb.reset_usage();
  return report;
}

EmaUpdater::EmaUpdater(const Codebook& cb, double decay, double epsilon)
    : decay_(decay), epsilon_(epsilon), counts_({cb.size()}, 1.0), sums_(cb.entries().value) {}

void EmaUpdater::update(Codebook& cb, const nc::Tensor& inputs, std::span<const std::uint32_t> tokens) {
  const std::size_t k_count = cb.size();
  const std::size_t d = cb.dim();
  if (inputs.rows() != tokens.size() || inputs.cols() != d) throw ContractViolation("EmaUpdater::update: shape mismatch");
  nc::Tensor batch_counts({k_count});
  nc::Tensor batch_sums({k_count, d});
  for (std::size_t r = 0; r < tokens.size(); ++r) {
    const std::uint32_t k = tokens[r];
    batch_counts[k] += 1.0;
    auto src = inputs.row(r);
    auto dst = batch_sums.row(k);
    for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
  }
  double total = 0.0;
  for (std::size_t k = 0; k < k_count; ++k) {
    counts_[k] = decay_ * counts_[k] + (1.0 - decay_) * batch_counts[k];
    total += counts_[k];
    for (std::size_t j = 0; j < d; ++j) sums_.at(k, j) = decay_ * sums_.at(k, j) + (1.0 - decay_) * batch_sums.at(k, j);
  }
  nc::Tensor& table = cb.entries().value;
  for (std::size_t k = 0; k < k_count; ++k) {
    const double smoothed = (counts_[k] + epsilon_) / (total + double(k_count) * epsilon_) * total;
    for (std::size_t j = 0; j < d; ++j) table.at(k, j) = sums_.at(k, j) / smoothed;
  }
}

void EmaUpdater::reset_rows(const Codebook& cb, std::span<const std::size_t> rows) {
  for (std::size_t k : rows) {
    counts_[k] = 1.0;
    auto src = cb.entry(k);
    std::copy(src.begin(), src.end(), sums_.row(k).begin());
  }
}

}  // namespace dfe::rvq

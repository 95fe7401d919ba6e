#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dfe/numcore/rng.hpp"
#include "dfe/numcore/tape.hpp"

namespace dfe::rvq {

/// Ordered codebook indices [k_1..k_L] encoding one frame.
using TokenSequence = std::vector<std::uint32_t>;

/// K x D learnable code table shared by every quantization stage, plus
/// per-entry usage counters since the last reset.
class Codebook {
 public:
  Codebook() = default;
  Codebook(std::size_t size, std::size_t dim);
  explicit Codebook(nc::Tensor entries);

  std::size_t size() const noexcept { return entries_.value.rows(); }
  std::size_t dim() const noexcept { return entries_.value.cols(); }
  std::span<const double> entry(std::size_t k) const { return entries_.value.row(k); }

  nc::Parameter& entries() noexcept { return entries_; }
  const nc::Parameter& entries() const noexcept { return entries_; }

  const std::vector<std::uint64_t>& usage() const noexcept { return usage_; }
  void record(std::span<const std::uint32_t> tokens);
  void reset_usage();
  void set_usage(std::vector<std::uint64_t> usage);

 private:
  nc::Parameter entries_;
  std::vector<std::uint64_t> usage_;
};

struct QuantizationResult {
  TokenSequence tokens;
  /// Rows z_0..z_L; z_i = z_{i-1} - e_{k_i}.
  nc::Tensor residuals;
  /// z_q = e_{k_1} + ... + e_{k_L}, summed in stage order.
  nc::Tensor quantized;
};

/// Index of the entry nearest to `r` in squared Euclidean distance; ties go to
/// the lowest index.
std::uint32_t nearest_code(std::span<const double> r, const Codebook& cb);

/// L-stage greedy residual quantization of one latent vector. Pure: usage
/// counters are not touched (see Codebook::record).
QuantizationResult quantize(std::span<const double> z0, const Codebook& cb, std::size_t stages);

/// Straight-through estimator: forward value is exactly `zq`, the adjoint is
/// passed to `z0` unchanged, and nothing flows to the codes.
nc::Var straight_through(nc::Var z0, const nc::Tensor& zq);

struct DeadCodeReport {
  std::vector<std::size_t> rows;
};

/// Re-seeds every entry used fewer than `threshold` times with a randomly
/// drawn row of `latents` plus N(0, noise_std^2) noise, then resets usage.
/// `threshold == 0` is a no-op. Returns the re-seeded row indices.
DeadCodeReport reinit_dead_codes(Codebook& cb, const nc::Tensor& latents, std::uint64_t threshold, Rng& rng,
                                 double noise_std = 0.01);

/// Exponential-moving-average codebook maintenance (alternative to a
/// codebook loss). Counts start at 1 and sums at the current entries.
class EmaUpdater {
 public:
  EmaUpdater() = default;
  EmaUpdater(const Codebook& cb, double decay, double epsilon = 1e-5);

  /// `inputs` holds the pre-quantization residual of each assignment and
  /// `tokens` the code it was assigned to, one per row.
  void update(Codebook& cb, const nc::Tensor& inputs, std::span<const std::uint32_t> tokens);
  void reset_rows(const Codebook& cb, std::span<const std::size_t> rows);

  nc::Tensor& counts() noexcept { return counts_; }
  nc::Tensor& sums() noexcept { return sums_; }
  const nc::Tensor& counts() const noexcept { return counts_; }
  const nc::Tensor& sums() const noexcept { return sums_; }

 private:
  double decay_ = 0.99;
  double epsilon_ = 1e-5;
  nc::Tensor counts_;
  nc::Tensor sums_;
};

}  // namespace dfe::rvq

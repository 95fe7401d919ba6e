#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dfe/model/hyperparams.hpp"
#include "dfe/numcore/rng.hpp"
#include "dfe/numcore/tape.hpp"
#include "dfe/rvq/quantizer.hpp"

namespace dfe::model {

struct EncoderLayer {
  nc::Parameter ln1_gamma, ln1_beta;
  nc::Parameter qkv_w;           // [3H, H], packed Q|K|V, no bias
  nc::Parameter proj_w, proj_b;  // [H, H], [H]
  nc::Parameter ln2_gamma, ln2_beta;
  nc::Parameter mlp_w1, mlp_b1;  // [4H, H], [4H]
  nc::Parameter mlp_w2, mlp_b2;  // [H, 4H], [H]
};

struct EncoderParams {
  nc::Parameter in_w, in_b;  // [H, d], [H]
  nc::Parameter pos;         // [T, H]
  std::vector<EncoderLayer> layers;
  nc::Parameter out_w, out_b;  // [D, H], [D]
};

struct DecoderParams {
  nc::Parameter w;  // [input_dim, D]
  nc::Parameter b;  // [input_dim]
};

/// Batch means of the per-sample terms. `codebook` is the extra code-learning
/// term; it is not part of `total`.
struct LossBreakdown {
  double recon = 0.0;
  double commit = 0.0;
  double orth = 0.0;
  double l1 = 0.0;
  double total = 0.0;
  double codebook = 0.0;
};

/// Every stop-gradient constant of one batch forward. Replaying a forward with
/// these frozen turns the straight-through objective into an ordinary
/// differentiable function of the parameters, which is what a finite
/// difference check needs.
struct FrozenAssignment {
  std::vector<rvq::TokenSequence> tokens;  // per row
  nc::Tensor st_offset;                    // z_q - z_0, [B, D]
  std::vector<nc::Tensor> partial_sums;    // e_{k_1} + .. + e_{k_i}, i = 0..L, each [B, D]
  std::vector<nc::Tensor> selected;        // e_{k_i}, i = 1..L, each [B, D]
  std::vector<nc::Tensor> stage_inputs;    // z_{i-1}, i = 1..L, each [B, D]
};

struct BatchForward {
  nc::Var objective;  // total (+ weighted codebook term in loss mode)
  nc::Var total;
  LossBreakdown loss;
  nc::Tensor latents;         // z_0, [B, D]
  nc::Tensor reconstruction;  // psi-hat, [B, input_dim]
  FrozenAssignment assignment;
};

struct SingleForward {
  nc::Tensor reconstruction;
  rvq::TokenSequence tokens;
  LossBreakdown loss;
};

class Model {
 public:
  /// Allocates all tensors with zeros; call initialize() for random weights.
  explicit Model(Hyperparams hp);

  /// Draws every weight from `rng` in parameter order.
  void initialize(Rng& rng);

  const Hyperparams& hp() const noexcept { return hp_; }
  EncoderParams& encoder() noexcept { return enc_; }
  const EncoderParams& encoder() const noexcept { return enc_; }
  DecoderParams& decoder() noexcept { return dec_; }
  const DecoderParams& decoder() const noexcept { return dec_; }
  rvq::Codebook& codebook() noexcept { return cb_; }
  const rvq::Codebook& codebook() const noexcept { return cb_; }

  /// All trainable tensors in a fixed order (encoder, decoder, codebook).
  std::vector<nc::Parameter*> parameters();
  std::vector<const nc::Parameter*> parameters() const;

  /// Optional encoder-input standardization; empty tensors mean identity.
  void set_standardization(nc::Tensor mean, nc::Tensor scale);
  const nc::Tensor& input_mean() const noexcept { return mean_; }
  const nc::Tensor& input_scale() const noexcept { return scale_; }

  /// [B, input_dim] -> z_0 [B, D].
  nc::Var encode(nc::Tape& tape, const nc::Tensor& batch);

  /// Full forward with all loss terms. With `frozen`, token choices and all
  /// stop-gradient constants are taken from it instead of being recomputed.
  BatchForward forward(nc::Tape& tape, const nc::Tensor& batch, const FrozenAssignment* frozen = nullptr);

  SingleForward forward(std::span<const double> psi);
  nc::Tensor encode(std::span<const double> psi);
  /// W z + b for an arbitrary latent.
  nc::Tensor decode(std::span<const double> z) const;
  /// Tokens for each row of `batch` (no gradient bookkeeping).
  std::vector<rvq::TokenSequence> tokenize(const nc::Tensor& batch);

  /// decode(e_k): the face a single active code produces, bias included.
  nc::Tensor token_template(std::size_t k) const;
  /// token_template(k) - b, i.e. W e_k up to rounding. These are the exact
  /// summands of reconstruct(), so b + sum of offsets reproduces psi-hat bit
  /// for bit.
  nc::Tensor template_offset(std::size_t k) const;
  nc::Tensor template_offsets() const;  // [K, input_dim]
  /// b + offset(k_1) + ... + offset(k_L), accumulated left to right.
  nc::Tensor reconstruct(std::span<const std::uint32_t> tokens) const;

 private:
  nc::Tensor standardized(const nc::Tensor& batch) const;

  Hyperparams hp_;
  EncoderParams enc_;
  DecoderParams dec_;
  rvq::Codebook cb_;
  nc::Tensor mean_, scale_;
};

}  // namespace dfe::model

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace dfe::model {

/// Which residual the commitment term pulls towards sg(e_k):
/// `pre` uses z_{i-1} (the residual being quantized), `post` uses z_i.
enum class CommitTarget : std::uint8_t { pre = 0, post = 1 };

/// How codebook rows are learned: a codebook loss optimised by Adam, or EMA.
enum class CodebookUpdate : std::uint8_t { loss = 0, ema = 1 };

const char* to_string(CommitTarget t);
const char* to_string(CodebookUpdate u);
CommitTarget parse_commit_target(const std::string& s);
CodebookUpdate parse_codebook_update(const std::string& s);

/// Architecture, loss weights and optimisation settings. Defaults are the
/// published configuration (50-d input as 10 tokens of 5, 6x4-head encoder of
/// width 128, 4 stages over a shared 64 x 50 codebook).
struct Hyperparams {
  std::size_t input_dim = 50;
  std::size_t tokens = 10;
  std::size_t token_dim = 5;
  std::size_t hidden = 128;
  std::size_t layers = 6;
  std::size_t heads = 4;
  std::size_t latent_dim = 50;
  std::size_t codebook_size = 64;
  std::size_t stages = 4;

  double beta_commit = 0.25;
  double lambda_orth = 1.0;
  double lambda_reg = 0.1;
  double weight_decay = 1e-4;
  double lr = 1e-4;
  std::size_t batch_size = 512;
  std::size_t epochs = 500;
  std::uint64_t seed = 0;

  CommitTarget commit_target = CommitTarget::pre;
  bool orth_on_decoded = false;
  CodebookUpdate codebook_update = CodebookUpdate::loss;
  double codebook_loss_weight = 1.0;
  double ema_decay = 0.99;
  bool dead_code_reinit = true;
  std::uint64_t dead_code_threshold = 1;
  bool standardize = false;

  /// Throws ContractViolation naming the first broken invariant.
  void validate() const;

  bool operator==(const Hyperparams&) const = default;
};

}  // namespace dfe::model

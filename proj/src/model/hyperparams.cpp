#include "dfe/model/hyperparams.hpp"

#include <cmath>

#include "dfe/numcore/errors.hpp"

namespace dfe::model {

const char* to_string(CommitTarget t) { return t == CommitTarget::pre ? "pre" : "post"; }
const char* to_string(CodebookUpdate u) { return u == CodebookUpdate::loss ? "loss" : "ema"; }

CommitTarget parse_commit_target(const std::string& s) {
  if (s == "pre") return CommitTarget::pre;
  if (s == "post") return CommitTarget::post;
  throw ContractViolation("commit_target must be 'pre' or 'post', got '" + s + "'");
}

CodebookUpdate parse_codebook_update(const std::string& s) {
  if (s == "loss") return CodebookUpdate::loss;
  if (s == "ema") return CodebookUpdate::ema;
  throw ContractViolation("codebook_update must be 'loss' or 'ema', got '" + s + "'");
}

void Hyperparams::validate() const {
  auto fail = [](const std::string& what) { throw ContractViolation("hyperparameters: " + what); };
  if (tokens == 0 || token_dim == 0) fail("tokens and token_dim must be positive");
  if (tokens * token_dim != input_dim) fail("tokens * token_dim must equal input_dim");
  if (hidden == 0 || heads == 0 || hidden % heads != 0) fail("hidden must be a positive multiple of heads");
  if (latent_dim == 0) fail("latent_dim must be positive");
  if (codebook_size < 2) fail("codebook_size must be at least 2");
  if (stages < 1) fail("stages must be at least 1");
  if (batch_size == 0) fail("batch_size must be positive");
  for (double v : {beta_commit, lambda_orth, lambda_reg, weight_decay, lr, codebook_loss_weight})
    if (!(v >= 0.0) || !std::isfinite(v)) fail("loss weights and rates must be finite and non-negative");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) fail("ema_decay must lie in [0, 1)");
}

}  // namespace dfe::model

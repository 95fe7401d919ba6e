#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "dfe/model/model.hpp"
#include "dfe/rvq/quantizer.hpp"

namespace dfe::codec {

/// Row id -> token sequence, in file order.
struct TokenTable {
  std::vector<std::string> ids;
  std::vector<rvq::TokenSequence> tokens;
  std::size_t size() const noexcept { return ids.size(); }
  std::size_t stages() const noexcept { return tokens.empty() ? 0 : tokens.front().size(); }
};

void write_tokens_header(std::ostream& os, std::size_t stages);
void write_token_row(std::ostream& os, const std::string& id, const rvq::TokenSequence& tokens);
/// Reads `id,k_1,..,k_L`. Throws io::FormatError on ragged rows or bad indices.
TokenTable read_tokens(const std::string& path);

struct TokenizeOptions {
  std::size_t chunk_rows = 4096;
  std::ostream* latents = nullptr;  // optional `id,z_0,..` CSV of encoder outputs
};

/// Streams a feature file through the encoder and quantizer, writing one token
/// row per input row. Returns the number of rows. Throws io::FormatError with
/// shape_mismatch when the feature dimension differs from the model's.
std::size_t tokenize_file(const std::string& features, model::Model& model, std::ostream& tokens, const TokenizeOptions& options = {});

/// Decoded face of a single active code: W e_k + b, or the bias-free offset.
nc::Tensor token_template(const model::Model& model, std::size_t k, bool with_bias = true);

/// psi-hat for a token sequence, plus its per-token summands
/// (template_k - b), so that bias + sum(parts) reproduces psi-hat exactly.
struct Decomposition {
  nc::Tensor bias;
  std::vector<nc::Tensor> parts;
  nc::Tensor total;
};
Decomposition decompose(const model::Model& model, const rvq::TokenSequence& tokens);

}  // namespace dfe::codec

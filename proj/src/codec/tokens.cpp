#include "dfe/codec/tokens.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "dfe/numcore/binary_io.hpp"
#include "dfe/numcore/errors.hpp"
#include "dfe/train/feature_io.hpp"

namespace dfe::codec {

using io::FormatError;
using io::FormatErrorKind;

void write_tokens_header(std::ostream& os, std::size_t stages) {
  os << "id";
  for (std::size_t i = 1; i <= stages; ++i) os << ",k_" << i;
  os << '\n';
}

void write_token_row(std::ostream& os, const std::string& id, const rvq::TokenSequence& tokens) {
  os << id;
  for (std::uint32_t k : tokens) os << ',' << k;
  os << '\n';
}

TokenTable read_tokens(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io::FileError(path, "cannot open for reading");
  TokenTable out;
  std::string line;
  if (!std::getline(in, line)) return out;
  const auto header = train::split_csv(line);
  if (header.size() < 2 || header[0] != "id") throw FormatError(FormatErrorKind::malformed, path + ": header must be id,k_1,..,k_L");
  for (std::size_t i = 1; i < header.size(); ++i)
    if (header[i] != "k_" + std::to_string(i))
      throw FormatError(FormatErrorKind::malformed, path + ": header column '" + header[i] + "', expected k_" + std::to_string(i));
  const std::size_t stages = header.size() - 1;
  std::size_t ln = 1;
  while (std::getline(in, line)) {
    ++ln;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = train::split_csv(line);
    const std::string where = path + ":" + std::to_string(ln);
    if (f.size() != stages + 1)
      throw FormatError(FormatErrorKind::shape_mismatch, where + ": " + std::to_string(f.size() - 1) + " tokens, expected " + std::to_string(stages));
    rvq::TokenSequence seq(stages);
    for (std::size_t i = 0; i < stages; ++i) {
      const std::int64_t k = train::parse_int(f[i + 1], where);
      if (k < 0 || k > std::int64_t(UINT32_MAX)) throw FormatError(FormatErrorKind::malformed, where + ": token out of range");
      seq[i] = std::uint32_t(k);
    }
    out.ids.push_back(f[0]);
    out.tokens.push_back(std::move(seq));
  }
  return out;
}

std::size_t tokenize_file(const std::string& features, model::Model& model, std::ostream& tokens, const TokenizeOptions& options) {
  train::FeatureStream stream(features);
  const std::size_t dim = model.hp().input_dim;
  if (stream.dim() != 0 && stream.dim() != dim)
    throw FormatError(FormatErrorKind::shape_mismatch,
                      features + ": " + std::to_string(stream.dim()) + " features per row, model expects " + std::to_string(dim));
  write_tokens_header(tokens, model.hp().stages);
  if (options.latents) {
    *options.latents << "id";
    for (std::size_t j = 0; j < model.hp().latent_dim; ++j) *options.latents << ",z_" << j;
    *options.latents << '\n';
  }
  std::vector<std::string> ids;
  nc::Tensor rows;
  std::size_t total = 0;
  char buf[32];
  while (stream.next(std::max<std::size_t>(1, options.chunk_rows), ids, rows)) {
    nc::Tape tape(false);
    const nc::Tensor z = model.encode(tape, rows).value();
    for (std::size_t r = 0; r < ids.size(); ++r) {
      write_token_row(tokens, ids[r], rvq::quantize(z.row(r), model.codebook(), model.hp().stages).tokens);
      if (options.latents) {
        *options.latents << ids[r];
        for (double v : z.row(r)) {
          std::snprintf(buf, sizeof buf, ",%.17g", v);
          *options.latents << buf;
        }
        *options.latents << '\n';
      }
    }
    total += ids.size();
  }
  return total;
}

nc::Tensor token_template(const model::Model& model, std::size_t k, bool with_bias) {
  return with_bias ? model.token_template(k) : model.template_offset(k);
}

Decomposition decompose(const model::Model& model, const rvq::TokenSequence& tokens) {
  Decomposition d;
  d.bias = model.decoder().b.value;
  for (std::uint32_t k : tokens) {
    nc::Tensor part = model.token_template(k);
    for (std::size_t i = 0; i < part.size(); ++i) part[i] -= d.bias[i];
    d.parts.push_back(std::move(part));
  }
  d.total = model.reconstruct(tokens);
  return d;
}

}  // namespace dfe::codec

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "dfe/numcore/tensor.hpp"
#include "dfe/rvq/quantizer.hpp"

namespace dfe::analysis {

enum class EntropyNorm {
  log2k,    // H(p) / log2 K, so a uniform distribution scores 1
  literal,  // H(p) / K
};

/// Normalized Shannon entropy (bits) of a distribution over K >= 2 outcomes.
/// Throws ContractViolation for K < 2, negative entries or a sum off 1 by more than 1e-9.
double normalized_entropy(std::span<const double> p, EntropyNorm norm = EntropyNorm::log2k);

/// Token frequencies across every stage of every sequence.
std::vector<double> token_distribution(std::span<const rvq::TokenSequence> tokens, std::size_t codebook_size);

/// K-bit presence vector: bit k is set iff token k occurs in the sequence.
class BinaryCode {
 public:
  BinaryCode() = default;
  BinaryCode(const rvq::TokenSequence& tokens, std::size_t codebook_size);

  std::size_t bits() const noexcept { return bits_; }
  bool test(std::size_t k) const { return (words_[k / 64] >> (k % 64)) & 1u; }
  std::size_t popcount() const noexcept;
  std::size_t hash() const noexcept;

  bool operator==(const BinaryCode&) const = default;

 private:
  std::vector<std::uint64_t> words_;
  std::size_t bits_ = 0;
};

struct BinaryCodeHash {
  std::size_t operator()(const BinaryCode& c) const noexcept { return c.hash(); }
};

std::vector<BinaryCode> binary_codes(std::span<const rvq::TokenSequence> tokens, std::size_t codebook_size);
/// [N, K] matrix of 0/1 entries.
nc::Tensor binary_matrix(std::span<const BinaryCode> codes);

struct NmiResult {
  double value = 0.0;              // mean over all unordered column pairs
  std::size_t pairs = 0;
  std::size_t constant_pairs = 0;  // pairs scored 0 because a column never varies
};

/// Average pairwise normalized mutual information of the columns of a binary
/// [N, K] matrix (N >= 2, K >= 2), base 2, I / sqrt(H_i H_j).
NmiResult avg_nmi(const nc::Tensor& x);

}  // namespace dfe::analysis

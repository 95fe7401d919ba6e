#include "dfe/analysis/diversity.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <string>

#include "dfe/numcore/errors.hpp"

namespace dfe::analysis {

using nc::Tensor;

double normalized_entropy(std::span<const double> p, EntropyNorm norm) {
  const std::size_t k = p.size();
  if (k < 2) throw ContractViolation("normalized_entropy: need at least 2 outcomes, got " + std::to_string(k));
  double sum = 0.0, h = 0.0, level = 0.0;
  std::size_t support = 0;
  bool flat = true;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ContractViolation("normalized_entropy: probabilities must be finite and nonnegative");
    sum += v;
    if (v > 0.0) {
      h -= v * std::log2(v);
      flat = flat && (support == 0 || v == level);
      level = v;
      ++support;
    }
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ContractViolation("normalized_entropy: probabilities sum to " + std::to_string(sum));
  // uniform over its support: exactly log2 of the support size
  if (flat) h = std::log2(double(support));
  return norm == EntropyNorm::log2k ? h / std::log2(double(k)) : h / double(k);
}

std::vector<double> token_distribution(std::span<const rvq::TokenSequence> tokens, std::size_t codebook_size) {
  std::vector<double> p(codebook_size, 0.0);
  std::size_t total = 0;
  for (const auto& seq : tokens)
    for (std::uint32_t k : seq) {
      if (k >= codebook_size) throw ContractViolation("token " + std::to_string(k) + " outside a codebook of " + std::to_string(codebook_size));
      p[k] += 1.0;
      ++total;
    }
  if (total == 0) throw ContractViolation("token_distribution: no tokens");
  for (double& v : p) v /= double(total);
  return p;
}

BinaryCode::BinaryCode(const rvq::TokenSequence& tokens, std::size_t codebook_size)
    : words_((codebook_size + 63) / 64, 0), bits_(codebook_size) {
  for (std::uint32_t k : tokens) {
    if (k >= codebook_size) throw ContractViolation("token " + std::to_string(k) + " outside a codebook of " + std::to_string(codebook_size));
    words_[k / 64] |= std::uint64_t(1) << (k % 64);
  }
}

std::size_t BinaryCode::popcount() const noexcept {
  std::size_t n = 0;
  for (std::uint64_t w : words_) n += std::size_t(std::popcount(w));
  return n;
}

std::size_t BinaryCode::hash() const noexcept {
  // FNV-1a over the words
  std::uint64_t h = 1469598103934665603ull;
  for (std::uint64_t w : words_) {
    h ^= w;
    h *= 1099511628211ull;
  }
  return std::size_t(h ^ bits_);
}

std::vector<BinaryCode> binary_codes(std::span<const rvq::TokenSequence> tokens, std::size_t codebook_size) {
  std::vector<BinaryCode> out;
  out.reserve(tokens.size());
  for (const auto& seq : tokens) out.emplace_back(seq, codebook_size);
  return out;
}

Tensor binary_matrix(std::span<const BinaryCode> codes) {
  const std::size_t k = codes.empty() ? 0 : codes.front().bits();
  Tensor x({codes.size(), k});
  for (std::size_t r = 0; r < codes.size(); ++r) {
    if (codes[r].bits() != k) throw ContractViolation("binary_matrix: codes of different widths");
    for (std::size_t c = 0; c < k; ++c) x.at(r, c) = codes[r].test(c) ? 1.0 : 0.0;
  }
  return x;
}

namespace {

double entropy_of_counts(std::span<const std::size_t> counts, double n) {
  double h = 0.0;
  for (std::size_t c : counts)
    if (c > 0) {
      const double p = double(c) / n;
      h -= p * std::log2(p);
    }
  return h;
}

}  // namespace

NmiResult avg_nmi(const Tensor& x) {
  if (x.rank() != 2 || x.rows() < 2 || x.cols() < 2) throw ContractViolation("avg_nmi: need an N x K matrix with N >= 2 and K >= 2");
  const std::size_t n = x.rows(), k = x.cols();
  std::vector<std::vector<std::uint8_t>> col(k, std::vector<std::uint8_t>(n));
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < k; ++c) {
      const double v = x.at(r, c);
      if (v != 0.0 && v != 1.0) throw ContractViolation("avg_nmi: entries must be 0 or 1");
      col[c][r] = v == 1.0;
    }
  std::vector<double> h(k);
  std::vector<std::size_t> ones(k, 0);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::uint8_t b : col[c]) ones[c] += b;
    const std::size_t counts[2] = {n - ones[c], ones[c]};
    h[c] = entropy_of_counts(counts, double(n));
  }
  NmiResult out;
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j) {
      ++out.pairs;
      if (h[i] == 0.0 || h[j] == 0.0) {
        ++out.constant_pairs;
        continue;
      }
      std::size_t both = 0;
      for (std::size_t r = 0; r < n; ++r) both += col[i][r] & col[j][r];
      // cells 00, 01, 10, 11
      const std::size_t joint[4] = {n - ones[i] - ones[j] + both, ones[j] - both, ones[i] - both, both};
      const double mi = h[i] + h[j] - entropy_of_counts(joint, double(n));
      sum += std::clamp(mi / std::sqrt(h[i] * h[j]), 0.0, 1.0);
    }
  out.value = sum / double(out.pairs);
  return out;
}

}  // namespace dfe::analysis

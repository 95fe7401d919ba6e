#include "dfe/numcore/binary_io.hpp"

namespace dfe::io {

const char* to_string(FormatErrorKind kind) {
  switch (kind) {
    case FormatErrorKind::truncated: return "truncated";
    case FormatErrorKind::bad_magic: return "bad_magic";
    case FormatErrorKind::version_skew: return "version_skew";
    case FormatErrorKind::shape_mismatch: return "shape_mismatch";
    case FormatErrorKind::malformed: return "malformed";
  }
  return "unknown";
}

void BinaryReader::truncated() const { throw FormatError(FormatErrorKind::truncated, context_ + ": unexpected end of data"); }

std::string BinaryReader::bytes(std::size_t n) {
  std::string out(n, '\0');
  if (n > 0 && !is_.read(out.data(), std::streamsize(n))) truncated();
  return out;
}

std::uint8_t BinaryReader::u8() {
  const int c = is_.get();
  if (c == std::char_traits<char>::eof()) truncated();
  return std::uint8_t(c);
}

std::uint32_t BinaryReader::u32() {
  unsigned char b[4];
  if (!is_.read(reinterpret_cast<char*>(b), 4)) truncated();
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

std::uint64_t BinaryReader::u64() {
  const std::uint64_t lo = u32();
  const std::uint64_t hi = u32();
  return lo | (hi << 32);
}

std::string BinaryReader::str(std::size_t max_len) {
  const std::uint32_t n = u32();
  if (n > max_len) throw FormatError(FormatErrorKind::malformed, context_ + ": string length " + std::to_string(n) + " too large");
  return bytes(n);
}

bool BinaryReader::at_end() { return is_.peek() == std::char_traits<char>::eof(); }

}  // namespace dfe::io

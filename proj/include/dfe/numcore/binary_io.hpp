#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace dfe::io {

enum class FormatErrorKind { truncated, bad_magic, version_skew, shape_mismatch, malformed };

const char* to_string(FormatErrorKind kind);

/// Structured failure while reading one of the toolkit's binary or text formats.
class FormatError : public std::runtime_error {
 public:
  FormatError(FormatErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
  FormatErrorKind kind() const noexcept { return kind_; }

 private:
  FormatErrorKind kind_;
};

/// A file could not be opened, read or written.
class FileError : public std::runtime_error {
 public:
  FileError(const std::string& path, const std::string& what) : std::runtime_error(path + ": " + what), path_(path) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// Little-endian writer independent of host byte order.
class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& os) : os_(os) {}

  void bytes(std::string_view b) { os_.write(b.data(), std::streamsize(b.size())); }
  void u8(std::uint8_t v) { os_.put(char(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) os_.put(char((v >> (8 * i)) & 0xFF));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) os_.put(char((v >> (8 * i)) & 0xFF));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u32(std::uint32_t(s.size()));
    bytes(s);
  }

 private:
  std::ostream& os_;
};

class BinaryReader {
 public:
  BinaryReader(std::istream& is, std::string context) : is_(is), context_(std::move(context)) {}

  std::string bytes(std::size_t n);
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  /// Length-prefixed string; lengths above `max_len` are rejected as malformed.
  std::string str(std::size_t max_len = 1u << 24);
  bool at_end();

 private:
  [[noreturn]] void truncated() const;

  std::istream& is_;
  std::string context_;
};

}  // namespace dfe::io

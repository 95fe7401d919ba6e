#include "dfe/numcore/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <sstream>

#include "dfe/numcore/errors.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace dfe::nc {

#if defined(__GLIBC__)
namespace {
// Training churns through same-sized multi-megabyte buffers every step. Keep
// them on the heap instead of returning them to the kernel after each free.
const bool heap_tuned = [] {
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
  mallopt(M_TOP_PAD, 64 << 20);
  return true;
}();
}  // namespace
#endif

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  if (shape_size(shape_) != data_.size()) {
    throw ContractViolation("Tensor: shape " + shape_string(shape_) + " does not match " +
                            std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::uninitialized(Shape shape) {
  Tensor t;
  t.data_.resize(shape_size(shape));
  t.shape_ = std::move(shape);
  return t;
}

Tensor Tensor::vector(std::vector<double> v) {
  Shape s{v.size()};
  return Tensor(std::move(s), std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
  return Tensor(Shape{rows, cols}, std::move(data));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) throw ContractViolation("Tensor::dim: axis out of range");
  return shape_[axis];
}

double Tensor::item() const {
  if (data_.size() != 1) throw ContractViolation("Tensor::item: tensor is not a scalar");
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const& {
  Tensor out = *this;
  return std::move(out).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(Shape shape) && {
  if (shape_size(shape) != data_.size()) {
    throw ContractViolation("reshape: " + shape_string(shape_) + " -> " + shape_string(shape));
  }
  shape_ = std::move(shape);
  return std::move(*this);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const noexcept {
  // exponent all ones means inf or nan; branch-free so it vectorizes
  std::uint64_t bad = 0;
  for (double v : data_) bad |= std::uint64_t((std::bit_cast<std::uint64_t>(v) & 0x7FF0000000000000ull) == 0x7FF0000000000000ull);
  return bad == 0;
}

}  // namespace dfe::nc

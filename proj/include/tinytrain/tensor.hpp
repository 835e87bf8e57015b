#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace tinytrain {

enum class DType : std::uint8_t { f32, f64 };

inline std::size_t dtype_size(DType t) { return t == DType::f32 ? 4 : 8; }
const char* dtype_name(DType t);
DType parse_dtype(const std::string& s);

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense row-major tensor. Values are held as doubles; a tensor tagged f32
// only ever holds values exactly representable in single precision, so
// storage semantics match a float buffer while accumulation stays double.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, DType dtype = DType::f64);
  Tensor(Shape shape, std::vector<double> data, DType dtype = DType::f64);

  static Tensor zeros(Shape shape, DType dtype = DType::f64) { return Tensor(std::move(shape), dtype); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t numel() const noexcept { return data_.size(); }
  DType dtype() const noexcept { return dtype_; }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double* ptr() noexcept { return data_.data(); }
  const double* ptr() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Round every element to the tensor's storage precision.
  void quantize();
  // Returns a copy carrying a different dtype tag (values rounded if narrowing).
  Tensor as(DType dtype) const;

  // Rows [begin, end) along the leading axis.
  Tensor slice_rows(std::size_t begin, std::size_t end) const;
  Tensor reshaped(Shape shape) const;

  std::size_t bytes() const noexcept { return data_.size() * dtype_size(dtype_); }

  bool bit_equal(const Tensor& other) const;

 private:
  Shape shape_;
  std::vector<double> data_;
  DType dtype_ = DType::f64;
};

inline double round_to(DType t, double v) {
  return t == DType::f32 ? static_cast<double>(static_cast<float>(v)) : v;
}

// Concatenate along the leading axis; trailing dims must match.
Tensor concat_rows(const Tensor& a, const Tensor& b);

}  // namespace tinytrain

#include "tinytrain/tensor.hpp"

#include <cstring>
#include <functional>
#include <numeric>

#include "tinytrain/errors.hpp"

namespace tinytrain {

const char* dtype_name(DType t) { return t == DType::f32 ? "f32" : "f64"; }

DType parse_dtype(const std::string& s) {
  if (s == "f32" || s == "float32" || s == "single") return DType::f32;
  if (s == "f64" || s == "float64" || s == "double") return DType::f64;
  throw ValidationError("unknown dtype '" + s + "'");
}

std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, DType dtype) : shape_(std::move(shape)), dtype_(dtype) {
  for (auto d : shape_)
    if (d == 0) throw ContractError("tensor dimensions must be positive, got " + shape_str(shape_));
  data_.assign(shape_numel(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data, DType dtype)
    : shape_(std::move(shape)), data_(std::move(data)), dtype_(dtype) {
  if (shape_numel(shape_) != data_.size())
    throw ContractError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                        shape_str(shape_));
  quantize();
}

void Tensor::quantize() {
  if (dtype_ == DType::f32)
    for (auto& v : data_) v = round_to(DType::f32, v);
}

Tensor Tensor::as(DType dtype) const {
  Tensor t = *this;
  t.dtype_ = dtype;
  t.quantize();
  return t;
}

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
  if (shape_.empty() || end > shape_[0] || begin >= end)
    throw ContractError("slice_rows out of range for shape " + shape_str(shape_));
  Shape s = shape_;
  s[0] = end - begin;
  const std::size_t row = numel() / shape_[0];
  std::vector<double> d(data_.begin() + static_cast<std::ptrdiff_t>(begin * row),
                        data_.begin() + static_cast<std::ptrdiff_t>(end * row));
  Tensor t;
  t.shape_ = std::move(s);
  t.data_ = std::move(d);
  t.dtype_ = dtype_;
  return t;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel())
    throw ContractError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  Tensor t = *this;
  t.shape_ = std::move(shape);
  return t;
}

bool Tensor::bit_equal(const Tensor& other) const {
  return shape_ == other.shape_ && dtype_ == other.dtype_ &&
         (data_.empty() || std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0);
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank() || a.rank() == 0)
    throw ContractError("concat_rows rank mismatch");
  for (std::size_t i = 1; i < a.rank(); ++i)
    if (a.dim(i) != b.dim(i)) throw ContractError("concat_rows trailing shape mismatch");
  Shape s = a.shape();
  s[0] += b.dim(0);
  std::vector<double> d(a.data().begin(), a.data().end());
  d.insert(d.end(), b.data().begin(), b.data().end());
  return Tensor(std::move(s), std::move(d), a.dtype());
}

}  // namespace tinytrain

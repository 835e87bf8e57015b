#pragma once

#include <cstdint>
#include <map>
#include <random>

#include "tinytrain/model_spec.hpp"
#include "tinytrain/tensor.hpp"

namespace tinytrain {

struct LayerParams {
  Tensor weight;
  Tensor bias;
};

// Weight/bias tensors keyed by layer index. Only layers carrying weights have entries.
class ParamStore {
 public:
  ParamStore() = default;
  explicit ParamStore(DType dtype) : dtype_(dtype) {}

  // He-style uniform init scaled by fan-in; biases start at zero.
  static ParamStore initialize(const ModelSpec& spec, DType dtype, std::mt19937_64& rng);

  DType dtype() const noexcept { return dtype_; }
  std::uint64_t version() const noexcept { return version_; }
  void bump_version() noexcept { ++version_; }
  void set_version(std::uint64_t v) noexcept { version_ = v; }

  bool contains(std::size_t layer) const { return entries_.count(layer) != 0; }
  LayerParams& at(std::size_t layer);
  const LayerParams& at(std::size_t layer) const;
  void set(std::size_t layer, LayerParams p);

  const std::map<std::size_t, LayerParams>& entries() const noexcept { return entries_; }

  // Throws StructuralError unless every weighted layer has exactly the shapes the model spec dictates.
  void validate(const ModelSpec& spec) const;

  bool bit_equal(const ParamStore& other) const;
  // FNV-1a over the raw value bytes of every tensor, in layer order.
  std::uint64_t digest() const;

 private:
  DType dtype_ = DType::f32;
  std::uint64_t version_ = 0;
  std::map<std::size_t, LayerParams> entries_;
};

struct Model {
  ModelSpec spec;
  ParamStore params;
};

}  // namespace tinytrain

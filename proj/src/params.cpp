#include "tinytrain/params.hpp"

#include <cmath>
#include <cstring>

#include "tinytrain/errors.hpp"

namespace tinytrain {

ParamStore ParamStore::initialize(const ModelSpec& spec, DType dtype, std::mt19937_64& rng) {
  ParamStore store(dtype);
  for (auto i : spec.parametric_layers()) {
    const auto& l = spec.layer(i);
    LayerParams p{Tensor(l.weight_shape(), dtype), Tensor({l.kind.out_channels}, dtype)};
    const double fan_in = static_cast<double>(l.weights_per_channel());
    const double bound = std::sqrt(6.0 / fan_in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : p.weight.data()) v = dist(rng);
    p.weight.quantize();
    store.entries_.emplace(i, std::move(p));
  }
  return store;
}

LayerParams& ParamStore::at(std::size_t layer) {
  auto it = entries_.find(layer);
  if (it == entries_.end()) throw ContractError("no parameters for layer " + std::to_string(layer));
  return it->second;
}

const LayerParams& ParamStore::at(std::size_t layer) const {
  auto it = entries_.find(layer);
  if (it == entries_.end()) throw ContractError("no parameters for layer " + std::to_string(layer));
  return it->second;
}

void ParamStore::set(std::size_t layer, LayerParams p) { entries_[layer] = std::move(p); }

void ParamStore::validate(const ModelSpec& spec) const {
  const auto weighted = spec.parametric_layers();
  if (weighted.size() != entries_.size())
    throw StructuralError("parameter store has " + std::to_string(entries_.size()) + " entries, model spec needs " +
                          std::to_string(weighted.size()));
  for (auto i : weighted) {
    const auto& l = spec.layer(i);
    auto it = entries_.find(i);
    if (it == entries_.end()) throw StructuralError("missing parameters for layer '" + l.name + "'");
    if (it->second.weight.shape() != l.weight_shape())
      throw StructuralError("layer '" + l.name + "' weight shape " + shape_str(it->second.weight.shape()) +
                            " != " + shape_str(l.weight_shape()));
    if (it->second.bias.shape() != Shape{l.kind.out_channels})
      throw StructuralError("layer '" + l.name + "' bias shape " + shape_str(it->second.bias.shape()));
  }
}

bool ParamStore::bit_equal(const ParamStore& o) const {
  if (entries_.size() != o.entries_.size()) return false;
  for (const auto& [i, p] : entries_) {
    auto it = o.entries_.find(i);
    if (it == o.entries_.end()) return false;
    if (!p.weight.bit_equal(it->second.weight) || !p.bias.bit_equal(it->second.bias)) return false;
  }
  return true;
}

std::uint64_t ParamStore::digest() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](const Tensor& t) {
    for (double v : t.data()) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof v);
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ULL;
      }
    }
  };
  for (const auto& [i, p] : entries_) {
    mix(p.weight);
    mix(p.bias);
  }
  return h;
}

}  // namespace tinytrain

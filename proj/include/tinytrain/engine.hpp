#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <vector>

#include "tinytrain/params.hpp"
#include "tinytrain/tensor.hpp"

namespace tinytrain {

// Output channels (sorted, unique) of one layer whose weight gradients are wanted.
struct LayerSelection {
  std::vector<std::size_t> channels;
  bool bias = true;
};

using Selection = std::map<std::size_t, LayerSelection>;

// Every channel of every weighted layer.
Selection full_selection(const ModelSpec& spec);

struct PassCounters {
  std::uint64_t forward_calls = 0;
  std::uint64_t backward_calls = 0;
  std::uint64_t forward_macs = 0;
  std::uint64_t backward_macs = 0;
};

// Tensors saved by forward() for a later backward(). Inputs are kept only for
// layers with weight gradients; relu6 inputs only where gradients must cross;
// outputs only for layers whose activation gradients were requested.
class ActivationCache {
 public:
  ActivationCache() = default;
  explicit ActivationCache(Selection trainable, std::set<std::size_t> observed = {});

  const Selection& trainable() const noexcept { return trainable_; }
  const std::set<std::size_t>& observed() const noexcept { return observed_; }
  // Lowest layer index backward() needs to reach, or -1 when nothing is requested.
  std::ptrdiff_t earliest() const noexcept { return earliest_; }

  std::size_t batch_count() const noexcept { return batch_count_; }
  std::size_t stored_tensor_count() const noexcept {
    return inputs_.size() + relu_inputs_.size() + outputs_.size();
  }

  const std::map<std::size_t, Tensor>& inputs() const noexcept { return inputs_; }
  const std::map<std::size_t, Tensor>& outputs() const noexcept { return outputs_; }

 private:
  friend Tensor forward(const Model&, const Tensor&, ActivationCache*, PassCounters*);
  friend struct BackwardPass;

  Selection trainable_;
  std::set<std::size_t> observed_;
  std::ptrdiff_t earliest_ = -1;
  std::size_t batch_count_ = 0;
  std::map<std::size_t, Tensor> inputs_;
  std::map<std::size_t, Tensor> relu_inputs_;
  std::map<std::size_t, Tensor> outputs_;
};

struct LayerGrad {
  Tensor weight;  // full layer shape; rows outside `channels` stay zero
  Tensor bias;
  std::vector<std::size_t> channels;
  bool has_bias = true;
};

struct GradientSet {
  std::map<std::size_t, LayerGrad> layers;
};

// Called once per observed layer during backward with its saved output a and dL/da.
using ActivationGradSink = std::function<void(std::size_t layer, const Tensor& activation, const Tensor& grad)>;

// input: [N, C, H, W] (or [N, F]); returns the final node output [N, ...].
Tensor forward(const Model& model, const Tensor& input, ActivationCache* cache = nullptr,
               PassCounters* counters = nullptr);

// loss_grad: dL/d(output), same shape as forward()'s result. Gradients are double precision.
GradientSet backward(const Model& model, const ActivationCache& cache, const Tensor& loss_grad,
                     const ActivationGradSink& sink = {}, PassCounters* counters = nullptr);

struct SgdMomentum {
  double lr = 1e-3;
  double momentum = 0.9;
};

// Velocity buffers, created lazily for the layers that actually get updated.
struct VelocityState {
  std::map<std::size_t, LayerGrad> layers;
};

// v <- momentum*v + g ; w <- w - lr*v on the selected channels only. Everything
// outside `grads` (or outside each layer's channel list) is left untouched.
void sgd_momentum_step(const ModelSpec& spec, ParamStore& params, const GradientSet& grads, const SgdMomentum& opt,
                       VelocityState& velocity);

}  // namespace tinytrain

#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "tinytrain/engine.hpp"
#include "tinytrain/tensor.hpp"

namespace tinytrain {

struct LayerFisher {
  std::size_t layer = 0;
  std::vector<double> deltas;  // one per output channel
  double potential = 0.0;      // sum of deltas, in channel order
};

struct FisherReport {
  std::vector<LayerFisher> per_layer;  // ascending layer index
  std::size_t sample_count = 0;
  double loss = 0.0;

  const LayerFisher* find(std::size_t layer) const;
};

// Labelled few-shot batch: prototypes come from `support`, the loss is scored on `query`.
struct FewShotBatch {
  const Tensor* support = nullptr;
  std::span<const std::size_t> support_labels;
  const Tensor* query = nullptr;
  std::span<const std::size_t> query_labels;
  std::size_t way = 0;
};

struct FisherOptions {
  double temperature = 0.1;
  double loss_scale = 1.0;
};

// Raw a and g per observed layer, for independent recomputation.
struct FisherDump {
  std::map<std::size_t, Tensor> activations;
  std::map<std::size_t, Tensor> gradients;
};

// Activation-space Fisher information of every weighted layer from a single
// forward/backward over support + query. Activations are the layer outputs
// (pre-nonlinearity); a channel's D positions are its spatial plane.
FisherReport fisher_pass(const Model& model, const FewShotBatch& batch, const FisherOptions& options = {},
                         PassCounters* counters = nullptr, FisherDump* dump = nullptr);

// delta_o = 1/(2N) * sum_n (sum_d a_nd g_nd)^2 for a, g shaped [N, C, ...].
std::vector<double> channel_fisher(const Tensor& activation, const Tensor& grad);

}  // namespace tinytrain

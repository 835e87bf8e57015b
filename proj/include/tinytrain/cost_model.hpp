#pragma once

#include <cstdint>
#include <vector>

#include "tinytrain/plan.hpp"

namespace tinytrain {

struct LayerCost {
  std::size_t layer = 0;
  std::uint64_t model_mem = 0;
  std::uint64_t optimiser_mem = 0;
  std::uint64_t activation_mem = 0;
  std::uint64_t backward_macs = 0;  // weight-gradient + input-gradient MACs of this layer
};

// Backward-pass cost of an update plan. Forward-pass memory is not counted.
struct CostReport {
  std::uint64_t model_mem = 0;       // bytes of the selected weights (and biases)
  std::uint64_t optimiser_mem = 0;   // gradient + momentum buffers, 2x model_mem
  std::uint64_t activation_mem = 0;  // saved inputs of selected layers, times batch
  std::uint64_t backward_macs = 0;
  std::uint64_t reference_macs = 0;  // forward MACs of the whole model, times batch
  std::size_t batch = 1;
  DType dtype = DType::f32;
  std::vector<LayerCost> per_layer;  // layers with any non-zero component

  std::uint64_t total_mem() const noexcept { return model_mem + optimiser_mem + activation_mem; }
};

// Gradients reach every layer after the earliest selected one, so those layers pay
// their input-gradient MACs; the earliest selected layer itself does not.
CostReport plan_cost(const ModelSpec& spec, const UpdatePlan& plan, std::size_t batch = 1, DType dtype = DType::f32);

// Inclusive on both bounds. Fractional MAC limits resolve against reference_macs.
bool fits(const CostReport& report, const Budget& budget);

std::uint64_t resolve_mac_limit(const MacLimit& limit, std::uint64_t reference_macs);

}  // namespace tinytrain

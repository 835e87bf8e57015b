#include "tinytrain/cost_model.hpp"

#include <cmath>
#include <limits>

#include "tinytrain/errors.hpp"

namespace tinytrain {

namespace {

std::uint64_t output_positions(const Layer& l) {
  return l.out_shape.size() == 3 ? std::uint64_t{l.out_shape[1]} * l.out_shape[2] : 1;
}

}  // namespace

CostReport plan_cost(const ModelSpec& spec, const UpdatePlan& plan, std::size_t batch, DType dtype) {
  if (batch == 0) throw ContractError("cost batch must be at least 1");
  validate_plan(spec, plan);
  CostReport r;
  r.batch = batch;
  r.dtype = dtype;
  r.reference_macs = spec.total_macs() * batch;
  const std::uint64_t scalar = dtype_size(dtype);
  const std::size_t earliest = plan.earliest_layer();

  for (std::size_t i = 0; i < spec.layer_count(); ++i) {
    const auto& l = spec.layer(i);
    LayerCost c;
    c.layer = i;
    if (const PlanEntry* e = plan.find(i)) {
      const std::uint64_t k = e->channels.size();
      const std::uint64_t weights = k * l.weights_per_channel() + (e->bias ? k : 0);
      c.model_mem = weights * scalar;
      c.optimiser_mem = 2 * c.model_mem;
      c.activation_mem = shape_numel(l.in_shape) * scalar * batch;
      c.backward_macs += k * l.weights_per_channel() * output_positions(l) * batch;
    }
    if (earliest != SIZE_MAX && i > earliest) c.backward_macs += l.mac_count * batch;
    if (c.model_mem || c.optimiser_mem || c.activation_mem || c.backward_macs) {
      r.model_mem += c.model_mem;
      r.optimiser_mem += c.optimiser_mem;
      r.activation_mem += c.activation_mem;
      r.backward_macs += c.backward_macs;
      r.per_layer.push_back(c);
    }
  }
  return r;
}

std::uint64_t resolve_mac_limit(const MacLimit& limit, std::uint64_t reference_macs) {
  switch (limit.kind) {
    case MacLimit::Kind::unbounded: return std::numeric_limits<std::uint64_t>::max();
    case MacLimit::Kind::absolute: return static_cast<std::uint64_t>(limit.value);
    case MacLimit::Kind::fraction: return static_cast<std::uint64_t>(std::floor(limit.value * static_cast<double>(reference_macs)));
  }
  return 0;
}

bool fits(const CostReport& report, const Budget& budget) {
  if (budget.mem_bytes && report.total_mem() > *budget.mem_bytes) return false;
  return report.backward_macs <= resolve_mac_limit(budget.mac, report.reference_macs);
}

}  // namespace tinytrain

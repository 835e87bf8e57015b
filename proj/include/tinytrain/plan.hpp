#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tinytrain/engine.hpp"
#include "tinytrain/model_spec.hpp"

namespace tinytrain {

// Backward-pass compute budget: absolute MACs or a fraction of the model's forward MACs.
struct MacLimit {
  enum class Kind { unbounded, absolute, fraction };
  Kind kind = Kind::unbounded;
  double value = 0.0;

  static MacLimit unbounded() { return {}; }
  static MacLimit absolute(std::uint64_t macs) { return {Kind::absolute, static_cast<double>(macs)}; }
  static MacLimit fraction(double f) { return {Kind::fraction, f}; }

  std::string to_string() const;
  static MacLimit parse(const std::string& text);
};

struct Budget {
  std::optional<std::uint64_t> mem_bytes;  // empty = unbounded
  MacLimit mac;

  static Budget unbounded() { return {}; }
  bool is_unbounded() const noexcept { return !mem_bytes && mac.kind == MacLimit::Kind::unbounded; }
  // Throws ValidationError unless every bound is strictly positive.
  void validate() const;
};

struct LayerScore {
  std::size_t layer = 0;
  double potential = 0.0;
  double norm_params = 0.0;
  double norm_macs = 0.0;
  double score = 0.0;
};

struct PlanEntry {
  std::size_t layer = 0;
  std::vector<std::size_t> channels;  // sorted ascending
  bool bias = true;
};

struct UpdatePlan {
  std::vector<PlanEntry> entries;  // in the order they were accepted
  Budget budget;
  double channel_ratio = 1.0;
  std::uint64_t seed = 0;
  std::string source = "none";
  std::vector<LayerScore> scores;
  bool budget_infeasible = false;
  bool zero_potential = false;

  bool empty() const noexcept { return entries.empty(); }
  const PlanEntry* find(std::size_t layer) const;
  Selection to_selection() const;
  std::size_t earliest_layer() const;
};

// Throws StructuralError when entries name missing layers, channels out of range,
// empty channel sets, or the same layer twice.
void validate_plan(const ModelSpec& spec, const UpdatePlan& plan);

UpdatePlan full_plan(const ModelSpec& spec);
UpdatePlan last_layer_plan(const ModelSpec& spec);

}  // namespace tinytrain

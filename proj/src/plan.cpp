#include "tinytrain/plan.hpp"

#include <charconv>
#include <cmath>
#include <set>
#include <sstream>

#include "tinytrain/errors.hpp"

namespace tinytrain {

std::string MacLimit::to_string() const {
  switch (kind) {
    case Kind::unbounded: return "unbounded";
    case Kind::absolute: return std::to_string(static_cast<std::uint64_t>(value));
    case Kind::fraction: break;
  }
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, value);  // shortest round-trip form
  return std::string(buf, r.ptr) + "x";
}

// "unbounded", an integer MAC count, "<f>x" for a fraction of forward MACs, or "<p>%".
MacLimit MacLimit::parse(const std::string& text) {
  if (text == "unbounded" || text == "none" || text.empty()) return unbounded();
  try {
    std::size_t used = 0;
    if (text.back() == '%') {
      const double v = std::stod(text.substr(0, text.size() - 1), &used);
      if (used != text.size() - 1) throw ValidationError("bad MAC budget '" + text + "'");
      return fraction(v / 100.0);
    }
    if (text.back() == 'x') {
      const double v = std::stod(text.substr(0, text.size() - 1), &used);
      if (used != text.size() - 1) throw ValidationError("bad MAC budget '" + text + "'");
      return fraction(v);
    }
    const auto v = std::stoull(text, &used);
    if (used != text.size()) throw ValidationError("bad MAC budget '" + text + "'");
    return absolute(v);
  } catch (const std::logic_error&) {
    throw ValidationError("bad MAC budget '" + text + "'");
  }
}

void Budget::validate() const {
  if (mem_bytes && *mem_bytes == 0) throw ValidationError("memory budget must be positive or unbounded");
  if (mac.kind != MacLimit::Kind::unbounded && !(mac.value > 0.0 && std::isfinite(mac.value)))
    throw ValidationError("MAC budget must be positive or unbounded");
}

const PlanEntry* UpdatePlan::find(std::size_t layer) const {
  for (const auto& e : entries)
    if (e.layer == layer) return &e;
  return nullptr;
}

Selection UpdatePlan::to_selection() const {
  Selection s;
  for (const auto& e : entries) s[e.layer] = LayerSelection{e.channels, e.bias};
  return s;
}

std::size_t UpdatePlan::earliest_layer() const {
  std::size_t m = SIZE_MAX;
  for (const auto& e : entries) m = std::min(m, e.layer);
  return m;
}

void validate_plan(const ModelSpec& spec, const UpdatePlan& plan) {
  std::set<std::size_t> seen;
  for (const auto& e : plan.entries) {
    if (e.layer >= spec.layer_count())
      throw StructuralError("plan names layer " + std::to_string(e.layer) + " but the model has " +
                            std::to_string(spec.layer_count()));
    const auto& l = spec.layer(e.layer);
    if (!l.kind.has_weights()) throw StructuralError("plan names layer '" + l.name + "' which has no weights");
    if (!seen.insert(e.layer).second) throw StructuralError("plan names layer '" + l.name + "' twice");
    if (e.channels.empty()) throw StructuralError("plan entry for layer '" + l.name + "' selects no channels");
    for (std::size_t j = 0; j < e.channels.size(); ++j) {
      if (e.channels[j] >= l.kind.out_channels)
        throw StructuralError("plan channel " + std::to_string(e.channels[j]) + " out of range for layer '" + l.name +
                              "'");
      if (j && e.channels[j] <= e.channels[j - 1])
        throw StructuralError("plan channels for layer '" + l.name + "' must be sorted and unique");
    }
  }
}

UpdatePlan full_plan(const ModelSpec& spec) {
  UpdatePlan plan;
  plan.source = "full";
  for (const auto& [i, ls] : full_selection(spec)) plan.entries.push_back({i, ls.channels, true});
  return plan;
}

UpdatePlan last_layer_plan(const ModelSpec& spec) {
  UpdatePlan plan;
  plan.source = "last-layer";
  const auto weighted = spec.parametric_layers();
  if (weighted.empty()) return plan;
  const auto i = weighted.back();
  PlanEntry e{i, {}, true};
  for (std::size_t c = 0; c < spec.layer(i).kind.out_channels; ++c) e.channels.push_back(c);
  plan.entries.push_back(std::move(e));
  return plan;
}

}  // namespace tinytrain

#include "tinytrain/report.hpp"

#include "tinytrain/errors.hpp"

namespace tinytrain {

using nlohmann::json;

json to_json(const Budget& b) {
  json j;
  j["mem_bytes"] = b.mem_bytes ? json(*b.mem_bytes) : json(nullptr);
  j["mac_limit"] = b.mac.to_string();
  j["inclusive"] = true;
  return j;
}

Budget budget_from_json(const json& j) {
  Budget b;
  if (j.contains("mem_bytes") && !j["mem_bytes"].is_null()) b.mem_bytes = j["mem_bytes"].get<std::uint64_t>();
  if (j.contains("mac_limit")) {
    const auto& m = j["mac_limit"];
    b.mac = m.is_string() ? MacLimit::parse(m.get<std::string>()) : MacLimit::absolute(m.get<std::uint64_t>());
  }
  return b;
}

json to_json(const FisherReport& r) {
  json layers = json::array();
  for (const auto& l : r.per_layer) layers.push_back({{"layer", l.layer}, {"potential", l.potential}, {"deltas", l.deltas}});
  return {{"sample_count", r.sample_count}, {"loss", r.loss}, {"layers", std::move(layers)}};
}

json to_json(const CostReport& r) {
  json layers = json::array();
  for (const auto& l : r.per_layer)
    layers.push_back({{"layer", l.layer},
                      {"model_mem", l.model_mem},
                      {"optimiser_mem", l.optimiser_mem},
                      {"activation_mem", l.activation_mem},
                      {"backward_macs", l.backward_macs}});
  return {{"model_mem", r.model_mem},
          {"optimiser_mem", r.optimiser_mem},
          {"activation_mem", r.activation_mem},
          {"total_mem", r.total_mem()},
          {"backward_macs", r.backward_macs},
          {"reference_macs", r.reference_macs},
          {"batch", r.batch},
          {"dtype", dtype_name(r.dtype)},
          {"per_layer", std::move(layers)}};
}

json to_json(const UpdatePlan& p) {
  json entries = json::array();
  for (const auto& e : p.entries) entries.push_back({{"layer", e.layer}, {"channels", e.channels}, {"bias", e.bias}});
  json scores = json::array();
  for (const auto& s : p.scores)
    scores.push_back({{"layer", s.layer},
                      {"potential", s.potential},
                      {"norm_params", s.norm_params},
                      {"norm_macs", s.norm_macs},
                      {"score", s.score}});
  return {{"source", p.source},
          {"budgets", to_json(p.budget)},
          {"channel_ratio", p.channel_ratio},
          {"seed", p.seed},
          {"budget_infeasible", p.budget_infeasible},
          {"zero_potential", p.zero_potential},
          {"entries", std::move(entries)},
          {"scores", std::move(scores)}};
}

UpdatePlan plan_from_json(const json& j) {
  try {
    UpdatePlan p;
    p.source = j.value("source", std::string("imported"));
    if (j.contains("budgets")) p.budget = budget_from_json(j["budgets"]);
    p.channel_ratio = j.value("channel_ratio", 1.0);
    p.seed = j.value("seed", std::uint64_t{0});
    p.budget_infeasible = j.value("budget_infeasible", false);
    p.zero_potential = j.value("zero_potential", false);
    for (const auto& e : j.at("entries"))
      p.entries.push_back({e.at("layer").get<std::size_t>(), e.at("channels").get<std::vector<std::size_t>>(),
                           e.value("bias", true)});
    if (j.contains("scores"))
      for (const auto& s : j["scores"])
        p.scores.push_back({s.at("layer").get<std::size_t>(), s.value("potential", 0.0), s.value("norm_params", 0.0),
                            s.value("norm_macs", 0.0), s.value("score", 0.0)});
    return p;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed plan JSON: ") + e.what());
  }
}

}  // namespace tinytrain

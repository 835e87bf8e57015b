#include "tinytrain/sweep.hpp"

#include <sstream>

#include "tinytrain/errors.hpp"

namespace tinytrain {

UpdatePlan single_layer_plan(const ModelSpec& spec, const FisherReport& fisher, std::size_t layer, double ratio,
                             bool include_bias) {
  const LayerFisher* lf = fisher.find(layer);
  if (!lf) throw ContractError("fisher report has no entry for layer " + std::to_string(layer));
  UpdatePlan plan;
  plan.source = "sweep";
  plan.channel_ratio = ratio;
  plan.entries.push_back(
      {layer, top_k_channels(lf->deltas, channels_for_ratio(spec.layer(layer).kind.out_channels, ratio)), include_bias});
  return plan;
}

SweepTable single_layer_sweep(const Model& model, const std::vector<SweepEpisode>& episodes,
                              const std::vector<double>& ratios, const AdaptOptions& options, bool include_bias) {
  if (episodes.empty()) throw ContractError("sweep needs at least one episode");
  for (double r : ratios)
    if (!(r > 0.0 && r <= 1.0)) throw ValidationError("sweep ratios must lie in (0, 1]");
  const auto& spec = model.spec;
  const auto layers = spec.parametric_layers();

  SweepTable table;
  table.include_bias = include_bias;
  for (auto layer : layers)
    for (double r : ratios) table.rows.push_back({layer, r, 0.0, 0.0, 0.0, 0.0});

  AdaptOptions o = options;
  o.source = PlanSource::imported;
  o.budget = Budget::unbounded();
  for (const auto& ep : episodes) {
    const double base = evaluate_episode(model, ep.data, o.temperature);
    table.baseline_accuracy += base;
    const auto fisher = episode_fisher(model, ep.data, o, ep.seed);
    for (auto& row : table.rows) {
      o.imported = single_layer_plan(spec, fisher, row.layer, row.ratio, include_bias);
      const auto result = adapt_episode(model, ep.data, o, ep.seed);
      row.mean_accuracy += result.accuracy;
      row.gain += result.accuracy - base;
    }
  }
  const double n = static_cast<double>(episodes.size());
  table.baseline_accuracy /= n;
  for (auto& row : table.rows) {
    row.mean_accuracy /= n;
    row.gain /= n;
    row.gain_per_param = row.gain / static_cast<double>(spec.layer(row.layer).param_count);
    row.gain_per_mac = row.gain / static_cast<double>(spec.layer(row.layer).mac_count);
  }
  return table;
}

std::string sweep_csv(const SweepTable& table) {
  std::ostringstream out;
  out.precision(17);
  out << "layer_index,ratio,gain,gain_per_param,gain_per_mac\n";
  for (const auto& r : table.rows)
    out << r.layer << ',' << r.ratio << ',' << r.gain << ',' << r.gain_per_param << ',' << r.gain_per_mac << '\n';
  return out.str();
}

nlohmann::json to_json(const SweepTable& table) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : table.rows)
    rows.push_back({{"layer", r.layer},
                    {"ratio", r.ratio},
                    {"mean_accuracy", r.mean_accuracy},
                    {"gain", r.gain},
                    {"gain_per_param", r.gain_per_param},
                    {"gain_per_mac", r.gain_per_mac}});
  return {{"include_bias", table.include_bias}, {"baseline_accuracy", table.baseline_accuracy}, {"rows", std::move(rows)}};
}

}  // namespace tinytrain

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "tinytrain/adapt.hpp"

namespace tinytrain {

struct SweepEpisode {
  EpisodeData data;
  std::uint64_t seed = 0;
};

struct SweepRow {
  std::size_t layer = 0;
  double ratio = 1.0;
  double mean_accuracy = 0.0;
  double gain = 0.0;  // mean over episodes of (adapted - frozen) accuracy
  double gain_per_param = 0.0;
  double gain_per_mac = 0.0;
};

struct SweepTable {
  std::vector<SweepRow> rows;  // layer-major, ratios in the given order
  double baseline_accuracy = 0.0;
  bool include_bias = true;
};

// Fine-tune one weighted layer at a time (top-K Fisher channels, K from each ratio)
// and record the mean accuracy gain over the frozen backbone.
SweepTable single_layer_sweep(const Model& model, const std::vector<SweepEpisode>& episodes,
                              const std::vector<double>& ratios, const AdaptOptions& options,
                              bool include_bias = true);

// The one-layer plan the sweep uses for (layer, ratio) given the episode's Fisher report.
UpdatePlan single_layer_plan(const ModelSpec& spec, const FisherReport& fisher, std::size_t layer, double ratio,
                             bool include_bias);

std::string sweep_csv(const SweepTable& table);
nlohmann::json to_json(const SweepTable& table);

}  // namespace tinytrain

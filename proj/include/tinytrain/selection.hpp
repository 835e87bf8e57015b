#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "tinytrain/cost_model.hpp"
#include "tinytrain/fisher.hpp"
#include "tinytrain/params.hpp"
#include "tinytrain/plan.hpp"

namespace tinytrain {

struct ScoreTable {
  std::vector<LayerScore> ranked;  // descending score, deeper layer first on ties
  bool all_zero = false;
};

// s_i = P_i / ((|W_i| / max_l |W_l|) * (M_i / max_l M_l)) over the weighted layers.
ScoreTable score_layers(const ModelSpec& spec, const FisherReport& fisher);

// Same score from raw per-layer numbers (parallel arrays); normalizers are the maxima given.
ScoreTable score_values(const std::vector<std::size_t>& layers, const std::vector<double>& potentials,
                        const std::vector<std::uint64_t>& params, const std::vector<std::uint64_t>& macs);

// Skip-and-continue walk over candidates 0..count-1 in order: candidate j is kept iff
// feasible(accepted + {j}). Returns the kept candidates in acceptance order.
std::vector<std::size_t> greedy_walk(std::size_t count,
                                     const std::function<bool(const std::vector<std::size_t>&)>& feasible);

// ceil(ratio * count), at least one.
std::size_t channels_for_ratio(std::size_t count, double ratio);

// Indices of the k largest deltas, lower index first on ties; returned sorted ascending.
std::vector<std::size_t> top_k_channels(const std::vector<double>& deltas, std::size_t k);

enum class StaticChannelMode { random, l2norm };

// Channel choice that ignores the data: k uniform draws without replacement, or the
// k output channels with the largest weight L2 norm (lower index first on ties).
std::vector<std::size_t> static_channel_baseline(const Layer& layer, const LayerParams& params, double ratio,
                                                 StaticChannelMode mode, std::mt19937_64& rng);

enum class ChannelPolicy { fisher, random, l2norm };

struct SelectOptions {
  double channel_ratio = 0.5;
  std::size_t cost_batch = 1;
  DType cost_dtype = DType::f32;
  ChannelPolicy policy = ChannelPolicy::fisher;
  bool include_bias = true;
  std::uint64_t seed = 0;
  const ParamStore* params = nullptr;  // required by the l2norm policy
};

// Greedy walk in score order: each layer's candidate entry is kept iff the plan
// still fits the budget with it; otherwise it is skipped and the walk continues.
UpdatePlan select(const ModelSpec& spec, const FisherReport& fisher, const ScoreTable& scores, const Budget& budget,
                  const SelectOptions& options);

}  // namespace tinytrain

#include "tinytrain/selection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tinytrain/errors.hpp"

namespace tinytrain {

ScoreTable score_values(const std::vector<std::size_t>& layers, const std::vector<double>& potentials,
                        const std::vector<std::uint64_t>& params, const std::vector<std::uint64_t>& macs) {
  if (potentials.size() != layers.size() || params.size() != layers.size() || macs.size() != layers.size())
    throw ContractError("score inputs differ in length");
  double max_params = 0.0, max_macs = 0.0;
  for (std::size_t j = 0; j < layers.size(); ++j) {
    max_params = std::max(max_params, static_cast<double>(params[j]));
    max_macs = std::max(max_macs, static_cast<double>(macs[j]));
  }
  if (!(max_params > 0.0) || !(max_macs > 0.0)) throw ContractError("scoring needs layers with parameters and MACs");

  ScoreTable table;
  table.all_zero = true;
  for (std::size_t j = 0; j < layers.size(); ++j) {
    LayerScore s;
    s.layer = layers[j];
    s.potential = potentials[j];
    s.norm_params = static_cast<double>(params[j]) / max_params;
    s.norm_macs = static_cast<double>(macs[j]) / max_macs;
    s.score = s.potential / (s.norm_params * s.norm_macs);
    if (s.potential != 0.0) table.all_zero = false;
    table.ranked.push_back(s);
  }
  std::stable_sort(table.ranked.begin(), table.ranked.end(), [](const LayerScore& a, const LayerScore& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.layer > b.layer;
  });
  return table;
}

ScoreTable score_layers(const ModelSpec& spec, const FisherReport& fisher) {
  const auto weighted = spec.parametric_layers();
  std::vector<double> potentials;
  std::vector<std::uint64_t> params, macs;
  for (auto i : weighted) {
    const LayerFisher* lf = fisher.find(i);
    if (!lf) throw ContractError("fisher report has no entry for layer '" + spec.layer(i).name + "'");
    potentials.push_back(lf->potential);
    params.push_back(spec.layer(i).param_count);
    macs.push_back(spec.layer(i).mac_count);
  }
  return score_values(weighted, potentials, params, macs);
}

std::vector<std::size_t> greedy_walk(std::size_t count,
                                     const std::function<bool(const std::vector<std::size_t>&)>& feasible) {
  std::vector<std::size_t> accepted;
  for (std::size_t j = 0; j < count; ++j) {
    accepted.push_back(j);
    if (!feasible(accepted)) accepted.pop_back();
  }
  return accepted;
}

std::size_t channels_for_ratio(std::size_t count, double ratio) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw ValidationError("channel ratio must lie in (0, 1]");
  const auto k = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(count) - 1e-9));
  return std::clamp<std::size_t>(k, 1, count);
}

namespace {

std::vector<std::size_t> top_k_by(const std::vector<double>& key, std::size_t k) {
  std::vector<std::size_t> idx(key.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return key[a] > key[b]; });
  idx.resize(std::min(k, idx.size()));
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

std::vector<std::size_t> top_k_channels(const std::vector<double>& deltas, std::size_t k) { return top_k_by(deltas, k); }

std::vector<std::size_t> static_channel_baseline(const Layer& layer, const LayerParams& params, double ratio,
                                                 StaticChannelMode mode, std::mt19937_64& rng) {
  const std::size_t count = layer.kind.out_channels;
  const std::size_t k = channels_for_ratio(count, ratio);
  if (mode == StaticChannelMode::random) {
    std::vector<std::size_t> all(count);
    std::iota(all.begin(), all.end(), 0);
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(k);
    std::sort(all.begin(), all.end());
    return all;
  }
  const std::size_t row = params.weight.numel() / count;
  std::vector<double> norms(count, 0.0);
  for (std::size_t o = 0; o < count; ++o) {
    for (std::size_t j = 0; j < row; ++j) norms[o] += params.weight[o * row + j] * params.weight[o * row + j];
    norms[o] = std::sqrt(norms[o]);
  }
  return top_k_by(norms, k);
}

UpdatePlan select(const ModelSpec& spec, const FisherReport& fisher, const ScoreTable& scores, const Budget& budget,
                  const SelectOptions& o) {
  budget.validate();
  if (o.policy == ChannelPolicy::l2norm && !o.params) throw ContractError("l2norm channel policy needs parameters");
  UpdatePlan plan;
  plan.budget = budget;
  plan.channel_ratio = o.channel_ratio;
  plan.seed = o.seed;
  plan.scores = scores.ranked;
  plan.zero_potential = scores.all_zero;
  plan.source = o.policy == ChannelPolicy::fisher ? "tinytrain" : o.policy == ChannelPolicy::random ? "random-channels" : "l2norm-channels";

  std::mt19937_64 rng(o.seed);
  std::vector<PlanEntry> candidates;
  for (const auto& s : scores.ranked) {
    const auto& layer = spec.layer(s.layer);
    PlanEntry entry{s.layer, {}, o.include_bias};
    switch (o.policy) {
      case ChannelPolicy::fisher: {
        const LayerFisher* lf = fisher.find(s.layer);
        if (!lf) throw ContractError("fisher report has no entry for layer '" + layer.name + "'");
        entry.channels = top_k_channels(lf->deltas, channels_for_ratio(layer.kind.out_channels, o.channel_ratio));
        break;
      }
      case ChannelPolicy::random:
        entry.channels = static_channel_baseline(layer, LayerParams{}, o.channel_ratio, StaticChannelMode::random, rng);
        break;
      case ChannelPolicy::l2norm:
        entry.channels = static_channel_baseline(layer, o.params->at(s.layer), o.channel_ratio,
                                                 StaticChannelMode::l2norm, rng);
        break;
    }
    candidates.push_back(std::move(entry));
  }
  auto build = [&](const std::vector<std::size_t>& picked) {
    UpdatePlan trial;
    for (auto j : picked) trial.entries.push_back(candidates[j]);
    return trial;
  };
  const auto kept = greedy_walk(candidates.size(), [&](const std::vector<std::size_t>& picked) {
    return fits(plan_cost(spec, build(picked), o.cost_batch, o.cost_dtype), budget);
  });
  plan.entries = build(kept).entries;
  plan.budget_infeasible = plan.entries.empty() && !scores.ranked.empty();
  return plan;
}

}  // namespace tinytrain

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tinytrain/cost_model.hpp"
#include "tinytrain/episode.hpp"
#include "tinytrain/fisher.hpp"
#include "tinytrain/plan.hpp"
#include "tinytrain/selection.hpp"

namespace tinytrain {

enum class PlanSource { tinytrain, full, last_layer, random_channels, l2norm_channels, none, imported };

const char* plan_source_name(PlanSource s);
PlanSource parse_plan_source(const std::string& s);

struct AdaptOptions {
  PlanSource source = PlanSource::tinytrain;
  Budget budget;
  double channel_ratio = 0.5;
  std::size_t iterations = 40;
  SgdMomentum optimizer{1e-3, 0.9};
  double temperature = 0.1;
  AugmentOptions augment;
  std::size_t cost_batch = 1;
  std::optional<UpdatePlan> imported;  // used when source == imported
};

struct AdaptResult {
  double accuracy = 0.0;
  std::size_t query_count = 0;
  UpdatePlan plan;
  CostReport cost;
  bool plan_flagged = false;  // the plan source did not fit the budget; ran with an empty plan
  std::vector<double> losses;
  ParamStore params;
  double selection_seconds = 0.0;
  double total_seconds = 0.0;
};

// Called after every fine-tuning step with the iteration index (1-based) and current weights.
using TrajectoryObserver = std::function<void(std::size_t, const ParamStore&)>;

// Nearest-prototype accuracy on the query set with prototypes rebuilt from `support`.
double evaluate_episode(const Model& model, const EpisodeData& episode, double temperature);

// Fisher report over support + one pseudo-query drawn from the episode's selection stream.
FisherReport episode_fisher(const Model& model, const EpisodeData& episode, const AdaptOptions& options,
                            std::uint64_t episode_seed, PassCounters* counters = nullptr);

// Plan selection, k sparse SGD-momentum steps on the pseudo-query loss, then query evaluation.
AdaptResult adapt_episode(const Model& model, const EpisodeData& episode, const AdaptOptions& options,
                          std::uint64_t episode_seed, const TrajectoryObserver& observer = {});

struct LrSchedule {
  std::size_t epochs = 100;
  std::size_t episodes_per_epoch = 2000;
  std::size_t warmup_epochs = 5;
  double lr_start = 1e-6;
  double lr_peak = 5e-5;
  double lr_end = 1e-6;

  // Linear warm-up from lr_start to lr_peak, then cosine decay to lr_end; step counts episodes.
  double lr_at(std::size_t step) const;
  std::size_t total_steps() const noexcept { return epochs * episodes_per_epoch; }
  void validate() const;
};

struct MetaTrainOptions {
  LrSchedule schedule;
  double momentum = 0.9;
  double temperature = 0.1;
  SamplerOptions sampler;
};

struct MetaTrainResult {
  ParamStore params;  // the last finite weights
  std::vector<double> loss_curve;
  bool diverged = false;
  std::size_t steps = 0;
};

// Episodic ProtoNet training of every layer on the source dataset.
MetaTrainResult meta_train(const Model& model, const Dataset& source, const MetaTrainOptions& options,
                           std::uint64_t seed);

}  // namespace tinytrain

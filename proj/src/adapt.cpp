#include "tinytrain/adapt.hpp"

#include <chrono>
#include <cmath>
#include <numbers>

#include "tinytrain/errors.hpp"
#include "tinytrain/protonet.hpp"
#include "tinytrain/rng.hpp"

namespace tinytrain {

const char* plan_source_name(PlanSource s) {
  switch (s) {
    case PlanSource::tinytrain: return "tinytrain";
    case PlanSource::full: return "full";
    case PlanSource::last_layer: return "last-layer";
    case PlanSource::random_channels: return "random-channels";
    case PlanSource::l2norm_channels: return "l2norm-channels";
    case PlanSource::none: return "none";
    case PlanSource::imported: return "imported";
  }
  return "?";
}

PlanSource parse_plan_source(const std::string& s) {
  for (auto p : {PlanSource::tinytrain, PlanSource::full, PlanSource::last_layer, PlanSource::random_channels,
                 PlanSource::l2norm_channels, PlanSource::none, PlanSource::imported})
    if (s == plan_source_name(p)) return p;
  throw ValidationError("unknown plan source '" + s + "'");
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

Tensor embed(const Model& model, const Tensor& x) {
  const Tensor out = forward(model, x);
  return out.reshaped({x.dim(0), out.numel() / x.dim(0)});
}

std::vector<std::size_t> twice(const std::vector<std::size_t>& labels) {
  std::vector<std::size_t> out = labels;
  out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

bool all_finite(const ParamStore& p) {
  for (const auto& [i, lp] : p.entries()) {
    for (double v : lp.weight.data())
      if (!std::isfinite(v)) return false;
    for (double v : lp.bias.data())
      if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace

double evaluate_episode(const Model& model, const EpisodeData& ep, double temperature) {
  if (ep.query.empty() || ep.query_labels.empty()) throw ContractError("episode has no query examples to evaluate");
  const auto protos = compute_prototypes(embed(model, ep.support), ep.support_labels, ep.way);
  const auto predicted = argmax_rows(classify(embed(model, ep.query), protos, temperature));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == ep.query_labels[i];
  return static_cast<double>(correct) / static_cast<double>(predicted.size());
}

FisherReport episode_fisher(const Model& model, const EpisodeData& ep, const AdaptOptions& o,
                            std::uint64_t episode_seed, PassCounters* counters) {
  auto rng = make_stream(episode_seed, "selection");
  const Tensor pseudo = make_pseudo_query(ep.support, o.augment, rng);
  FewShotBatch batch{&ep.support, ep.support_labels, &pseudo, ep.support_labels, ep.way};
  return fisher_pass(model, batch, FisherOptions{o.temperature, 1.0}, counters);
}

AdaptResult adapt_episode(const Model& model, const EpisodeData& ep, const AdaptOptions& o, std::uint64_t episode_seed,
                          const TrajectoryObserver& observer) {
  const auto t0 = Clock::now();
  o.budget.validate();
  const auto& spec = model.spec;
  AdaptResult r;

  switch (o.source) {
    case PlanSource::none: break;
    case PlanSource::full: r.plan = full_plan(spec); break;
    case PlanSource::last_layer: r.plan = last_layer_plan(spec); break;
    case PlanSource::imported:
      if (!o.imported) throw ContractError("imported plan source without a plan");
      r.plan = *o.imported;
      r.plan.source = "imported";
      break;
    case PlanSource::tinytrain:
    case PlanSource::random_channels:
    case PlanSource::l2norm_channels: {
      const auto fisher = episode_fisher(model, ep, o, episode_seed);
      SelectOptions so;
      so.channel_ratio = o.channel_ratio;
      so.cost_batch = o.cost_batch;
      so.cost_dtype = model.params.dtype();
      so.policy = o.source == PlanSource::tinytrain       ? ChannelPolicy::fisher
                  : o.source == PlanSource::random_channels ? ChannelPolicy::random
                                                            : ChannelPolicy::l2norm;
      so.seed = derive_seed(episode_seed, "selection-channels");
      so.params = &model.params;
      r.plan = select(spec, fisher, score_layers(spec, fisher), o.budget, so);
      r.plan_flagged = r.plan.budget_infeasible;
      break;
    }
  }
  if (o.source != PlanSource::none) r.plan.budget = o.budget;
  if (o.source == PlanSource::none) r.plan.source = "none";
  r.plan.channel_ratio = o.source == PlanSource::tinytrain || o.source == PlanSource::random_channels ||
                                 o.source == PlanSource::l2norm_channels
                             ? o.channel_ratio
                             : 1.0;

  r.cost = plan_cost(spec, r.plan, o.cost_batch, model.params.dtype());
  if (!r.plan.empty() && !fits(r.cost, o.budget)) {
    r.plan.entries.clear();
    r.plan_flagged = true;
    r.cost = plan_cost(spec, r.plan, o.cost_batch, model.params.dtype());
  }
  r.selection_seconds = seconds_since(t0);

  Model work{spec, model.params};
  if (!r.plan.empty() && o.iterations > 0) {
    auto rng = make_stream(episode_seed, "augment");
    const Selection selection = r.plan.to_selection();
    const auto labels = twice(ep.support_labels);
    const std::size_t S = ep.support.dim(0);
    VelocityState velocity;
    for (std::size_t t = 1; t <= o.iterations; ++t) {
      const Tensor pseudo = make_pseudo_query(ep.support, o.augment, rng);
      const Tensor batch = concat_rows(ep.support, pseudo);
      ActivationCache cache(selection);
      const Tensor out = forward(work, batch, &cache);
      const auto loss = protonet_loss(out.reshaped({batch.dim(0), out.numel() / batch.dim(0)}), labels, S, ep.way,
                                      o.temperature);
      if (!std::isfinite(loss.loss)) throw NumericError("non-finite fine-tuning loss at iteration " + std::to_string(t));
      const auto grads = backward(work, cache, loss.grad.reshaped(out.shape()));
      sgd_momentum_step(spec, work.params, grads, o.optimizer, velocity);
      r.losses.push_back(loss.loss);
      if (observer) observer(t, work.params);
    }
  }
  r.accuracy = evaluate_episode(work, ep, o.temperature);
  r.query_count = ep.query_labels.size();
  r.params = std::move(work.params);
  r.total_seconds = seconds_since(t0);
  return r;
}

void LrSchedule::validate() const {
  if (warmup_epochs > epochs && epochs > 0) throw ValidationError("warm-up longer than the schedule");
  for (double v : {lr_start, lr_peak, lr_end})
    if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError("learning rates must be finite and non-negative");
}

double LrSchedule::lr_at(std::size_t step) const {
  const std::size_t warm = warmup_epochs * episodes_per_epoch;
  const std::size_t total = total_steps();
  if (step < warm) return lr_start + (lr_peak - lr_start) * static_cast<double>(step) / static_cast<double>(warm);
  if (total <= warm) return lr_peak;
  const double progress = std::min(1.0, static_cast<double>(step - warm) / static_cast<double>(total - warm));
  return lr_end + 0.5 * (lr_peak - lr_end) * (1.0 + std::cos(std::numbers::pi * progress));
}

MetaTrainResult meta_train(const Model& model, const Dataset& source, const MetaTrainOptions& o, std::uint64_t seed) {
  o.schedule.validate();
  MetaTrainResult r;
  Model work{model.spec, model.params};
  const Selection everything = full_selection(model.spec);
  auto rng = make_stream(seed, "meta-sampler");
  VelocityState velocity;
  const std::size_t total = o.schedule.total_steps();
  for (std::size_t step = 0; step < total; ++step) {
    Episode ep = sample_episode(source, o.sampler, rng);
    if (ep.query_indices.empty()) throw SamplingError("meta-training episode has no query examples");
    const EpisodeData data = materialize(source, ep);
    const Tensor batch = concat_rows(data.support, data.query);
    std::vector<std::size_t> labels = data.support_labels;
    labels.insert(labels.end(), data.query_labels.begin(), data.query_labels.end());

    ActivationCache cache(everything);
    const Tensor out = forward(work, batch, &cache);
    ProtoLoss loss;
    try {
      loss = protonet_loss(out.reshaped({batch.dim(0), out.numel() / batch.dim(0)}), labels, data.support.dim(0),
                           data.way, o.temperature);
    } catch (const NumericError&) {
      r.diverged = true;
      break;
    }
    if (!std::isfinite(loss.loss)) {
      r.diverged = true;
      break;
    }
    const ParamStore before = work.params;
    try {
      const auto grads = backward(work, cache, loss.grad.reshaped(out.shape()));
      sgd_momentum_step(model.spec, work.params, grads, SgdMomentum{o.schedule.lr_at(step), o.momentum}, velocity);
    } catch (const NumericError&) {
      work.params = before;
      r.diverged = true;
      break;
    }
    if (!all_finite(work.params)) {
      work.params = before;
      r.diverged = true;
      break;
    }
    r.loss_curve.push_back(loss.loss);
    ++r.steps;
  }
  r.params = std::move(work.params);
  return r;
}

}  // namespace tinytrain

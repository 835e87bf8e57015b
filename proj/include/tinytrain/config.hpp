#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tinytrain/adapt.hpp"
#include "tinytrain/dataset.hpp"
#include "tinytrain/model_spec.hpp"

namespace tinytrain {

// Everything a CLI invocation needs. Loaded from a UTF-8 `key = value` file ('#'
// starts a comment), then overridden by flags.
struct RunConfig {
  // model
  std::string family = "micro-cnn";
  double width = 1.0;
  std::size_t micro_blocks = 2;
  std::size_t micro_expand = 4;
  std::string dtype = "f32";
  // budgets and selection
  std::string budget_mem = "unbounded";
  std::string budget_mac = "unbounded";
  double ratio = 0.5;
  std::string plan_source = "tinytrain";
  std::string plan_file;
  std::size_t cost_batch = 1;
  // fine-tuning
  std::size_t iters = 40;
  double lr = 1e-3;
  double momentum = 0.9;
  double temperature = 0.1;
  double flip_prob = 0.5;
  std::size_t crop_pad = 2;
  // episodes
  std::size_t trials = 200;
  std::size_t min_way = 5;
  std::size_t max_way = 50;
  std::size_t max_support = 500;
  std::size_t max_support_per_class = 100;
  std::size_t max_query_per_class = 10;
  // meta-training
  std::size_t epochs = 100;
  std::size_t episodes_per_epoch = 2000;
  std::size_t warmup_epochs = 5;
  double lr_start = 1e-6;
  double lr_peak = 5e-5;
  double lr_end = 1e-6;
  double meta_momentum = 0.9;
  // toy data
  std::size_t source_classes = 64;
  std::size_t target_classes = 20;
  std::size_t per_class = 30;
  std::size_t image_size = 16;
  double data_noise = 0.3;
  double data_shift = 0.5;
  double data_contrast = 0.6;
  // sweep
  std::string sweep_ratios = "1,0.5,0.25,0.125";
  std::size_t sweep_episodes = 5;
  bool include_bias = true;
  // paths and run control
  std::string source_data = "source.ttds";
  std::string target_data = "target.ttds";
  std::string checkpoint = "model.ttck";
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  std::size_t jobs = 1;

  // Line numbers of keys read from a file, for error messages.
  std::map<std::string, int> lines;

  // Applies one assignment; `line` is 0 for flag overrides. Throws ConfigError.
  void set(const std::string& key, const std::string& value, int line = 0);
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::string& path);

  // Throws ConfigError (addressed to the offending key's line) on any invalid field.
  void validate() const;

  // Every key with its resolved value, one `key = value` per line, in a fixed order.
  // jobs and out_dir never change results, so the hash leaves them out.
  std::string resolved_text(bool include_run_control = true) const;
  std::uint64_t hash() const;
  std::string hash_hex() const;

  // Typed views; call after validate().
  Budget budget() const;
  PlanSource source() const;
  DType scalar_type() const;
  BackboneFamily backbone() const;
  MicroCnnOptions micro() const;
  AdaptOptions adapt_options() const;
  SamplerOptions sampler() const;
  MetaTrainOptions meta_options() const;
  ToyDataOptions toy_options() const;
  std::vector<double> ratios() const;
  static std::vector<std::string> keys();
};

}  // namespace tinytrain

#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "tinytrain/dataset.hpp"
#include "tinytrain/tensor.hpp"

namespace tinytrain {

struct SamplerOptions {
  std::size_t min_way = 5;
  std::size_t max_way = 50;
  std::size_t max_support = 500;
  std::size_t max_support_per_class = 100;
  std::size_t max_query_per_class = 10;

  void validate() const;
};

// A various-way various-shot task drawn from a dataset. Indices point into the
// dataset; labels are remapped to [0, way).
struct Episode {
  std::size_t way = 0;
  std::vector<std::size_t> classes;  // dataset class id of episode label k
  std::vector<std::size_t> shots;    // support examples per episode class
  std::size_t query_per_class = 0;
  std::vector<std::size_t> support_indices;
  std::vector<std::size_t> support_labels;
  std::vector<std::size_t> query_indices;
  std::vector<std::size_t> query_labels;
};

// Way uniform on [min_way, min(max_way, classes)]; classes uniform without
// replacement; a class-balanced query of min(max_query, floor(min_class_size / 2))
// per class; an imbalanced support set of at most max_support with >= 1 shot per class.
Episode sample_episode(const Dataset& dataset, const SamplerOptions& options, std::mt19937_64& rng);

struct EpisodeData {
  std::size_t way = 0;
  Tensor support;  // [S, C, H, W]
  std::vector<std::size_t> support_labels;
  Tensor query;
  std::vector<std::size_t> query_labels;
};

EpisodeData materialize(const Dataset& dataset, const Episode& episode);

struct AugmentOptions {
  double flip_prob = 0.5;
  std::size_t crop_pad = 2;  // reflect-pad by this much, then crop back at a random offset

  bool identity() const noexcept { return flip_prob <= 0.0 && crop_pad == 0; }
};

// One augmented copy per support example, same order, same labels. The support itself is not modified.
Tensor make_pseudo_query(const Tensor& support, const AugmentOptions& options, std::mt19937_64& rng);

}  // namespace tinytrain

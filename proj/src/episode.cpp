#include "tinytrain/episode.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tinytrain/errors.hpp"

namespace tinytrain {

void SamplerOptions::validate() const {
  if (min_way == 0 || max_way < min_way) throw ValidationError("sampler way range is empty");
  if (max_support < max_way) throw ValidationError("sampler support cap must be at least the maximum way");
  if (max_support_per_class == 0) throw ValidationError("sampler per-class support cap must be positive");
}

Episode sample_episode(const Dataset& ds, const SamplerOptions& o, std::mt19937_64& rng) {
  o.validate();
  std::vector<std::size_t> usable;
  for (std::size_t c = 0; c < ds.class_count(); ++c)
    if (!ds.class_indices(c).empty()) usable.push_back(c);
  if (usable.size() < o.min_way)
    throw SamplingError("dataset has " + std::to_string(usable.size()) + " non-empty classes, need at least " +
                        std::to_string(o.min_way));

  Episode ep;
  const std::size_t max_way = std::min(o.max_way, usable.size());
  ep.way = std::uniform_int_distribution<std::size_t>(o.min_way, max_way)(rng);
  std::shuffle(usable.begin(), usable.end(), rng);
  ep.classes.assign(usable.begin(), usable.begin() + static_cast<std::ptrdiff_t>(ep.way));

  std::size_t smallest = SIZE_MAX;
  for (auto c : ep.classes) smallest = std::min(smallest, ds.class_indices(c).size());
  ep.query_per_class = std::min(o.max_query_per_class, smallest / 2);

  std::vector<std::size_t> remaining(ep.way);
  for (std::size_t k = 0; k < ep.way; ++k) remaining[k] = ds.class_indices(ep.classes[k]).size() - ep.query_per_class;

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double beta = unit(rng);
  std::size_t support_size = 0;
  for (auto r : remaining)
    support_size += static_cast<std::size_t>(std::ceil(beta * static_cast<double>(std::min(o.max_support_per_class, r))));
  support_size = std::max(ep.way, std::min(o.max_support, support_size));

  // Imbalanced shots: class proportions jittered by a log-uniform factor in [0.5, 2].
  std::uniform_real_distribution<double> log_jitter(std::log(0.5), std::log(2.0));
  std::vector<double> weight(ep.way);
  double total = 0.0;
  for (std::size_t k = 0; k < ep.way; ++k) {
    weight[k] = std::exp(log_jitter(rng)) * static_cast<double>(ds.class_indices(ep.classes[k]).size());
    total += weight[k];
  }
  ep.shots.resize(ep.way);
  const double spare = static_cast<double>(support_size - ep.way);
  for (std::size_t k = 0; k < ep.way; ++k) {
    const auto extra = static_cast<std::size_t>(std::floor(weight[k] / total * spare));
    ep.shots[k] = std::min({extra + 1, remaining[k], o.max_support_per_class});
  }

  for (std::size_t k = 0; k < ep.way; ++k) {
    std::vector<std::size_t> pool = ds.class_indices(ep.classes[k]);
    std::shuffle(pool.begin(), pool.end(), rng);
    for (std::size_t i = 0; i < ep.query_per_class; ++i) {
      ep.query_indices.push_back(pool[i]);
      ep.query_labels.push_back(k);
    }
    for (std::size_t i = 0; i < ep.shots[k]; ++i) {
      ep.support_indices.push_back(pool[ep.query_per_class + i]);
      ep.support_labels.push_back(k);
    }
  }
  return ep;
}

EpisodeData materialize(const Dataset& ds, const Episode& ep) {
  EpisodeData d;
  d.way = ep.way;
  d.support = ds.gather(ep.support_indices);
  d.support_labels = ep.support_labels;
  if (!ep.query_indices.empty()) d.query = ds.gather(ep.query_indices);
  d.query_labels = ep.query_labels;
  return d;
}

namespace {

std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
  const auto len = static_cast<std::ptrdiff_t>(n);
  if (i < 0) i = -i;
  if (i >= len) i = 2 * len - 2 - i;
  return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, len - 1));
}

}  // namespace

Tensor make_pseudo_query(const Tensor& support, const AugmentOptions& o, std::mt19937_64& rng) {
  if (support.rank() != 4) throw ContractError("pseudo-query augmentation expects [N, C, H, W]");
  const std::size_t N = support.dim(0), C = support.dim(1), H = support.dim(2), W = support.dim(3);
  if (o.crop_pad >= H || o.crop_pad >= W) throw ValidationError("crop padding must be smaller than the image");
  if (o.identity()) return support;
  Tensor out(support.shape(), support.dtype());
  std::bernoulli_distribution flip(std::clamp(o.flip_prob, 0.0, 1.0));
  std::uniform_int_distribution<std::size_t> offset(0, 2 * o.crop_pad);
  const auto pad = static_cast<std::ptrdiff_t>(o.crop_pad);
  for (std::size_t n = 0; n < N; ++n) {
    const bool mirrored = o.flip_prob > 0.0 && flip(rng);
    const auto dy = o.crop_pad ? static_cast<std::ptrdiff_t>(offset(rng)) - pad : 0;
    const auto dx = o.crop_pad ? static_cast<std::ptrdiff_t>(offset(rng)) - pad : 0;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          const std::size_t sx0 = mirrored ? W - 1 - x : x;
          const std::size_t sy = reflect(static_cast<std::ptrdiff_t>(y) + dy, H);
          const std::size_t sx = reflect(static_cast<std::ptrdiff_t>(sx0) + dx, W);
          out[((n * C + c) * H + y) * W + x] = support[((n * C + c) * H + sy) * W + sx];
        }
  }
  return out;
}

}  // namespace tinytrain

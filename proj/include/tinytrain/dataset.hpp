#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tinytrain/tensor.hpp"

namespace tinytrain {

// Labelled image set held as single-precision samples, (C,H,W) per example.
class Dataset {
 public:
  Dataset() = default;
  Dataset(Shape dims, std::size_t class_count, std::vector<std::uint32_t> labels, std::vector<float> samples);

  const Shape& dims() const noexcept { return dims_; }
  std::size_t class_count() const noexcept { return class_count_; }
  std::size_t size() const noexcept { return labels_.size(); }
  std::size_t sample_numel() const noexcept { return shape_numel(dims_); }
  const std::vector<std::uint32_t>& labels() const noexcept { return labels_; }
  const std::vector<float>& samples() const noexcept { return samples_; }
  const std::vector<std::size_t>& class_indices(std::size_t c) const { return by_class_.at(c); }

  // Stack the given examples into [N, C, H, W].
  Tensor gather(std::span<const std::size_t> indices) const;

 private:
  Shape dims_;
  std::size_t class_count_ = 0;
  std::vector<std::uint32_t> labels_;
  std::vector<float> samples_;
  std::vector<std::vector<std::size_t>> by_class_;
};

// TTDS layout (little-endian): "TTDS", u32 version, u32 sample count, u32 class count,
// u32 rank, rank x u32 dims, sample count x u32 labels, then f32 samples.
inline constexpr std::uint32_t kDatasetVersion = 1;

void write_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset read_dataset(const std::filesystem::path& path);
std::vector<char> encode_dataset(const Dataset& ds);
Dataset decode_dataset(std::span<const char> bytes);

struct ToyDataOptions {
  std::size_t source_classes = 64;
  std::size_t target_classes = 20;
  std::size_t per_class = 30;
  Shape dims = {3, 16, 16};
  double noise = 0.3;
  // Target-domain style change: mean offset and contrast scale.
  double shift = 0.5;
  double target_contrast = 0.6;
};

struct ToyDomains {
  Dataset source;
  Dataset target;
};

// Procedural oriented-grating classes. Source and target use disjoint class draws and
// different render styles (colour mixing, contrast, offset, blur).
ToyDomains generate_toy_domains(const ToyDataOptions& options, std::uint64_t seed);

struct PixelStats {
  double mean = 0.0;
  double variance = 0.0;
};
PixelStats pixel_stats(const Dataset& ds);

}  // namespace tinytrain

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tinytrain/tensor.hpp"

namespace tinytrain {

// Per-class centroids of support features. Row k of `centroids` belongs to class k.
struct Prototypes {
  Tensor centroids;  // [way, m]
  std::vector<std::size_t> counts;
};

// features: [N, m]; labels in [0, way). Every class needs at least one row.
Prototypes compute_prototypes(const Tensor& features, std::span<const std::size_t> labels, std::size_t way);

double cosine_similarity(std::span<const double> u, std::span<const double> v);

// Softmax over -cosine_distance / temperature. Rows sum to one. Throws NumericError on zero-norm vectors.
Tensor classify(const Tensor& features, const Prototypes& protos, double temperature);

std::vector<std::size_t> argmax_rows(const Tensor& probs);

struct ProtoLoss {
  double loss = 0.0;
  Tensor grad;   // dL/dfeatures for every row, support rows included (through the prototypes)
  Tensor probs;  // query rows only
  std::size_t correct = 0;
};

// Rows [0, support_count) build the prototypes; the remaining rows are scored
// against them with mean cross-entropy, multiplied by loss_scale.
ProtoLoss protonet_loss(const Tensor& features, std::span<const std::size_t> labels, std::size_t support_count,
                        std::size_t way, double temperature, double loss_scale = 1.0);

}  // namespace tinytrain

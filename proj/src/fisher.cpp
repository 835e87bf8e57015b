#include "tinytrain/fisher.hpp"

#include <algorithm>
#include <cmath>

#include "tinytrain/errors.hpp"
#include "tinytrain/protonet.hpp"

namespace tinytrain {

const LayerFisher* FisherReport::find(std::size_t layer) const {
  for (const auto& l : per_layer)
    if (l.layer == layer) return &l;
  return nullptr;
}

std::vector<double> channel_fisher(const Tensor& a, const Tensor& g) {
  if (a.shape() != g.shape() || a.rank() < 2) throw ContractError("activation and gradient shapes differ");
  const std::size_t N = a.dim(0), C = a.dim(1), D = a.numel() / (N * C);
  std::vector<double> deltas(C, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < C; ++o) {
      const double* ap = a.ptr() + (n * C + o) * D;
      const double* gp = g.ptr() + (n * C + o) * D;
      double inner = 0.0;
      for (std::size_t d = 0; d < D; ++d) inner += ap[d] * gp[d];
      deltas[o] += inner * inner;
    }
  for (auto& d : deltas) d /= 2.0 * static_cast<double>(N);
  return deltas;
}

FisherReport fisher_pass(const Model& model, const FewShotBatch& batch, const FisherOptions& options,
                         PassCounters* counters, FisherDump* dump) {
  if (!batch.support || !batch.query || batch.support->empty() || batch.query->empty())
    throw ContractError("fisher pass needs a non-empty support and query");
  const auto& spec = model.spec;
  const std::size_t S = batch.support->dim(0);
  const Tensor input = concat_rows(*batch.support, *batch.query);
  const std::size_t N = input.dim(0);
  if (N == 0) throw ContractError("fisher pass needs N > 0 samples");

  std::vector<std::size_t> labels(batch.support_labels.begin(), batch.support_labels.end());
  labels.insert(labels.end(), batch.query_labels.begin(), batch.query_labels.end());

  const auto weighted = spec.parametric_layers();
  ActivationCache cache({}, std::set<std::size_t>(weighted.begin(), weighted.end()));
  const Tensor out = forward(model, input, &cache, counters);
  for (const auto& [layer, a] : cache.outputs())
    for (double v : a.data())
      if (!std::isfinite(v)) throw NumericError("non-finite activation in layer '" + spec.layer(layer).name + "'");
  const Tensor features = out.reshaped({N, out.numel() / N});
  const auto loss = protonet_loss(features, labels, S, batch.way, options.temperature, options.loss_scale);
  if (!std::isfinite(loss.loss)) throw NumericError("non-finite loss in fisher pass");

  FisherReport report;
  report.sample_count = N;
  report.loss = loss.loss;
  auto sink = [&](std::size_t layer, const Tensor& a, const Tensor& g) {
    LayerFisher lf;
    lf.layer = layer;
    lf.deltas = channel_fisher(a, g);
    for (double d : lf.deltas) {
      if (!std::isfinite(d)) throw NumericError("non-finite activation or gradient in layer '" + spec.layer(layer).name + "'");
      lf.potential += d;
    }
    report.per_layer.push_back(std::move(lf));
    if (dump) {
      dump->activations[layer] = a;
      dump->gradients[layer] = g;
    }
  };
  backward(model, cache, loss.grad.reshaped(out.shape()), sink, counters);
  std::sort(report.per_layer.begin(), report.per_layer.end(),
            [](const LayerFisher& x, const LayerFisher& y) { return x.layer < y.layer; });
  return report;
}

}  // namespace tinytrain

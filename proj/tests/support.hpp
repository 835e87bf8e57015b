#pragma once
// Shared helpers for the test executables: random small models, an independent
// naive forward evaluator, and a central-difference gradient oracle.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "tinytrain/engine.hpp"
#include "tinytrain/model_spec.hpp"
#include "tinytrain/params.hpp"
#include "tinytrain/plan.hpp"
#include "tinytrain/tensor.hpp"

namespace tt_test {

using namespace tinytrain;

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                            DType dtype = DType::f64) {
  Tensor t(std::move(shape), dtype);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.data()) v = round_to(dtype, u(rng));
  return t;
}

// Micro-cnn-shaped graph with random widths in [2, max_channels]: stem conv,
// 1..max_blocks inverted-residual blocks, pointwise head, pooling, linear embedding.
inline ModelSpec random_micro_spec(std::mt19937_64& rng, std::size_t max_blocks = 2, std::size_t max_channels = 8,
                                   std::size_t size = 16) {
  std::uniform_int_distribution<std::size_t> width(2, max_channels);
  std::uniform_int_distribution<std::size_t> blocks(1, max_blocks);
  std::bernoulli_distribution coin(0.5);
  ModelBuilder b({3, size, size});
  b.conv2d(width(rng), 3, 2, "stem.conv").relu6();
  const std::size_t nb = blocks(rng);
  for (std::size_t i = 0; i < nb; ++i) {
    const std::string p = "b" + std::to_string(i);
    const std::size_t in_node = b.current_node();
    const std::size_t cin = b.current_channels();
    const std::size_t stride = coin(rng) ? 1 : 2;
    if (coin(rng)) b.pointwise(width(rng), p + ".expand").relu6();
    b.depthwise(3, stride, p + ".dw").relu6();
    // Keep the channel count on half of the stride-1 blocks so residual adds appear.
    const std::size_t cout = stride == 1 && coin(rng) ? cin : width(rng);
    b.pointwise(cout, p + ".project");
    if (stride == 1 && cout == cin) b.residual_add(in_node, p + ".add");
  }
  b.pointwise(width(rng), "head.conv").relu6().global_avg_pool().linear(width(rng), "embed");
  return b.build("micro-cnn");
}

inline Model random_model(const ModelSpec& spec, std::mt19937_64& rng, DType dtype = DType::f64,
                          double bias_scale = 0.1) {
  Model m{spec, ParamStore::initialize(spec, dtype, rng)};
  std::uniform_real_distribution<double> u(-bias_scale, bias_scale);
  for (auto i : spec.parametric_layers())
    for (auto& v : m.params.at(i).bias.data()) v = round_to(dtype, u(rng));
  return m;
}

// Plain loop evaluation of the layer graph, written without the engine's padded
// buffers or shared kernels. Returns [N, features].
inline Tensor reference_forward(const Model& model, const Tensor& input) {
  const auto& spec = model.spec;
  const std::size_t N = input.dim(0);
  const std::size_t in_numel = shape_numel(spec.input_shape());
  std::vector<std::vector<double>> rows;
  for (std::size_t n = 0; n < N; ++n) {
    std::vector<std::vector<double>> nodes;
    nodes.emplace_back(input.ptr() + n * in_numel, input.ptr() + (n + 1) * in_numel);
    for (std::size_t i = 0; i < spec.layer_count(); ++i) {
      const auto& l = spec.layer(i);
      const auto& k = l.kind;
      const auto& x = nodes.back();
      std::vector<double> y(shape_numel(l.out_shape), 0.0);
      auto at = [&](std::size_t c, long r, long col) -> double {
        const long H = static_cast<long>(l.in_shape[1]), W = static_cast<long>(l.in_shape[2]);
        if (r < 0 || col < 0 || r >= H || col >= W) return 0.0;
        return x[(c * H + r) * W + col];
      };
      switch (k.tag) {
        case LayerTag::conv2d:
        case LayerTag::depthwise_conv2d: {
          const auto& w = model.params.at(i).weight;
          const auto& b = model.params.at(i).bias;
          const std::size_t Ho = l.out_shape[1], Wo = l.out_shape[2], kk = k.kernel;
          for (std::size_t o = 0; o < k.out_channels; ++o)
            for (std::size_t r = 0; r < Ho; ++r)
              for (std::size_t c = 0; c < Wo; ++c) {
                double acc = b[o];
                for (std::size_t ky = 0; ky < kk; ++ky)
                  for (std::size_t kx = 0; kx < kk; ++kx) {
                    const long rr = static_cast<long>(r * k.stride + ky) - static_cast<long>(k.padding);
                    const long cc = static_cast<long>(c * k.stride + kx) - static_cast<long>(k.padding);
                    if (k.tag == LayerTag::depthwise_conv2d) {
                      acc += w[(o * kk + ky) * kk + kx] * at(o, rr, cc);
                    } else {
                      for (std::size_t ci = 0; ci < k.in_channels; ++ci)
                        acc += w[((o * k.in_channels + ci) * kk + ky) * kk + kx] * at(ci, rr, cc);
                    }
                  }
                y[(o * Ho + r) * Wo + c] = acc;
              }
          break;
        }
        case LayerTag::pointwise_conv2d: {
          const auto& w = model.params.at(i).weight;
          const auto& b = model.params.at(i).bias;
          const std::size_t P = l.in_shape[1] * l.in_shape[2];
          for (std::size_t o = 0; o < k.out_channels; ++o)
            for (std::size_t p = 0; p < P; ++p) {
              double acc = b[o];
              for (std::size_t ci = 0; ci < k.in_channels; ++ci) acc += w[o * k.in_channels + ci] * x[ci * P + p];
              y[o * P + p] = acc;
            }
          break;
        }
        case LayerTag::linear: {
          const auto& w = model.params.at(i).weight;
          const auto& b = model.params.at(i).bias;
          for (std::size_t o = 0; o < k.out_channels; ++o) {
            double acc = b[o];
            for (std::size_t ci = 0; ci < k.in_channels; ++ci) acc += w[o * k.in_channels + ci] * x[ci];
            y[o] = acc;
          }
          break;
        }
        case LayerTag::relu6:
          for (std::size_t j = 0; j < x.size(); ++j) y[j] = std::min(std::max(x[j], 0.0), 6.0);
          break;
        case LayerTag::global_avg_pool: {
          const std::size_t P = l.in_shape[1] * l.in_shape[2];
          for (std::size_t c = 0; c < l.in_shape[0]; ++c) {
            double s = 0.0;
            for (std::size_t p = 0; p < P; ++p) s += x[c * P + p];
            y[c] = s / static_cast<double>(P);
          }
          break;
        }
        case LayerTag::residual_add: {
          const auto& skip = nodes[k.skip_node];
          for (std::size_t j = 0; j < x.size(); ++j) y[j] = x[j] + skip[j];
          break;
        }
      }
      nodes.push_back(std::move(y));
    }
    rows.push_back(nodes.back());
  }
  const std::size_t F = rows.front().size();
  Tensor out({N, F});
  for (std::size_t n = 0; n < N; ++n) std::copy(rows[n].begin(), rows[n].end(), out.ptr() + n * F);
  return out;
}

// Inputs of every relu6 layer, for checking distance from the clip points.
inline double min_kink_distance(const Model& model, const Tensor& input) {
  const auto& spec = model.spec;
  double best = 1e300;
  for (std::size_t i = 0; i < spec.layer_count(); ++i) {
    if (spec.layer(i).kind.tag != LayerTag::relu6) continue;
    // Evaluate the prefix up to (and excluding) layer i.
    std::vector<Layer> prefix(spec.layers().begin(), spec.layers().begin() + static_cast<long>(i));
    if (prefix.empty()) continue;
    ModelSpec sub(spec.family(), spec.width(), spec.input_shape(), prefix);
    ParamStore ps(model.params.dtype());
    for (auto j : sub.parametric_layers()) ps.set(j, model.params.at(j));
    const Tensor z = reference_forward(Model{sub, ps}, input);
    for (double v : z.data()) best = std::min({best, std::abs(v), std::abs(v - 6.0)});
  }
  return best;
}

// L = sum(r * f(x)) makes dL/df = r, so any loss_grad can be checked against differences of L.
inline double weighted_sum(const Tensor& out, const Tensor& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.numel(); ++i) s += out[i] * r[i];
  return s;
}

struct GradCheck {
  double worst_rel = 0.0;
  std::size_t checked = 0;
  std::string worst_where;
};

// Relative error |a - n| / max(|a|, |n|, floor) over every weight and bias of every weighted layer.
inline GradCheck check_gradients(Model& model, const Tensor& input, const Tensor& r, double h, double floor) {
  ActivationCache cache(full_selection(model.spec));
  const Tensor out = forward(model, input, &cache);
  const GradientSet grads = backward(model, cache, r.reshaped(out.shape()));
  GradCheck gc;
  auto probe = [&](std::size_t layer, Tensor& param, const Tensor& analytic, const char* what) {
    for (std::size_t j = 0; j < param.numel(); ++j) {
      const double saved = param[j];
      param[j] = saved + h;
      const double lp = weighted_sum(forward(model, input), r);
      param[j] = saved - h;
      const double lm = weighted_sum(forward(model, input), r);
      param[j] = saved;
      const double numeric = (lp - lm) / (2.0 * h);
      const double a = analytic[j];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++gc.checked;
      if (rel > gc.worst_rel) {
        gc.worst_rel = rel;
        gc.worst_where = model.spec.layer(layer).name + "." + what + "[" + std::to_string(j) + "]";
      }
    }
  };
  for (auto i : model.spec.parametric_layers()) {
    auto& lp = model.params.at(i);
    const auto& lg = grads.layers.at(i);
    probe(i, lp.weight, lg.weight, "weight");
    probe(i, lp.bias, lg.bias, "bias");
  }
  return gc;
}

// Random subset of weighted layers, each with a random non-empty sorted channel set.
inline UpdatePlan random_plan(const ModelSpec& spec, std::mt19937_64& rng, double layer_prob = 0.4) {
  std::bernoulli_distribution take(layer_prob), coin(0.5);
  UpdatePlan plan;
  plan.source = "random";
  for (auto i : spec.parametric_layers()) {
    if (!take(rng)) continue;
    const std::size_t C = spec.layer(i).kind.out_channels;
    PlanEntry e{i, {}, coin(rng)};
    for (std::size_t c = 0; c < C; ++c)
      if (coin(rng)) e.channels.push_back(c);
    if (e.channels.empty()) e.channels.push_back(std::uniform_int_distribution<std::size_t>(0, C - 1)(rng));
    plan.entries.push_back(std::move(e));
  }
  std::shuffle(plan.entries.begin(), plan.entries.end(), rng);
  return plan;
}

}  // namespace tt_test

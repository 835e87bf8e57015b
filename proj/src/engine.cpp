#include "tinytrain/engine.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "tinytrain/errors.hpp"

namespace tinytrain {

Selection full_selection(const ModelSpec& spec) {
  Selection s;
  for (auto i : spec.parametric_layers()) {
    LayerSelection ls;
    ls.channels.resize(spec.layer(i).kind.out_channels);
    for (std::size_t c = 0; c < ls.channels.size(); ++c) ls.channels[c] = c;
    s.emplace(i, std::move(ls));
  }
  return s;
}

ActivationCache::ActivationCache(Selection trainable, std::set<std::size_t> observed)
    : trainable_(std::move(trainable)), observed_(std::move(observed)) {
  std::ptrdiff_t e = -1;
  if (!trainable_.empty()) e = static_cast<std::ptrdiff_t>(trainable_.begin()->first);
  if (!observed_.empty()) {
    const auto o = static_cast<std::ptrdiff_t>(*observed_.begin());
    e = e < 0 ? o : std::min(e, o);
  }
  earliest_ = e;
}

namespace {

struct Dims {
  std::size_t c, h, w;
};

Dims dims3(const Shape& s) { return {s.at(0), s.at(1), s.at(2)}; }

// Copies one example's (C,H,W) block into a zero-padded scratch buffer.
void pad_into(const double* x, Dims in, std::size_t pad, std::vector<double>& buf) {
  const std::size_t hp = in.h + 2 * pad, wp = in.w + 2 * pad;
  buf.assign(in.c * hp * wp, 0.0);
  for (std::size_t c = 0; c < in.c; ++c)
    for (std::size_t y = 0; y < in.h; ++y)
      std::copy_n(x + (c * in.h + y) * in.w, in.w, buf.data() + (c * hp + y + pad) * wp + pad);
}

// conv2d and depthwise share one kernel; depthwise maps output channel o to input channel o only.
Tensor conv_forward(const Layer& l, const LayerParams& p, const Tensor& x, std::uint64_t& macs) {
  const auto& k = l.kind;
  const bool depthwise = k.tag == LayerTag::depthwise_conv2d;
  const Dims in = dims3(l.in_shape), out = dims3(l.out_shape);
  const std::size_t n_batch = x.dim(0), hp = in.h + 2 * k.padding, wp = in.w + 2 * k.padding;
  const std::size_t kk = k.kernel, s = k.stride;
  Tensor y({n_batch, out.c, out.h, out.w});
  std::vector<double> xp;
  const double* W = p.weight.ptr();
  for (std::size_t n = 0; n < n_batch; ++n) {
    pad_into(x.ptr() + n * in.c * in.h * in.w, in, k.padding, xp);
    double* yn = y.ptr() + n * out.c * out.h * out.w;
    for (std::size_t o = 0; o < out.c; ++o) {
      double* yo = yn + o * out.h * out.w;
      std::fill_n(yo, out.h * out.w, p.bias[o]);
      const std::size_t c_begin = depthwise ? o : 0, c_end = depthwise ? o + 1 : in.c;
      for (std::size_t c = c_begin; c < c_end; ++c) {
        const double* wk = depthwise ? W + o * kk * kk : W + (o * in.c + c) * kk * kk;
        for (std::size_t kh = 0; kh < kk; ++kh)
          for (std::size_t kw = 0; kw < kk; ++kw) {
            const double w = wk[kh * kk + kw];
            for (std::size_t oh = 0; oh < out.h; ++oh) {
              const double* xr = xp.data() + (c * hp + oh * s + kh) * wp + kw;
              double* yr = yo + oh * out.w;
              for (std::size_t ow = 0; ow < out.w; ++ow) yr[ow] += w * xr[ow * s];
            }
            macs += out.h * out.w;
          }
      }
    }
  }
  return y;
}

void conv_weight_grad(const Layer& l, const Tensor& x, const Tensor& g, const LayerSelection& sel, LayerGrad& lg,
                      std::uint64_t& macs) {
  const auto& k = l.kind;
  const bool depthwise = k.tag == LayerTag::depthwise_conv2d;
  const Dims in = dims3(l.in_shape), out = dims3(l.out_shape);
  const std::size_t n_batch = x.dim(0), hp = in.h + 2 * k.padding, wp = in.w + 2 * k.padding;
  const std::size_t kk = k.kernel, s = k.stride, plane = out.h * out.w;
  std::vector<double> xp;
  double* dW = lg.weight.ptr();
  for (std::size_t n = 0; n < n_batch; ++n) {
    pad_into(x.ptr() + n * in.c * in.h * in.w, in, k.padding, xp);
    const double* gn = g.ptr() + n * out.c * plane;
    for (auto o : sel.channels) {
      const double* go = gn + o * plane;
      const std::size_t c_begin = depthwise ? o : 0, c_end = depthwise ? o + 1 : in.c;
      for (std::size_t c = c_begin; c < c_end; ++c) {
        double* dk = depthwise ? dW + o * kk * kk : dW + (o * in.c + c) * kk * kk;
        for (std::size_t kh = 0; kh < kk; ++kh)
          for (std::size_t kw = 0; kw < kk; ++kw) {
            double acc = 0.0;
            for (std::size_t oh = 0; oh < out.h; ++oh) {
              const double* xr = xp.data() + (c * hp + oh * s + kh) * wp + kw;
              const double* gr = go + oh * out.w;
              for (std::size_t ow = 0; ow < out.w; ++ow) acc += gr[ow] * xr[ow * s];
            }
            dk[kh * kk + kw] += acc;
            macs += plane;
          }
      }
      if (sel.bias) {
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += go[i];
        lg.bias[o] += acc;
      }
    }
  }
}

Tensor conv_input_grad(const Layer& l, const LayerParams& p, const Tensor& g, std::uint64_t& macs) {
  const auto& k = l.kind;
  const bool depthwise = k.tag == LayerTag::depthwise_conv2d;
  const Dims in = dims3(l.in_shape), out = dims3(l.out_shape);
  const std::size_t n_batch = g.dim(0), hp = in.h + 2 * k.padding, wp = in.w + 2 * k.padding;
  const std::size_t kk = k.kernel, s = k.stride, plane = out.h * out.w;
  Tensor dx({n_batch, in.c, in.h, in.w});
  std::vector<double> dxp;
  const double* W = p.weight.ptr();
  for (std::size_t n = 0; n < n_batch; ++n) {
    dxp.assign(in.c * hp * wp, 0.0);
    const double* gn = g.ptr() + n * out.c * plane;
    for (std::size_t o = 0; o < out.c; ++o) {
      const double* go = gn + o * plane;
      const std::size_t c_begin = depthwise ? o : 0, c_end = depthwise ? o + 1 : in.c;
      for (std::size_t c = c_begin; c < c_end; ++c) {
        const double* wk = depthwise ? W + o * kk * kk : W + (o * in.c + c) * kk * kk;
        for (std::size_t kh = 0; kh < kk; ++kh)
          for (std::size_t kw = 0; kw < kk; ++kw) {
            const double w = wk[kh * kk + kw];
            for (std::size_t oh = 0; oh < out.h; ++oh) {
              double* dr = dxp.data() + (c * hp + oh * s + kh) * wp + kw;
              const double* gr = go + oh * out.w;
              for (std::size_t ow = 0; ow < out.w; ++ow) dr[ow * s] += w * gr[ow];
            }
            macs += plane;
          }
      }
    }
    double* dxn = dx.ptr() + n * in.c * in.h * in.w;
    for (std::size_t c = 0; c < in.c; ++c)
      for (std::size_t y = 0; y < in.h; ++y)
        std::copy_n(dxp.data() + (c * hp + y + k.padding) * wp + k.padding, in.w, dxn + (c * in.h + y) * in.w);
  }
  return dx;
}

// Pointwise conv and linear are both y[o, p] = b[o] + sum_c W[o, c] x[c, p]; linear has one position.
std::size_t positions(const Layer& l) { return l.kind.tag == LayerTag::linear ? 1 : l.in_shape[1] * l.in_shape[2]; }

Tensor dense_forward(const Layer& l, const LayerParams& p, const Tensor& x, std::uint64_t& macs) {
  const std::size_t cin = l.kind.in_channels, cout = l.kind.out_channels, P = positions(l), n_batch = x.dim(0);
  Shape ys{n_batch};
  ys.insert(ys.end(), l.out_shape.begin(), l.out_shape.end());
  Tensor y(ys);
  const double* W = p.weight.ptr();
  for (std::size_t n = 0; n < n_batch; ++n) {
    const double* xn = x.ptr() + n * cin * P;
    double* yn = y.ptr() + n * cout * P;
    for (std::size_t o = 0; o < cout; ++o) {
      double* yo = yn + o * P;
      std::fill_n(yo, P, p.bias[o]);
      for (std::size_t c = 0; c < cin; ++c) {
        const double w = W[o * cin + c];
        const double* xc = xn + c * P;
        for (std::size_t i = 0; i < P; ++i) yo[i] += w * xc[i];
        macs += P;
      }
    }
  }
  return y;
}

void dense_weight_grad(const Layer& l, const Tensor& x, const Tensor& g, const LayerSelection& sel, LayerGrad& lg,
                       std::uint64_t& macs) {
  const std::size_t cin = l.kind.in_channels, cout = l.kind.out_channels, P = positions(l), n_batch = x.dim(0);
  double* dW = lg.weight.ptr();
  for (std::size_t n = 0; n < n_batch; ++n) {
    const double* xn = x.ptr() + n * cin * P;
    const double* gn = g.ptr() + n * cout * P;
    for (auto o : sel.channels) {
      const double* go = gn + o * P;
      for (std::size_t c = 0; c < cin; ++c) {
        const double* xc = xn + c * P;
        double acc = 0.0;
        for (std::size_t i = 0; i < P; ++i) acc += go[i] * xc[i];
        dW[o * cin + c] += acc;
        macs += P;
      }
      if (sel.bias) {
        double acc = 0.0;
        for (std::size_t i = 0; i < P; ++i) acc += go[i];
        lg.bias[o] += acc;
      }
    }
  }
}

Tensor dense_input_grad(const Layer& l, const LayerParams& p, const Tensor& g, std::uint64_t& macs) {
  const std::size_t cin = l.kind.in_channels, cout = l.kind.out_channels, P = positions(l), n_batch = g.dim(0);
  Shape xs{n_batch};
  xs.insert(xs.end(), l.in_shape.begin(), l.in_shape.end());
  Tensor dx(xs);
  const double* W = p.weight.ptr();
  for (std::size_t n = 0; n < n_batch; ++n) {
    const double* gn = g.ptr() + n * cout * P;
    double* dxn = dx.ptr() + n * cin * P;
    for (std::size_t o = 0; o < cout; ++o) {
      const double* go = gn + o * P;
      for (std::size_t c = 0; c < cin; ++c) {
        const double w = W[o * cin + c];
        double* dc = dxn + c * P;
        for (std::size_t i = 0; i < P; ++i) dc[i] += w * go[i];
        macs += P;
      }
    }
  }
  return dx;
}

Tensor relu6_forward(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.data()) v = std::min(std::max(v, 0.0), 6.0);
  return y;
}

Tensor relu6_backward(const Tensor& x, const Tensor& g) {
  Tensor dx(g.shape());
  for (std::size_t i = 0; i < g.numel(); ++i) dx[i] = (x[i] > 0.0 && x[i] < 6.0) ? g[i] : 0.0;
  return dx;
}

Tensor gap_forward(const Layer& l, const Tensor& x) {
  const Dims in = dims3(l.in_shape);
  const std::size_t n_batch = x.dim(0), plane = in.h * in.w;
  Tensor y({n_batch, in.c});
  for (std::size_t n = 0; n < n_batch; ++n)
    for (std::size_t c = 0; c < in.c; ++c) {
      const double* xc = x.ptr() + (n * in.c + c) * plane;
      double acc = 0.0;
      for (std::size_t i = 0; i < plane; ++i) acc += xc[i];
      y[n * in.c + c] = acc / static_cast<double>(plane);
    }
  return y;
}

Tensor gap_backward(const Layer& l, const Tensor& g) {
  const Dims in = dims3(l.in_shape);
  const std::size_t n_batch = g.dim(0), plane = in.h * in.w;
  Tensor dx({n_batch, in.c, in.h, in.w});
  for (std::size_t n = 0; n < n_batch; ++n)
    for (std::size_t c = 0; c < in.c; ++c)
      std::fill_n(dx.ptr() + (n * in.c + c) * plane, plane, g[n * in.c + c] / static_cast<double>(plane));
  return dx;
}

void add_into(std::optional<Tensor>& slot, const Tensor& g) {
  if (!slot) {
    slot = g;
    return;
  }
  auto d = slot->data();
  auto s = g.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

void check_selection(const ModelSpec& spec, const Selection& sel, const std::set<std::size_t>& observed) {
  for (const auto& [i, ls] : sel) {
    if (i >= spec.layer_count() || !spec.layer(i).kind.has_weights())
      throw StructuralError("layer " + std::to_string(i) + " cannot be trained: no weights");
    for (auto c : ls.channels)
      if (c >= spec.layer(i).kind.out_channels)
        throw StructuralError("channel " + std::to_string(c) + " out of range for layer '" + spec.layer(i).name + "'");
  }
  for (auto i : observed)
    if (i >= spec.layer_count() || !spec.layer(i).kind.has_weights())
      throw StructuralError("layer " + std::to_string(i) + " cannot be observed: no weights");
}

}  // namespace

Tensor forward(const Model& model, const Tensor& input, ActivationCache* cache, PassCounters* counters) {
  const auto& spec = model.spec;
  const auto& in_shape = spec.input_shape();
  bool ok = input.rank() == in_shape.size() + 1;
  for (std::size_t i = 0; ok && i < in_shape.size(); ++i) ok = input.dim(i + 1) == in_shape[i];
  if (!ok)
    throw StructuralError("input " + shape_str(input.shape()) + " does not match model input " + shape_str(in_shape));

  const DType dtype = model.params.dtype();
  std::set<std::size_t> skip_nodes;
  for (const auto& l : spec.layers())
    if (l.kind.tag == LayerTag::residual_add) skip_nodes.insert(l.kind.skip_node);

  if (cache) {
    check_selection(spec, cache->trainable_, cache->observed_);
    cache->inputs_.clear();
    cache->relu_inputs_.clear();
    cache->outputs_.clear();
    cache->batch_count_ = input.dim(0);
  }

  std::uint64_t macs = 0;
  std::map<std::size_t, Tensor> kept;
  Tensor cur = input.as(dtype);
  if (skip_nodes.count(0)) kept[0] = cur;
  for (std::size_t i = 0; i < spec.layer_count(); ++i) {
    const auto& l = spec.layer(i);
    if (cache) {
      if (cache->trainable_.count(i)) cache->inputs_[i] = cur;
      if (l.kind.tag == LayerTag::relu6 && cache->earliest_ >= 0 && static_cast<std::ptrdiff_t>(i) > cache->earliest_)
        cache->relu_inputs_[i] = cur;
    }
    Tensor out;
    switch (l.kind.tag) {
      case LayerTag::conv2d:
      case LayerTag::depthwise_conv2d: out = conv_forward(l, model.params.at(i), cur, macs); break;
      case LayerTag::pointwise_conv2d:
      case LayerTag::linear: out = dense_forward(l, model.params.at(i), cur, macs); break;
      case LayerTag::relu6: out = relu6_forward(cur); break;
      case LayerTag::global_avg_pool: out = gap_forward(l, cur); break;
      case LayerTag::residual_add: {
        out = cur;
        const Tensor& skip = kept.at(l.kind.skip_node);
        for (std::size_t j = 0; j < out.numel(); ++j) out[j] += skip[j];
        break;
      }
    }
    out = out.as(dtype);
    if (cache && cache->observed_.count(i)) cache->outputs_[i] = out;
    cur = std::move(out);
    if (skip_nodes.count(i + 1)) kept[i + 1] = cur;
  }
  if (counters) {
    ++counters->forward_calls;
    counters->forward_macs += macs;
  }
  return cur;
}

struct BackwardPass {
  static GradientSet run(const Model& model, const ActivationCache& cache, const Tensor& loss_grad,
                         const ActivationGradSink& sink, PassCounters* counters) {
    const auto& spec = model.spec;
    const std::size_t L = spec.layer_count();
    Shape expected{cache.batch_count_};
    expected.insert(expected.end(), spec.output_shape().begin(), spec.output_shape().end());
    if (loss_grad.shape() != expected)
      throw ContractError("loss gradient " + shape_str(loss_grad.shape()) + " does not match output " +
                          shape_str(expected));
    for (const auto& [i, ls] : cache.trainable_)
      if (!cache.inputs_.count(i))
        throw ContractError("activation cache has no saved input for trainable layer '" + spec.layer(i).name + "'");
    for (auto i : cache.observed_)
      if (!cache.outputs_.count(i))
        throw ContractError("activation cache has no saved output for observed layer '" + spec.layer(i).name + "'");

    GradientSet grads;
    std::uint64_t macs = 0;
    if (cache.earliest_ >= 0) {
      const auto earliest = static_cast<std::size_t>(cache.earliest_);
      std::vector<std::optional<Tensor>> node_grad(L + 1);
      node_grad[L] = loss_grad;
      for (std::size_t i = L; i-- > earliest;) {
        if (!node_grad[i + 1]) continue;
        const Tensor g = std::move(*node_grad[i + 1]);
        node_grad[i + 1].reset();
        const auto& l = spec.layer(i);

        if (cache.observed_.count(i) && sink) sink(i, cache.outputs_.at(i), g);

        if (auto it = cache.trainable_.find(i); it != cache.trainable_.end()) {
          LayerGrad lg{Tensor(l.weight_shape()), Tensor({l.kind.out_channels}), it->second.channels, it->second.bias};
          const Tensor& x = cache.inputs_.at(i);
          if (l.kind.tag == LayerTag::conv2d || l.kind.tag == LayerTag::depthwise_conv2d)
            conv_weight_grad(l, x, g, it->second, lg, macs);
          else
            dense_weight_grad(l, x, g, it->second, lg, macs);
          grads.layers.emplace(i, std::move(lg));
        }

        if (i == earliest) continue;
        switch (l.kind.tag) {
          case LayerTag::conv2d:
          case LayerTag::depthwise_conv2d: add_into(node_grad[i], conv_input_grad(l, model.params.at(i), g, macs)); break;
          case LayerTag::pointwise_conv2d:
          case LayerTag::linear: add_into(node_grad[i], dense_input_grad(l, model.params.at(i), g, macs)); break;
          case LayerTag::relu6: add_into(node_grad[i], relu6_backward(cache.relu_inputs_.at(i), g)); break;
          case LayerTag::global_avg_pool: add_into(node_grad[i], gap_backward(l, g)); break;
          case LayerTag::residual_add:
            if (l.kind.skip_node > earliest) add_into(node_grad[l.kind.skip_node], g);
            add_into(node_grad[i], g);
            break;
        }
      }
    }
    if (counters) {
      ++counters->backward_calls;
      counters->backward_macs += macs;
    }
    return grads;
  }
};

GradientSet backward(const Model& model, const ActivationCache& cache, const Tensor& loss_grad,
                     const ActivationGradSink& sink, PassCounters* counters) {
  return BackwardPass::run(model, cache, loss_grad, sink, counters);
}

void sgd_momentum_step(const ModelSpec& spec, ParamStore& params, const GradientSet& grads, const SgdMomentum& opt,
                       VelocityState& velocity) {
  if (!(opt.lr >= 0.0) || !std::isfinite(opt.lr)) throw ValidationError("learning rate must be finite and non-negative");
  if (opt.momentum < 0.0 || opt.momentum >= 1.0) throw ValidationError("momentum must lie in [0, 1)");
  for (const auto& [i, lg] : grads.layers) {
    const auto row = lg.weight.numel() / lg.weight.dim(0);
    for (auto o : lg.channels) {
      bool finite = !lg.has_bias || std::isfinite(lg.bias[o]);
      for (std::size_t j = 0; finite && j < row; ++j) finite = std::isfinite(lg.weight[o * row + j]);
      if (!finite) throw NumericError("non-finite gradient in layer '" + spec.layer(i).name + "'");
    }
  }
  const DType dtype = params.dtype();
  for (const auto& [i, lg] : grads.layers) {
    auto& p = params.at(i);
    auto [vit, fresh] = velocity.layers.try_emplace(i);
    if (fresh) vit->second = LayerGrad{Tensor(lg.weight.shape()), Tensor(lg.bias.shape()), lg.channels, lg.has_bias};
    auto& v = vit->second;
    const auto row = lg.weight.numel() / lg.weight.dim(0);
    for (auto o : lg.channels) {
      for (std::size_t j = o * row; j < (o + 1) * row; ++j) {
        v.weight[j] = opt.momentum * v.weight[j] + lg.weight[j];
        p.weight[j] = round_to(dtype, p.weight[j] - opt.lr * v.weight[j]);
      }
      if (lg.has_bias) {
        v.bias[o] = opt.momentum * v.bias[o] + lg.bias[o];
        p.bias[o] = round_to(dtype, p.bias[o] - opt.lr * v.bias[o]);
      }
    }
  }
  params.bump_version();
}

}  // namespace tinytrain

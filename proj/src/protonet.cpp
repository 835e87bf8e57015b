#include "tinytrain/protonet.hpp"

#include <algorithm>
#include <cmath>

#include "tinytrain/errors.hpp"

namespace tinytrain {

namespace {

constexpr double kNormFloor = 1e-12;

double norm(std::span<const double> u) {
  double s = 0.0;
  for (double x : u) s += x * x;
  return std::sqrt(s);
}

double dot(std::span<const double> u, std::span<const double> v) {
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
  return s;
}

std::span<const double> row(const Tensor& t, std::size_t i) {
  const std::size_t m = t.numel() / t.dim(0);
  return t.data().subspan(i * m, m);
}

void check_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw ContractError(std::string(what) + " must be [N, m], got " + shape_str(t.shape()));
}

}  // namespace

Prototypes compute_prototypes(const Tensor& features, std::span<const std::size_t> labels, std::size_t way) {
  check_matrix(features, "features");
  if (labels.size() != features.dim(0)) throw ContractError("label count does not match feature rows");
  if (way == 0) throw ContractError("prototypes need at least one class");
  const std::size_t m = features.dim(1);
  Prototypes p{Tensor({way, m}), std::vector<std::size_t>(way, 0)};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= way) throw ContractError("label " + std::to_string(labels[i]) + " out of range");
    ++p.counts[labels[i]];
    auto f = row(features, i);
    for (std::size_t j = 0; j < m; ++j) p.centroids[labels[i] * m + j] += f[j];
  }
  for (std::size_t k = 0; k < way; ++k) {
    if (p.counts[k] == 0) throw ContractError("class " + std::to_string(k) + " has no support features");
    for (std::size_t j = 0; j < m; ++j) p.centroids[k * m + j] /= static_cast<double>(p.counts[k]);
  }
  return p;
}

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  const double nu = norm(u), nv = norm(v);
  if (nu < kNormFloor || nv < kNormFloor) throw NumericError("cosine distance on a zero-norm vector");
  return dot(u, v) / (nu * nv);
}

Tensor classify(const Tensor& features, const Prototypes& protos, double temperature) {
  check_matrix(features, "features");
  if (!(temperature > 0.0)) throw ValidationError("temperature must be positive");
  const std::size_t n = features.dim(0), way = protos.centroids.dim(0);
  if (features.dim(1) != protos.centroids.dim(1)) throw ContractError("feature width differs from prototypes");
  Tensor probs({n, way});
  std::vector<double> logits(way);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < way; ++k)
      logits[k] = -(1.0 - cosine_similarity(row(features, i), row(protos.centroids, k))) / temperature;
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (auto& l : logits) z += (l = std::exp(l - mx));
    for (std::size_t k = 0; k < way; ++k) probs[i * way + k] = logits[k] / z;
  }
  return probs;
}

std::vector<std::size_t> argmax_rows(const Tensor& probs) {
  const std::size_t n = probs.dim(0), k = probs.dim(1);
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* r = probs.ptr() + i * k;
    out[i] = static_cast<std::size_t>(std::max_element(r, r + k) - r);
  }
  return out;
}

ProtoLoss protonet_loss(const Tensor& features, std::span<const std::size_t> labels, std::size_t support_count,
                        std::size_t way, double temperature, double loss_scale) {
  check_matrix(features, "features");
  const std::size_t n = features.dim(0), m = features.dim(1);
  if (support_count == 0 || support_count >= n) throw ContractError("need at least one support and one query row");
  if (labels.size() != n) throw ContractError("label count does not match feature rows");

  const Tensor support = features.slice_rows(0, support_count);
  const Tensor query = features.slice_rows(support_count, n);
  const auto protos = compute_prototypes(support, labels.subspan(0, support_count), way);
  const std::size_t nq = n - support_count;

  ProtoLoss out;
  out.probs = classify(query, protos, temperature);
  out.grad = Tensor({n, m});
  Tensor centroid_grad({way, m});

  std::vector<double> proto_norm(way);
  for (std::size_t k = 0; k < way; ++k) proto_norm[k] = norm(row(protos.centroids, k));

  const double scale = loss_scale / static_cast<double>(nq);
  double loss = 0.0;
  for (std::size_t q = 0; q < nq; ++q) {
    const std::size_t y = labels[support_count + q];
    if (y >= way) throw ContractError("query label out of range");
    const double py = out.probs[q * way + y];
    loss -= std::log(std::max(py, 1e-300));
    const auto u = row(query, q);
    const double nu = norm(u);
    double* gu = out.grad.ptr() + (support_count + q) * m;
    for (std::size_t k = 0; k < way; ++k) {
      // dL/dcos = dL/dlogit * dlogit/dcos, with logit = (cos - 1) / T.
      const double dz = scale * (out.probs[q * way + k] - (k == y ? 1.0 : 0.0));
      const double dcos = dz / temperature;
      if (dcos == 0.0) continue;
      const auto v = row(protos.centroids, k);
      const double nv = proto_norm[k];
      const double c = dot(u, v) / (nu * nv);
      double* gv = centroid_grad.ptr() + k * m;
      for (std::size_t j = 0; j < m; ++j) {
        gu[j] += dcos * (v[j] / (nu * nv) - c * u[j] / (nu * nu));
        gv[j] += dcos * (u[j] / (nu * nv) - c * v[j] / (nv * nv));
      }
    }
    if (argmax_rows(out.probs.slice_rows(q, q + 1))[0] == y) ++out.correct;
  }
  for (std::size_t s = 0; s < support_count; ++s) {
    const std::size_t k = labels[s];
    const double inv = 1.0 / static_cast<double>(protos.counts[k]);
    double* gs = out.grad.ptr() + s * m;
    for (std::size_t j = 0; j < m; ++j) gs[j] += centroid_grad[k * m + j] * inv;
  }
  out.loss = loss_scale * loss / static_cast<double>(nq);
  return out;
}

}  // namespace tinytrain

#include "tinytrain/dataset.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "binary_io.hpp"
#include "tinytrain/errors.hpp"

namespace tinytrain {

namespace detail {

std::vector<char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::string& path, std::span<const char> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write to '" + path + "'");
}

}  // namespace detail

Dataset::Dataset(Shape dims, std::size_t class_count, std::vector<std::uint32_t> labels, std::vector<float> samples)
    : dims_(std::move(dims)), class_count_(class_count), labels_(std::move(labels)), samples_(std::move(samples)) {
  if (dims_.empty() || shape_numel(dims_) == 0) throw DatasetError("dataset sample dims must be positive");
  if (samples_.size() != labels_.size() * shape_numel(dims_))
    throw DatasetError("dataset blob holds " + std::to_string(samples_.size()) + " values, expected " +
                       std::to_string(labels_.size() * shape_numel(dims_)));
  by_class_.resize(class_count_);
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] >= class_count_)
      throw DatasetError("label " + std::to_string(labels_[i]) + " at sample " + std::to_string(i) +
                         " is not below class count " + std::to_string(class_count_));
    by_class_[labels_[i]].push_back(i);
  }
}

Tensor Dataset::gather(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw ContractError("gather needs at least one index");
  Shape s{indices.size()};
  s.insert(s.end(), dims_.begin(), dims_.end());
  const std::size_t m = sample_numel();
  std::vector<double> data(indices.size() * m);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= size()) throw ContractError("sample index out of range");
    const float* src = samples_.data() + indices[r] * m;
    for (std::size_t j = 0; j < m; ++j) data[r * m + j] = src[j];
  }
  return Tensor(std::move(s), std::move(data), DType::f32);
}

std::vector<char> encode_dataset(const Dataset& ds) {
  detail::ByteWriter w;
  w.str("TTDS");
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(ds.size()));
  w.u32(static_cast<std::uint32_t>(ds.class_count()));
  w.u32(static_cast<std::uint32_t>(ds.dims().size()));
  for (auto d : ds.dims()) w.u32(static_cast<std::uint32_t>(d));
  for (auto l : ds.labels()) w.u32(l);
  w.raw(ds.samples().data(), ds.samples().size() * sizeof(float));
  return std::move(w.bytes());
}

Dataset decode_dataset(std::span<const char> bytes) {
  detail::ByteReader r(bytes);
  char magic[4];
  if (!r.has(4)) throw DatasetError("dataset file too short for header");
  r.raw(magic, 4);
  if (std::string(magic, 4) != "TTDS") throw DatasetError("not a TTDS dataset (bad magic)");
  if (!r.has(16)) throw DatasetError("dataset header truncated");
  const auto version = r.u32();
  if (version != kDatasetVersion) throw DatasetError("unsupported TTDS version " + std::to_string(version));
  const std::size_t count = r.u32(), classes = r.u32(), rank = r.u32();
  if (rank == 0 || rank > 8 || !r.has(rank * 4)) throw DatasetError("dataset dims truncated or invalid");
  Shape dims(rank);
  for (auto& d : dims) d = r.u32();
  const std::size_t numel = shape_numel(dims);
  if (!r.has(count * 4)) throw DatasetError("dataset labels truncated");
  std::vector<std::uint32_t> labels(count);
  if (count) r.raw(labels.data(), count * 4);
  const std::size_t blob = count * numel * sizeof(float);
  if (r.remaining() != blob)
    throw DatasetError("dataset blob is " + std::to_string(r.remaining()) + " bytes, header implies " +
                       std::to_string(blob));
  std::vector<float> samples(count * numel);
  if (blob) r.raw(samples.data(), blob);
  return Dataset(std::move(dims), classes, std::move(labels), std::move(samples));
}

void write_dataset(const std::filesystem::path& path, const Dataset& ds) {
  try {
    detail::write_file(path.string(), encode_dataset(ds));
  } catch (const std::runtime_error& e) {
    throw DatasetError(e.what());
  }
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::vector<char> bytes;
  try {
    bytes = detail::read_file(path.string());
  } catch (const std::runtime_error& e) {
    throw DatasetError(e.what());
  }
  return decode_dataset(bytes);
}

namespace {

struct ClassStyle {
  double theta, freq, theta2, freq2, mix2;
  double colour[3];
};

ClassStyle draw_class(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ClassStyle c{};
  c.theta = u(rng) * std::numbers::pi;
  c.freq = 0.08 + 0.22 * u(rng);
  c.theta2 = u(rng) * std::numbers::pi;
  c.freq2 = 0.08 + 0.22 * u(rng);
  c.mix2 = 0.6 * u(rng);
  double n = 0.0;
  for (double& v : c.colour) {
    v = 2.0 * u(rng) - 1.0;
    n += v * v;
  }
  n = std::sqrt(std::max(n, 1e-6));
  for (double& v : c.colour) v /= n;
  return c;
}

struct RenderStyle {
  double mixing[3][3];
  double contrast;
  double offset;
  bool blur;
};

Dataset render_domain(const std::vector<ClassStyle>& classes, const RenderStyle& style, const ToyDataOptions& o,
                      std::mt19937_64& rng) {
  const std::size_t C = o.dims[0], H = o.dims[1], W = o.dims[2];
  const std::size_t m = C * H * W;
  std::vector<std::uint32_t> labels;
  std::vector<float> samples;
  labels.reserve(classes.size() * o.per_class);
  samples.reserve(classes.size() * o.per_class * m);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> clean(m), img(m);
  for (std::size_t k = 0; k < classes.size(); ++k) {
    const auto& cs = classes[k];
    for (std::size_t s = 0; s < o.per_class; ++s) {
      const double phase1 = 2.0 * std::numbers::pi * u(rng), phase2 = 2.0 * std::numbers::pi * u(rng);
      const double amp = 0.6 + 0.8 * u(rng);
      const double t1 = cs.theta + 0.08 * gauss(rng), t2 = cs.theta2 + 0.08 * gauss(rng);
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          const double px = static_cast<double>(x), py = static_cast<double>(y);
          const double g1 = std::sin(2 * std::numbers::pi * cs.freq * (px * std::cos(t1) + py * std::sin(t1)) + phase1);
          const double g2 = std::sin(2 * std::numbers::pi * cs.freq2 * (px * std::cos(t2) + py * std::sin(t2)) + phase2);
          const double v = amp * (g1 + cs.mix2 * g2);
          for (std::size_t c = 0; c < C; ++c) {
            double col = 0.0;
            for (std::size_t j = 0; j < 3; ++j) col += style.mixing[c % 3][j] * cs.colour[j];
            clean[(c * H + y) * W + x] = v * col + o.noise * gauss(rng);
          }
        }
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H; ++y)
          for (std::size_t x = 0; x < W; ++x) {
            double v = clean[(c * H + y) * W + x];
            if (style.blur) {
              double acc = 0.0;
              int n = 0;
              for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                  const auto yy = static_cast<std::ptrdiff_t>(y) + dy, xx = static_cast<std::ptrdiff_t>(x) + dx;
                  if (yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(H) || xx >= static_cast<std::ptrdiff_t>(W))
                    continue;
                  acc += clean[(c * H + static_cast<std::size_t>(yy)) * W + static_cast<std::size_t>(xx)];
                  ++n;
                }
              v = 0.5 * v + 0.5 * acc / n;
            }
            img[(c * H + y) * W + x] = style.contrast * v + style.offset;
          }
      for (double v : img) samples.push_back(static_cast<float>(v));
      labels.push_back(static_cast<std::uint32_t>(k));
    }
  }
  return Dataset(o.dims, classes.size(), std::move(labels), std::move(samples));
}

}  // namespace

ToyDomains generate_toy_domains(const ToyDataOptions& o, std::uint64_t seed) {
  if (o.dims.size() != 3 || shape_numel(o.dims) == 0) throw ValidationError("toy data dims must be (C,H,W)");
  if (o.per_class == 0 || o.source_classes == 0 || o.target_classes == 0)
    throw ValidationError("toy data needs classes and examples");
  std::mt19937_64 rng(seed);
  std::vector<ClassStyle> source_classes, target_classes;
  for (std::size_t i = 0; i < o.source_classes; ++i) source_classes.push_back(draw_class(rng));
  for (std::size_t i = 0; i < o.target_classes; ++i) target_classes.push_back(draw_class(rng));

  RenderStyle source_style{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}, 1.0, 0.0, false};
  // Target: rotated colour space, reduced contrast, offset and a slight blur.
  RenderStyle target_style{{{0.2, 0.9, 0.4}, {0.8, -0.1, 0.6}, {-0.5, 0.4, 0.8}}, o.target_contrast, o.shift, true};
  std::mt19937_64 src_rng(rng()), tgt_rng(rng());
  return {render_domain(source_classes, source_style, o, src_rng), render_domain(target_classes, target_style, o, tgt_rng)};
}

PixelStats pixel_stats(const Dataset& ds) {
  PixelStats s;
  const auto& v = ds.samples();
  if (v.empty()) return s;
  double sum = 0.0;
  for (float x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  double sq = 0.0;
  for (float x : v) sq += (x - s.mean) * (x - s.mean);
  s.variance = sq / static_cast<double>(v.size());
  return s;
}

}  // namespace tinytrain

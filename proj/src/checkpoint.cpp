#include "tinytrain/checkpoint.hpp"

#include <cstring>
#include <map>

#include <json.hpp>

#include "binary_io.hpp"
#include "tinytrain/errors.hpp"

namespace tinytrain {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'T', 'T', 'C', 'K'};

json layer_json(const Layer& l) {
  const auto& k = l.kind;
  json j = {{"name", l.name}, {"tag", layer_tag_name(k.tag)}};
  if (k.has_weights()) {
    j["in_channels"] = k.in_channels;
    j["out_channels"] = k.out_channels;
  }
  if (k.is_conv()) {
    j["kernel"] = k.kernel;
    j["stride"] = k.stride;
    j["padding"] = k.padding;
  }
  if (k.tag == LayerTag::residual_add) j["skip_node"] = k.skip_node;
  return j;
}

Layer layer_from_json(const json& j) {
  Layer l;
  l.name = j.at("name").get<std::string>();
  l.kind.tag = parse_layer_tag(j.at("tag").get<std::string>());
  l.kind.in_channels = j.value("in_channels", std::size_t{0});
  l.kind.out_channels = j.value("out_channels", std::size_t{0});
  l.kind.kernel = j.value("kernel", std::size_t{1});
  l.kind.stride = j.value("stride", std::size_t{1});
  l.kind.padding = j.value("padding", std::size_t{0});
  l.kind.skip_node = j.value("skip_node", std::size_t{0});
  return l;
}

void put_blob(detail::ByteWriter& w, const Tensor& t, DType dtype) {
  for (double v : t.data()) {
    if (dtype == DType::f32)
      w.f32(static_cast<float>(v));
    else
      w.f64(v);
  }
}

}  // namespace

std::vector<char> encode_checkpoint(const Model& model, const json& run) {
  const auto& spec = model.spec;
  const DType dtype = model.params.dtype();
  model.params.validate(spec);

  json layers = json::array();
  for (const auto& l : spec.layers()) layers.push_back(layer_json(l));

  // Offsets depend on the manifest length, which depends on the offsets; fix the
  // manifest with relative offsets first, then shift them by the header size until stable.
  struct Blob {
    std::size_t layer;
    const char* name;
    const Tensor* tensor;
  };
  std::vector<Blob> blobs;
  for (const auto& [i, lp] : model.params.entries()) {
    blobs.push_back({i, "weight", &lp.weight});
    blobs.push_back({i, "bias", &lp.bias});
  }

  auto manifest_for = [&](std::size_t base) {
    json tensors = json::array();
    std::size_t offset = base;
    for (const auto& b : blobs) {
      const std::size_t bytes = b.tensor->numel() * dtype_size(dtype);
      tensors.push_back({{"layer", b.layer},
                         {"name", b.name},
                         {"shape", b.tensor->shape()},
                         {"offset", offset},
                         {"bytes", bytes}});
      offset += bytes;
    }
    json m = {{"family", spec.family()},
              {"width", spec.width()},
              {"input_shape", spec.input_shape()},
              {"dtype", dtype_name(dtype)},
              {"param_version", model.params.version()},
              {"layers", layers},
              {"tensors", std::move(tensors)}};
    if (!run.is_null()) m["run"] = run;
    return m.dump();
  };

  std::size_t base = 12;
  std::string manifest = manifest_for(base);
  while (12 + manifest.size() != base) {
    base = 12 + manifest.size();
    manifest = manifest_for(base);
  }

  detail::ByteWriter w;
  w.raw(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(manifest.size()));
  w.str(manifest);
  for (const auto& b : blobs) put_blob(w, *b.tensor, dtype);
  return std::move(w.bytes());
}

Model decode_checkpoint(std::span<const char> bytes) {
  using K = CheckpointErrorKind;
  detail::ByteReader r(bytes);
  char magic[4];
  if (!r.has(4)) throw CheckpointError(K::truncated, "checkpoint shorter than its header");
  r.raw(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw CheckpointError(K::bad_magic, "not a TTCK checkpoint");
  if (!r.has(8)) throw CheckpointError(K::truncated, "checkpoint shorter than its header");
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw CheckpointError(K::version_mismatch, "checkpoint format version " + std::to_string(version) +
                                                   ", expected " + std::to_string(kCheckpointVersion));
  const auto manifest_len = r.u32();
  if (!r.has(manifest_len)) throw CheckpointError(K::truncated, "checkpoint manifest is truncated");
  std::string text(manifest_len, '\0');
  r.raw(text.data(), manifest_len);

  json m;
  ModelSpec spec;
  DType dtype;
  try {
    m = json::parse(text);
    std::vector<Layer> layers;
    for (const auto& lj : m.at("layers")) layers.push_back(layer_from_json(lj));
    spec = ModelSpec(m.at("family").get<std::string>(), m.at("width").get<double>(),
                     m.at("input_shape").get<Shape>(), std::move(layers));
    dtype = parse_dtype(m.at("dtype").get<std::string>());
  } catch (const json::exception& e) {
    throw CheckpointError(K::malformed, std::string("bad checkpoint manifest: ") + e.what());
  } catch (const CheckpointError&) {
    throw;
  } catch (const Error& e) {
    throw CheckpointError(K::malformed, std::string("bad checkpoint manifest: ") + e.what());
  }

  ParamStore params(dtype);
  params.set_version(m.value("param_version", std::uint64_t{0}));
  std::map<std::size_t, LayerParams> found;
  try {
    for (const auto& tj : m.at("tensors")) {
      const auto layer = tj.at("layer").get<std::size_t>();
      const auto name = tj.at("name").get<std::string>();
      const auto shape = tj.at("shape").get<Shape>();
      const auto offset = tj.at("offset").get<std::size_t>();
      if (layer >= spec.layer_count() || !spec.layer(layer).kind.has_weights())
        throw CheckpointError(K::shape_mismatch, "tensor for layer " + std::to_string(layer) + " which has no weights");
      if (name != "weight" && name != "bias") throw CheckpointError(K::malformed, "unknown tensor '" + name + "'");
      const auto& l = spec.layer(layer);
      const Shape expect = name == "weight" ? l.weight_shape() : Shape{l.kind.out_channels};
      if (shape != expect)
        throw CheckpointError(K::shape_mismatch, "layer '" + l.name + "' " + name + " has shape " + shape_str(shape) +
                                                     ", expected " + shape_str(expect));
      const std::size_t n = shape_numel(shape);
      const std::size_t bytes_needed = n * dtype_size(dtype);
      if (offset > bytes.size() || bytes.size() - offset < bytes_needed)
        throw CheckpointError(K::truncated, "blob '" + name + "' of layer '" + l.name + "' is truncated");
      std::vector<double> values(n);
      r.seek(offset);
      for (auto& v : values) {
        if (dtype == DType::f32) {
          float f;
          r.raw(&f, sizeof f);
          v = f;
        } else {
          r.raw(&v, sizeof v);
        }
      }
      auto& lp = found[layer];
      (name == "weight" ? lp.weight : lp.bias) = Tensor(shape, std::move(values), dtype);
    }
  } catch (const json::exception& e) {
    throw CheckpointError(K::malformed, std::string("bad checkpoint manifest: ") + e.what());
  }
  for (auto i : spec.parametric_layers()) {
    auto it = found.find(i);
    if (it == found.end() || it->second.weight.empty() || it->second.bias.empty())
      throw CheckpointError(K::shape_mismatch, "checkpoint lacks tensors for layer '" + spec.layer(i).name + "'");
    params.set(i, std::move(it->second));
  }
  return Model{std::move(spec), std::move(params)};
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, const json& run) {
  const auto bytes = encode_checkpoint(model, run);
  try {
    detail::write_file(path.string(), bytes);
  } catch (const std::runtime_error& e) {
    throw CheckpointError(CheckpointErrorKind::io, e.what());
  }
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::vector<char> bytes;
  try {
    bytes = detail::read_file(path.string());
  } catch (const std::runtime_error& e) {
    throw CheckpointError(CheckpointErrorKind::io, e.what());
  }
  return decode_checkpoint(bytes);
}

}  // namespace tinytrain

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "tinytrain/params.hpp"

namespace tinytrain {

// TTCK layout (little-endian): "TTCK", u32 version, u32 manifest length, manifest
// (UTF-8 JSON: spec layers, tensor names/shapes/dtype, absolute byte offsets), then
// the raw scalar blobs in manifest order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

// `run` (if not null) is stored verbatim under the manifest key "run" and ignored on load.
std::vector<char> encode_checkpoint(const Model& model, const nlohmann::json& run = nullptr);
// Throws CheckpointError with a kind that tells bad magic, version, truncation and shape errors apart.
Model decode_checkpoint(std::span<const char> bytes);

void save_checkpoint(const std::filesystem::path& path, const Model& model, const nlohmann::json& run = nullptr);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace tinytrain

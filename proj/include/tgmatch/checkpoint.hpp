#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tgmatch/model.hpp"

namespace tgmatch::checkpoint {

/// Checkpoint file layout:
///
///   bytes 0..7   magic "TGMCKPT1"
///   u32 LE       format version
///   u64 LE       header length, then that many bytes of JSON:
///                {format_version, step, metrics, config: {backbone, models, run}}
///   u32 LE       number of tensor blobs, then per blob:
///                u32 name length, name, u8 dtype code, u32 ndim, i64 dims..., u64 byte count, data
///
/// Blob names are "<model>.<parameter or buffer path>", e.g. "rgb.stage1.0.conv1.weight".
inline constexpr std::uint32_t kFormatVersion = 1;

struct Header {
  std::uint32_t format_version = kFormatVersion;
  std::int64_t step = 0;
  nlohmann::json metrics = nlohmann::json::object();
  nlohmann::json config = nlohmann::json::object();
};

using NamedModel = std::pair<std::string, model::VideoNet>;

nlohmann::json backbone_to_json(const model::BackboneConfig& c);
model::BackboneConfig backbone_from_json(const nlohmann::json& j);

/// Writes every parameter and buffer of the given models. `header.config` gets the backbone
/// config and model names filled in; any "run" entry already present is kept.
void save(const std::filesystem::path& path, Header header, const std::vector<NamedModel>& models);

Header read_header(const std::filesystem::path& path);

/// Restores the named models in place. Throws IoError if the file is malformed, if its
/// backbone config differs from a model's config, or if any tensor is missing or misshapen.
Header load(const std::filesystem::path& path, const std::vector<NamedModel>& models);

}  // namespace tgmatch::checkpoint

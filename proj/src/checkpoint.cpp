#include "tgmatch/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include "tgmatch/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace tgmatch::checkpoint {

namespace {

constexpr char kMagic[8] = {'T', 'G', 'M', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw IoError("truncated checkpoint");
  return v;
}

std::uint8_t dtype_code(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return 0;
    case torch::kFloat64: return 1;
    case torch::kInt64: return 2;
    default: throw IoError("unsupported tensor dtype in checkpoint");
  }
}

torch::ScalarType dtype_from_code(std::uint8_t c) {
  switch (c) {
    case 0: return torch::kFloat32;
    case 1: return torch::kFloat64;
    case 2: return torch::kInt64;
    default: throw IoError("unknown tensor dtype code in checkpoint");
  }
}

std::map<std::string, torch::Tensor> named_tensors(const std::vector<NamedModel>& models) {
  std::map<std::string, torch::Tensor> out;
  for (const auto& [name, net] : models) {
    for (const auto& p : net->named_parameters()) out[name + "." + p.key()] = p.value();
    for (const auto& b : net->named_buffers()) out[name + "." + b.key()] = b.value();
  }
  return out;
}

json config_echo(const std::vector<NamedModel>& models, json config) {
  if (models.empty()) throw IoError("checkpoint needs at least one model");
  config["backbone"] = backbone_to_json(models.front().second->config());
  json names = json::array();
  json modalities = json::object();
  for (const auto& [name, net] : models) {
    if (!(net->config() == models.front().second->config()))
      throw IoError("models in one checkpoint must share a backbone config");
    names.push_back(name);
    modalities[name] = modalities::to_string(net->modality());
  }
  config["models"] = names;
  config["modalities"] = modalities;
  return config;
}

Header read_header_from(std::istream& is, const fs::path& path) {
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw IoError(path.string() + " is not a checkpoint (bad magic)");
  Header h;
  h.format_version = get<std::uint32_t>(is);
  if (h.format_version != kFormatVersion)
    throw IoError("checkpoint format version " + std::to_string(h.format_version) +
                  " is not supported (expected " + std::to_string(kFormatVersion) + ")");
  const auto len = get<std::uint64_t>(is);
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw IoError("truncated checkpoint header");
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string("corrupt checkpoint header: ") + e.what());
  }
  h.step = j.at("step").get<std::int64_t>();
  h.metrics = j.at("metrics");
  h.config = j.at("config");
  return h;
}

}  // namespace

json backbone_to_json(const model::BackboneConfig& c) {
  return json{{"stage_channels", c.stage_channels},
              {"blocks_per_stage", c.blocks_per_stage},
              {"input_channels", c.input_channels},
              {"num_classes", c.num_classes},
              {"dropout_rate", c.dropout_rate},
              {"temporal_downsample", c.temporal_downsample},
              {"projection_hidden", c.projection_hidden},
              {"projection_dim", c.projection_dim}};
}

model::BackboneConfig backbone_from_json(const json& j) {
  model::BackboneConfig c;
  c.stage_channels = j.at("stage_channels").get<std::array<std::int64_t, 4>>();
  c.blocks_per_stage = j.at("blocks_per_stage").get<std::int64_t>();
  c.input_channels = j.at("input_channels").get<std::int64_t>();
  c.num_classes = j.at("num_classes").get<std::int64_t>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.temporal_downsample = j.at("temporal_downsample").get<std::array<bool, 4>>();
  c.projection_hidden = j.at("projection_hidden").get<std::int64_t>();
  c.projection_dim = j.at("projection_dim").get<std::int64_t>();
  return c;
}

void save(const fs::path& path, Header header, const std::vector<NamedModel>& models) {
  header.config = config_echo(models, header.config);
  const json j{{"format_version", header.format_version},
               {"step", header.step},
               {"metrics", header.metrics},
               {"config", header.config}};
  const auto text = j.dump();
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw IoError("cannot write checkpoint " + tmp.string());
    os.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(os, header.format_version);
    put<std::uint64_t>(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    const auto tensors = named_tensors(models);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
      auto data = t.detach().contiguous().cpu();
      put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      put<std::uint8_t>(os, dtype_code(data.scalar_type()));
      put<std::uint32_t>(os, static_cast<std::uint32_t>(data.dim()));
      for (auto d : data.sizes()) put<std::int64_t>(os, d);
      const auto bytes = static_cast<std::uint64_t>(data.numel() * data.element_size());
      put<std::uint64_t>(os, bytes);
      os.write(static_cast<const char*>(data.data_ptr()), static_cast<std::streamsize>(bytes));
    }
    if (!os) throw IoError("failed writing checkpoint " + tmp.string());
  }
  fs::rename(tmp, path);
}

Header read_header(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  return read_header_from(is, path);
}

Header load(const fs::path& path, const std::vector<NamedModel>& models) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  Header h = read_header_from(is, path);

  const auto stored = h.config.at("backbone");
  const auto& names = h.config.at("models");
  for (const auto& [name, net] : models) {
    const auto expected = backbone_to_json(net->config());
    if (stored != expected)
      throw IoError("checkpoint config mismatch for model '" + name + "': file has " +
                    stored.dump() + ", model expects " + expected.dump());
    if (std::find(names.begin(), names.end(), name) == names.end())
      throw IoError("checkpoint has no model named '" + name + "'");
  }

  std::map<std::string, torch::Tensor> blobs;
  const auto count = get<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(get<std::uint32_t>(is), '\0');
    is.read(name.data(), static_cast<std::streamsize>(name.size()));
    const auto dtype = dtype_from_code(get<std::uint8_t>(is));
    std::vector<std::int64_t> dims(get<std::uint32_t>(is));
    for (auto& d : dims) d = get<std::int64_t>(is);
    const auto bytes = get<std::uint64_t>(is);
    auto t = torch::empty(dims, dtype);
    if (static_cast<std::uint64_t>(t.numel() * t.element_size()) != bytes)
      throw IoError("checkpoint blob '" + name + "' has an inconsistent size");
    is.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(bytes));
    if (!is) throw IoError("truncated checkpoint blob '" + name + "'");
    blobs.emplace(std::move(name), std::move(t));
  }

  torch::NoGradGuard no_grad;
  for (const auto& [name, target] : named_tensors(models)) {
    auto it = blobs.find(name);
    if (it == blobs.end()) throw IoError("checkpoint is missing tensor '" + name + "'");
    if (it->second.sizes() != target.sizes() || it->second.scalar_type() != target.scalar_type())
      throw IoError("checkpoint tensor '" + name + "' does not match the model");
    target.copy_(it->second);
  }
  return h;
}

}  // namespace tgmatch::checkpoint

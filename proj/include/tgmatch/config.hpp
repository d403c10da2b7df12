#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "tgmatch/data.hpp"
#include "tgmatch/eval.hpp"
#include "tgmatch/model.hpp"
#include "tgmatch/trainer.hpp"

namespace tgmatch::config {

/// Everything a run needs. Flat dotted keys address each field (see config_fields()).
struct RunConfig {
  std::filesystem::path out_dir = "runs/default";
  std::filesystem::path train_manifest;
  std::filesystem::path test_manifest;
  double labeled_ratio = 0.1;
  std::int64_t labeled_per_class = 0;  // > 0 overrides labeled_ratio
  bool balanced = true;

  trainer::TrainConfig train;  // holds the root seed
  model::BackboneConfig backbone;
  data::BatchConfig batch;
  eval::EvalSpec eval;

  /// Desk-scale defaults for the synthetic moving-shapes data.
  RunConfig();

  /// Field-level checks; with `check_paths` the manifests must exist.
  void validate(bool check_paths) const;
  data::SplitSpec split_spec() const;
};

struct ConfigField {
  std::string key;
  std::string help;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

/// The registry: one entry per configurable field, in echo order.
const std::vector<ConfigField>& config_fields();
const ConfigField* find_field(const std::string& key);

/// Throws ConfigError for unknown keys or unparsable values.
void set_field(RunConfig& config, const std::string& key, const std::string& value);
std::string get_field(const RunConfig& config, const std::string& key);

/// Parses `key = value` lines; '#' starts a comment. Duplicate keys: last wins.
std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text);
void apply_config_file(RunConfig& config, const std::filesystem::path& path);

/// TGMATCH_ + upper-cased key with '.' replaced by '_', e.g. TGMATCH_LOSS_W_KD.
std::string env_var_name(const std::string& key);
/// Applies every set environment override. Returns the keys that were overridden.
std::vector<std::string> apply_env(RunConfig& config);

/// The effective config as a config file (parses back to the same config).
std::string to_config_text(const RunConfig& config);
nlohmann::json to_json(const RunConfig& config);
RunConfig from_json(const nlohmann::json& j);

/// Cumulative training-trick presets: none, lr, lr+sup, all. Disabled tricks are zeroed,
/// enabled ones keep the value already in `config` (or the default when it is zero).
void apply_tricks_preset(RunConfig& config, const std::string& preset);

std::string format_double(double v);

}  // namespace tgmatch::config

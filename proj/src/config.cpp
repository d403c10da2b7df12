#include "tgmatch/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "tgmatch/errors.hpp"

namespace fs = std::filesystem;

namespace tgmatch::config {

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::stringstream ss(s);
  while (std::getline(ss, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
std::string join(const T& items, const std::function<std::string(typename T::value_type)>& f) {
  std::string out;
  for (const auto& x : items) {
    if (!out.empty()) out += ",";
    out += f(x);
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
  return out;
}

std::int64_t to_int(const std::string& key, const std::string& v) {
  std::int64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError("'" + key + "' expects an integer, got '" + v + "'");
  return out;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError("'" + key + "' expects a non-negative integer, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  std::string s = v;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "true" || s == "1" || s == "on" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "off" || s == "no") return false;
  throw ConfigError("'" + key + "' expects true/false, got '" + v + "'");
}

std::string bool_str(bool b) { return b ? "true" : "false"; }

using Get = std::function<std::string(const RunConfig&)>;
using Set = std::function<void(RunConfig&, const std::string&)>;

#define TG_DOUBLE(KEY, HELP, FIELD)                                                  \
  ConfigField{KEY, HELP, [](const RunConfig& c) { return format_double(c.FIELD); }, \
              [](RunConfig& c, const std::string& v) { c.FIELD = to_double(KEY, v); }}
#define TG_INT(KEY, HELP, FIELD)                                                     \
  ConfigField{KEY, HELP, [](const RunConfig& c) { return std::to_string(c.FIELD); }, \
              [](RunConfig& c, const std::string& v) { c.FIELD = to_int(KEY, v); }}
#define TG_BOOL(KEY, HELP, FIELD)                                             \
  ConfigField{KEY, HELP, [](const RunConfig& c) { return bool_str(c.FIELD); }, \
              [](RunConfig& c, const std::string& v) { c.FIELD = to_bool(KEY, v); }}
#define TG_PATH(KEY, HELP, FIELD)                                         \
  ConfigField{KEY, HELP, [](const RunConfig& c) { return c.FIELD.string(); }, \
              [](RunConfig& c, const std::string& v) { c.FIELD = v; }}

std::vector<ConfigField> build_fields() {
  std::vector<ConfigField> f{
      ConfigField{"seed", "root seed; every random stream derives from it",
                  [](const RunConfig& c) { return std::to_string(c.train.seed); },
                  [](RunConfig& c, const std::string& v) { c.train.seed = to_uint("seed", v); }},
      TG_PATH("out_dir", "output directory for logs, checkpoints and the config echo", out_dir),
      ConfigField{"ablation", "full | fixmatch-rgb-only | fixmatch-tg-only",
                  [](const RunConfig& c) { return trainer::to_string(c.train.variant); },
                  [](RunConfig& c, const std::string& v) { c.train.variant = trainer::variant_from_string(v); }},

      TG_PATH("data.train_manifest", "training manifest (train.tsv)", train_manifest),
      TG_PATH("data.test_manifest", "test manifest (test.tsv); empty skips evaluation", test_manifest),
      TG_DOUBLE("data.labeled_ratio", "fraction of training videos that keep labels", labeled_ratio),
      TG_INT("data.labeled_per_class", "exact labeled videos per class; 0 uses labeled_ratio",
             labeled_per_class),
      TG_BOOL("data.balanced", "draw the same number of labeled videos from each class", balanced),

      TG_DOUBLE("train.base_lr", "peak learning rate", train.base_lr),
      TG_DOUBLE("train.momentum", "SGD momentum", train.momentum),
      TG_DOUBLE("train.weight_decay", "weight decay (not applied to norm params and biases)",
                train.weight_decay),
      TG_INT("train.epochs", "total epochs (one epoch = one pass over the unlabeled videos)",
             train.total_epochs),
      TG_INT("train.lr_warmup_epochs", "linear learning-rate warm-up epochs", train.lr_warmup_epochs),
      TG_INT("train.supervised_warmup_epochs", "epochs trained on labeled data only",
             train.supervised_warmup_epochs),
      TG_INT("train.precise_bn_batches", "batches for the PreciseBN refresh; 0 disables",
             train.precise_bn_batches),
      TG_INT("train.max_steps", "stop after this many steps; 0 runs the full schedule", train.max_steps),
      TG_INT("train.checkpoint_every", "epochs between checkpoints; 0 = final only",
             train.checkpoint_every),
      TG_INT("train.eval_every", "epochs between test evaluations; 0 = final only", train.eval_every),
      TG_INT("train.labeled_batch", "labeled clips per step", batch.labeled_batch),
      TG_INT("train.unlabeled_batch", "unlabeled clips per step", batch.unlabeled_batch),

      TG_DOUBLE("loss.w_fm", "weight of each modality's FixMatch loss", train.loss_weights.w_fm),
      TG_DOUBLE("loss.w_kd", "weight of the dense alignment loss", train.loss_weights.w_kd),
      TG_DOUBLE("loss.w_clr", "weight of the cross-modal InfoNCE loss", train.loss_weights.w_clr),
      TG_DOUBLE("loss.gamma", "pseudo-label confidence threshold", train.loss_weights.gamma),
      TG_DOUBLE("loss.tau", "InfoNCE temperature", train.loss_weights.tau),
      TG_DOUBLE("loss.lambda_u", "unsupervised loss weight inside FixMatch", train.loss_weights.lambda_u),
      ConfigField{"loss.alignment", "l1 | l2 | cosine",
                  [](const RunConfig& c) { return losses::to_string(c.train.loss_weights.alignment_kind); },
                  [](RunConfig& c, const std::string& v) {
                    c.train.loss_weights.alignment_kind = losses::alignment_kind_from_string(v);
                  }},
      ConfigField{"loss.blocks", "aligned blocks, comma separated subset of 1,2,3,4",
                  [](const RunConfig& c) {
                    return join<std::set<int>>(c.train.loss_weights.aligned_blocks,
                                               [](int b) { return std::to_string(b); });
                  },
                  [](RunConfig& c, const std::string& v) {
                    std::set<int> blocks;
                    for (const auto& s : split(v, ',')) blocks.insert(static_cast<int>(to_int("loss.blocks", s)));
                    c.train.loss_weights.aligned_blocks = blocks;
                  }},
      ConfigField{"loss.pseudo_label_metric", "rgb | tg | self | average",
                  [](const RunConfig& c) { return losses::to_string(c.train.loss_weights.pseudo_label_metric); },
                  [](RunConfig& c, const std::string& v) {
                    c.train.loss_weights.pseudo_label_metric = losses::pseudo_label_metric_from_string(v);
                  }},
      TG_BOOL("loss.stopgrad", "block gradients into the TG side of the alignment loss",
              train.loss_weights.stopgrad),
      TG_BOOL("loss.symmetric_infonce", "average InfoNCE over RGB and TG anchors",
              train.loss_weights.symmetric_infonce),

      TG_INT("clip.frames", "frames per clip", batch.sampling.frames_per_clip),
      TG_INT("clip.stride", "raw frames between clip frames", batch.sampling.frame_stride),
      TG_INT("clip.tg_stride", "TG frame offset n (1 = fast, 7 = slow)", batch.sampling.tg_stride),

      TG_INT("weak.short_side", "short side after the training resize", batch.weak.scale_short_side),
      TG_INT("weak.crop_size", "training crop output size", batch.weak.output_size),
      TG_DOUBLE("weak.min_area", "random-resized-crop minimum area fraction", batch.weak.min_area),
      TG_DOUBLE("weak.max_area", "random-resized-crop maximum area fraction", batch.weak.max_area),
      TG_DOUBLE("weak.flip_prob", "horizontal flip probability", batch.weak.flip_prob),

      TG_INT("strong.num_ops", "ops per strong view", batch.strong.num_ops),
      TG_INT("strong.magnitude", "op magnitude 0..10", batch.strong.magnitude),
      ConfigField{"strong.ops", "comma separated op pool",
                  [](const RunConfig& c) {
                    return join<std::vector<std::string>>(c.batch.strong.op_pool,
                                                          [](std::string s) { return s; });
                  },
                  [](RunConfig& c, const std::string& v) { c.batch.strong.op_pool = split(v, ','); }},

      ConfigField{"model.widths", "channels of the four stages, comma separated",
                  [](const RunConfig& c) {
                    const auto& w = c.backbone.stage_channels;
                    return std::to_string(w[0]) + "," + std::to_string(w[1]) + "," +
                           std::to_string(w[2]) + "," + std::to_string(w[3]);
                  },
                  [](RunConfig& c, const std::string& v) {
                    auto parts = split(v, ',');
                    if (parts.size() != 4) throw ConfigError("'model.widths' needs four values");
                    for (std::size_t i = 0; i < 4; ++i)
                      c.backbone.stage_channels[i] = to_int("model.widths", parts[i]);
                  }},
      TG_INT("model.blocks_per_stage", "residual blocks per stage", backbone.blocks_per_stage),
      TG_DOUBLE("model.dropout", "dropout before the classifier", backbone.dropout_rate),
      TG_INT("model.proj_hidden", "projection head hidden width", backbone.projection_hidden),
      TG_INT("model.proj_dim", "projection output dimension", backbone.projection_dim),

      TG_INT("eval.clips", "clips per test video", eval.clips_per_video),
      TG_INT("eval.crops", "crops per clip", eval.crops_per_clip),
      TG_INT("eval.short_side", "short side after the test resize", eval.short_side),
      TG_INT("eval.crop_size", "test crop size", eval.crop_size),
  };
  return f;
}

#undef TG_DOUBLE
#undef TG_INT
#undef TG_BOOL
#undef TG_PATH

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

RunConfig::RunConfig() {
  batch.sampling = {8, 2, 1, 10};
  batch.weak.scale_short_side = 40;
  batch.weak.output_size = 32;
  batch.weak.min_area = 0.5;
  batch.weak.flip_prob = 0.0;  // headings are class labels; a flip would change them
  eval.short_side = 32;
  eval.crop_size = 32;
  eval.sampling = batch.sampling;
}

data::SplitSpec RunConfig::split_spec() const {
  data::SplitSpec s;
  s.balanced = balanced;
  if (labeled_per_class > 0) s.per_class_count = labeled_per_class;
  else s.labeled_ratio = labeled_ratio;
  return s;
}

void RunConfig::validate(bool check_paths) const {
  train.validate();
  backbone.validate();
  batch.validate();
  auto e = eval;
  e.sampling = batch.sampling;
  e.validate();
  if (labeled_per_class < 0) throw ConfigError("data.labeled_per_class must be >= 0");
  if (labeled_per_class == 0 && !(labeled_ratio > 0.0 && labeled_ratio <= 1.0))
    throw ConfigError("data.labeled_ratio must be in (0, 1]");
  if (check_paths) {
    if (train_manifest.empty()) throw ConfigError("data.train_manifest is required");
    if (!fs::exists(train_manifest))
      throw ConfigError("data.train_manifest '" + train_manifest.string() + "' does not exist");
    if (!test_manifest.empty() && !fs::exists(test_manifest))
      throw ConfigError("data.test_manifest '" + test_manifest.string() + "' does not exist");
  }
}

const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = build_fields();
  return fields;
}

const ConfigField* find_field(const std::string& key) {
  for (const auto& f : config_fields())
    if (f.key == key) return &f;
  return nullptr;
}

void set_field(RunConfig& config, const std::string& key, const std::string& value) {
  const auto* f = find_field(key);
  if (!f) throw ConfigError("unknown config key '" + key + "'");
  f->set(config, value);
  if (key.rfind("clip.", 0) == 0) config.eval.sampling = config.batch.sampling;
}

std::string get_field(const RunConfig& config, const std::string& key) {
  const auto* f = find_field(key);
  if (!f) throw ConfigError("unknown config key '" + key + "'");
  return f->get(config);
}

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

void apply_config_file(RunConfig& config, const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::stringstream buf;
  buf << is.rdbuf();
  for (const auto& [k, v] : parse_config_text(buf.str())) set_field(config, k, v);
}

std::string env_var_name(const std::string& key) {
  std::string out = "TGMATCH_";
  for (unsigned char c : key) out += c == '.' ? '_' : static_cast<char>(std::toupper(c));
  return out;
}

std::vector<std::string> apply_env(RunConfig& config) {
  std::vector<std::string> keys;
  for (const auto& f : config_fields()) {
    if (const char* v = std::getenv(env_var_name(f.key).c_str())) {
      set_field(config, f.key, v);
      keys.push_back(f.key);
    }
  }
  return keys;
}

std::string to_config_text(const RunConfig& config) {
  std::ostringstream os;
  for (const auto& f : config_fields()) os << f.key << " = " << f.get(config) << "\n";
  return os.str();
}

nlohmann::json to_json(const RunConfig& config) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& f : config_fields()) j[f.key] = f.get(config);
  return j;
}

RunConfig from_json(const nlohmann::json& j) {
  RunConfig c;
  for (auto it = j.begin(); it != j.end(); ++it)
    set_field(c, it.key(), it.value().is_string() ? it.value().get<std::string>() : it.value().dump());
  return c;
}

void apply_tricks_preset(RunConfig& config, const std::string& preset) {
  const RunConfig defaults;
  auto keep = [](std::int64_t current, std::int64_t fallback) { return current > 0 ? current : fallback; };
  bool lr = false, sup = false, pbn = false;
  if (preset == "none") {
  } else if (preset == "lr") {
    lr = true;
  } else if (preset == "lr+sup") {
    lr = sup = true;
  } else if (preset == "all") {
    lr = sup = pbn = true;
  } else {
    throw ConfigError("unknown tricks preset '" + preset + "' (expected none, lr, lr+sup or all)");
  }
  auto& t = config.train;
  t.lr_warmup_epochs = lr ? keep(t.lr_warmup_epochs, defaults.train.lr_warmup_epochs) : 0;
  t.supervised_warmup_epochs =
      sup ? keep(t.supervised_warmup_epochs, defaults.train.supervised_warmup_epochs) : 0;
  t.precise_bn_batches = pbn ? keep(t.precise_bn_batches, defaults.train.precise_bn_batches) : 0;
}

}  // namespace tgmatch::config

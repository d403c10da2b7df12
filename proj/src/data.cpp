#include "tgmatch/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "tgmatch/errors.hpp"
#include "tgmatch/video_io.hpp"

namespace fs = std::filesystem;

namespace tgmatch::data {

std::vector<ManifestEntry> DatasetManifest::labeled() const {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries)
    if (labeled_ids.count(e.video_id)) out.push_back(e);
  return out;
}

std::vector<ManifestEntry> DatasetManifest::unlabeled() const {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries)
    if (!labeled_ids.count(e.video_id)) out.push_back(e);
  return out;
}

void DatasetManifest::validate() const {
  if (num_classes < 1) throw ConfigError("manifest must declare num_classes >= 1");
  std::set<std::string> ids;
  for (const auto& e : entries) {
    if (!ids.insert(e.video_id).second) throw IoError("duplicate video id '" + e.video_id + "'");
    if (e.class_id < 0 || e.class_id >= num_classes)
      throw IoError("video '" + e.video_id + "' has class " + std::to_string(e.class_id) +
                    " outside [0, " + std::to_string(num_classes) + ")");
  }
  for (const auto& id : labeled_ids)
    if (!ids.count(id)) throw IoError("labeled id '" + id + "' is not in the manifest");
}

fs::path labeled_sidecar_path(const fs::path& manifest_path) {
  return fs::path(manifest_path.string() + ".labeled");
}

void write_manifest(const fs::path& path, const DatasetManifest& manifest) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write manifest " + path.string());
    os << "# num_classes=" << manifest.num_classes << "\n";
    os << "# seed=" << manifest.seed << "\n";
    for (const auto& e : manifest.entries)
      os << e.video_id << '\t' << e.path << '\t' << e.class_id << '\t' << e.num_frames << '\n';
  }
  std::ofstream side(labeled_sidecar_path(path));
  if (!side) throw IoError("cannot write labeled sidecar for " + path.string());
  for (const auto& e : manifest.entries)
    if (manifest.labeled_ids.count(e.video_id)) side << e.video_id << '\n';
}

DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest " + path.string());
  DatasetManifest m;
  m.root = path.has_parent_path() ? path.parent_path() : fs::path(".");
  std::string line;
  std::int64_t lineno = 0;
  std::int64_t max_class = -1;
  bool declared = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '#') {
      if (line.rfind("# num_classes=", 0) == 0) {
        m.num_classes = std::stoll(line.substr(14));
        declared = true;
      } else if (line.rfind("# seed=", 0) == 0) {
        m.seed = std::stoull(line.substr(7));
      }
      continue;
    }
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, '\t')) cols.push_back(col);
    if (cols.size() != 4)
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected 4 tab-separated columns");
    ManifestEntry e;
    e.video_id = cols[0];
    e.path = cols[1];
    try {
      e.class_id = std::stoll(cols[2]);
      e.num_frames = std::stoll(cols[3]);
    } catch (const std::exception&) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": bad integer column");
    }
    max_class = std::max(max_class, e.class_id);
    m.entries.push_back(std::move(e));
  }
  if (!declared) m.num_classes = max_class + 1;

  std::ifstream side(labeled_sidecar_path(path));
  while (side && std::getline(side, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) m.labeled_ids.insert(line);
  }
  m.validate();
  return m;
}

DatasetManifest make_split(const DatasetManifest& all, const SplitSpec& spec, std::uint64_t seed) {
  if (spec.labeled_ratio.has_value() == spec.per_class_count.has_value())
    throw ConfigError("a split needs exactly one of labeled_ratio or per_class_count");
  if (spec.labeled_ratio && !(*spec.labeled_ratio > 0.0 && *spec.labeled_ratio <= 1.0))
    throw ConfigError("labeled_ratio must be in (0, 1]");
  if (spec.per_class_count && *spec.per_class_count < 1)
    throw ConfigError("per_class_count must be >= 1");
  if (spec.per_class_count && !spec.balanced)
    throw ConfigError("per_class_count implies a balanced split");

  DatasetManifest out = all;
  out.labeled_ids.clear();
  out.seed = seed;
  Rng rng(derive_seed(seed, "split"));

  if (!spec.balanced) {
    std::vector<std::size_t> order(all.entries.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const auto k = static_cast<std::size_t>(
        std::llround(*spec.labeled_ratio * static_cast<double>(all.entries.size())));
    for (std::size_t i = 0; i < std::min(k, order.size()); ++i)
      out.labeled_ids.insert(all.entries[order[i]].video_id);
    return out;
  }

  std::map<std::int64_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < all.entries.size(); ++i) by_class[all.entries[i].class_id].push_back(i);
  for (auto& [cls, idx] : by_class) {
    std::size_t k = 0;
    if (spec.per_class_count) {
      k = static_cast<std::size_t>(*spec.per_class_count);
    } else {
      k = static_cast<std::size_t>(std::max<long long>(
          1, std::llround(*spec.labeled_ratio * static_cast<double>(idx.size()))));
    }
    if (idx.size() < k)
      throw ConfigError("class " + std::to_string(cls) + " has " + std::to_string(idx.size()) +
                        " videos, fewer than the " + std::to_string(k) + " requested");
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t i = 0; i < k; ++i) out.labeled_ids.insert(all.entries[idx[i]].video_id);
  }
  return out;
}

const modalities::Video& VideoStore::get(const ManifestEntry& entry) {
  auto it = cache_.find(entry.video_id);
  if (it != cache_.end()) return it->second;
  auto video = video_io::load_video(root_ / entry.path, entry.video_id);
  if (video.frames.scalar_type() != torch::kUInt8)
    video.frames = video.frames.to(torch::kFloat64);
  return cache_.emplace(entry.video_id, std::move(video)).first->second;
}

void BatchConfig::validate() const {
  if (labeled_batch < 1) throw ConfigError("labeled batch size must be >= 1");
  if (unlabeled_batch < 0) throw ConfigError("unlabeled batch size must be >= 0");
  sampling.validate();
  weak.validate();
  strong.validate();
}

WeakPair make_weak_pair(const modalities::Video& video, const BatchConfig& config,
                        std::uint64_t seed) {
  auto [rgb, tg] = modalities::sample_training_clip(video, config.sampling, derive_seed(seed, {0}));
  WeakPair out;
  out.record = augment::sample_weak_record(rgb.height(), rgb.width(), config.weak,
                                           derive_seed(seed, {1}));
  out.rgb = augment::apply_weak(rgb, out.record);
  out.tg = augment::apply_weak(tg, out.record);
  return out;
}

SemiBatchSampler::SemiBatchSampler(const DatasetManifest& manifest, BatchConfig config,
                                   std::uint64_t seed, std::shared_ptr<VideoStore> store)
    : num_classes_(manifest.num_classes),
      config_(std::move(config)),
      store_(store ? std::move(store) : std::make_shared<VideoStore>(manifest.root)),
      labeled_(manifest.labeled()),
      unlabeled_(manifest.unlabeled()),
      order_rng_(derive_seed(seed, "epoch-order")),
      seed_(seed) {
  config_.validate();
  if (labeled_.empty()) throw ConfigError("the manifest has no labeled videos");
  if (unlabeled_.empty() && config_.unlabeled_batch > 0)
    throw ConfigError("the manifest has no unlabeled videos");
}

std::int64_t SemiBatchSampler::steps_per_epoch() const {
  if (config_.unlabeled_batch > 0 && !unlabeled_.empty()) {
    const auto n = static_cast<std::int64_t>(unlabeled_.size());
    return (n + config_.unlabeled_batch - 1) / config_.unlabeled_batch;
  }
  const auto n = static_cast<std::int64_t>(labeled_.size());
  return (n + config_.labeled_batch - 1) / config_.labeled_batch;
}

const ManifestEntry& SemiBatchSampler::draw(std::vector<std::size_t>& order, std::size_t& cursor,
                                            const std::vector<ManifestEntry>& pool, Rng& rng) {
  if (cursor >= order.size()) {
    order.resize(pool.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    cursor = 0;
  }
  return pool[order[cursor++]];
}

SemiBatch SemiBatchSampler::next_batch(bool with_unlabeled) {
  SemiBatch batch;
  const auto step_seed = derive_seed(seed_, {draws_++});
  batch.one_hot = torch::zeros({config_.labeled_batch, num_classes_}, torch::kFloat32);
  for (std::int64_t i = 0; i < config_.labeled_batch; ++i) {
    const auto& entry = draw(labeled_order_, labeled_cursor_, labeled_, order_rng_);
    labeled_history_.push_back(entry.video_id);
    const auto& video = store_->get(entry);
    auto pair = make_weak_pair(video, config_, derive_seed(step_seed, {0, static_cast<std::uint64_t>(i)}));
    batch.labeled_rgb_weak.push_back(std::move(pair.rgb));
    batch.labeled_tg_weak.push_back(std::move(pair.tg));
    batch.labeled_records.push_back(pair.record);
    batch.labels.push_back(entry.class_id);
    batch.one_hot.index_put_({i, entry.class_id}, 1.0f);
  }
  if (!with_unlabeled) return batch;

  for (std::int64_t j = 0; j < config_.unlabeled_batch; ++j) {
    const auto& entry = draw(unlabeled_order_, unlabeled_cursor_, unlabeled_, order_rng_);
    const auto& video = store_->get(entry);
    const auto sample_seed = derive_seed(step_seed, {1, static_cast<std::uint64_t>(j)});
    auto [rgb, tg] = modalities::sample_training_clip(video, config_.sampling,
                                                      derive_seed(sample_seed, {0}));
    const auto shared = augment::sample_weak_record(rgb.height(), rgb.width(), config_.weak,
                                                    derive_seed(sample_seed, {1}));
    batch.unlabeled_rgb_weak.push_back(augment::apply_weak(rgb, shared));
    batch.unlabeled_tg_weak.push_back(augment::apply_weak(tg, shared));
    batch.unlabeled_records.push_back(shared);

    const auto rgb_rec = augment::sample_weak_record(rgb.height(), rgb.width(), config_.weak,
                                                     derive_seed(sample_seed, {2}));
    const auto tg_rec = augment::sample_weak_record(tg.height(), tg.width(), config_.weak,
                                                    derive_seed(sample_seed, {3}));
    batch.unlabeled_rgb_strong.push_back(augment::apply_strong(
        augment::apply_weak(rgb, rgb_rec), config_.strong, derive_seed(sample_seed, {4})));
    batch.unlabeled_tg_strong.push_back(augment::apply_strong(
        augment::apply_weak(tg, tg_rec), config_.strong, derive_seed(sample_seed, {5})));
    batch.unlabeled_true_labels.push_back(entry.class_id);
  }
  return batch;
}

}  // namespace tgmatch::data

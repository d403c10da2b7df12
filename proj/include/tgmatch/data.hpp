#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "tgmatch/augment.hpp"
#include "tgmatch/modalities.hpp"
#include "tgmatch/rng.hpp"

namespace tgmatch::data {

using augment::AugmentationRecord;
using modalities::VideoClip;

struct ManifestEntry {
  std::string video_id;
  std::string path;  // relative to the manifest's root directory
  std::int64_t class_id = 0;
  std::int64_t num_frames = 0;
  bool operator==(const ManifestEntry&) const = default;
};

/// Video list plus the labeled subset. Text form (one entry per line):
///
///   # num_classes=16
///   video_id<TAB>relpath<TAB>class_id<TAB>num_frames
///
/// and a sidecar "<manifest>.labeled" with one labeled video_id per line.
struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::int64_t num_classes = 0;
  std::set<std::string> labeled_ids;
  std::uint64_t seed = 0;
  std::filesystem::path root;

  std::vector<ManifestEntry> labeled() const;
  std::vector<ManifestEntry> unlabeled() const;
  void validate() const;
};

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
/// Reads a manifest; its root is the manifest's directory. A missing sidecar means no labels.
DatasetManifest read_manifest(const std::filesystem::path& path);
std::filesystem::path labeled_sidecar_path(const std::filesystem::path& manifest_path);

struct SplitSpec {
  std::optional<double> labeled_ratio;        // fraction of videos (per class when balanced)
  std::optional<std::int64_t> per_class_count;  // exact labeled videos per class
  bool balanced = true;
};

/// Draws the labeled subset. Balanced mode picks the same count from every class (ratio mode
/// rounds ratio * class size, at least 1). Deterministic in `seed`.
DatasetManifest make_split(const DatasetManifest& all, const SplitSpec& spec, std::uint64_t seed);

/// Decoded videos keyed by id, loaded lazily from the manifest root and kept in memory as uint8.
class VideoStore {
public:
  explicit VideoStore(std::filesystem::path root) : root_(std::move(root)) {}
  const modalities::Video& get(const ManifestEntry& entry);
  std::size_t size() const { return cache_.size(); }

private:
  std::filesystem::path root_;
  std::map<std::string, modalities::Video> cache_;
};

struct BatchConfig {
  std::int64_t labeled_batch = 5;
  std::int64_t unlabeled_batch = 5;
  modalities::ClipSamplingSpec sampling;
  augment::WeakAugConfig weak;
  augment::StrongAugPolicy strong;
  void validate() const;
};

/// One optimization step's inputs. Every weak pair (RGB, TG) of a sample was produced by the
/// same AugmentationRecord; strong views of the two modalities are drawn independently.
struct SemiBatch {
  std::vector<VideoClip> labeled_rgb_weak;
  std::vector<VideoClip> labeled_tg_weak;
  std::vector<std::int64_t> labels;
  torch::Tensor one_hot;  // [B_l, K] float32
  std::vector<AugmentationRecord> labeled_records;

  std::vector<VideoClip> unlabeled_rgb_weak;
  std::vector<VideoClip> unlabeled_tg_weak;
  std::vector<VideoClip> unlabeled_rgb_strong;
  std::vector<VideoClip> unlabeled_tg_strong;
  std::vector<AugmentationRecord> unlabeled_records;
  /// Ground truth of the unlabeled samples; only used for pseudo-label statistics.
  std::vector<std::int64_t> unlabeled_true_labels;
};

/// Epoch-shuffled sampler. One epoch is one pass over the unlabeled videos; the (smaller)
/// labeled set is reshuffled whenever it is exhausted.
class SemiBatchSampler {
public:
  SemiBatchSampler(const DatasetManifest& manifest, BatchConfig config, std::uint64_t seed,
                   std::shared_ptr<VideoStore> store = nullptr);

  /// Assembles the next batch. `with_unlabeled = false` skips the unlabeled views.
  SemiBatch next_batch(bool with_unlabeled = true);

  /// Labeled ids drawn so far, in order.
  const std::vector<std::string>& labeled_history() const { return labeled_history_; }
  std::int64_t steps_per_epoch() const;
  const BatchConfig& config() const { return config_; }
  VideoStore& store() { return *store_; }

private:
  const ManifestEntry& draw(std::vector<std::size_t>& order, std::size_t& cursor,
                            const std::vector<ManifestEntry>& pool, Rng& rng);

  std::int64_t num_classes_;
  BatchConfig config_;
  std::shared_ptr<VideoStore> store_;
  std::vector<ManifestEntry> labeled_, unlabeled_;
  std::vector<std::size_t> labeled_order_, unlabeled_order_;
  std::size_t labeled_cursor_ = 0, unlabeled_cursor_ = 0;
  Rng order_rng_;
  std::uint64_t seed_;
  std::uint64_t draws_ = 0;
  std::vector<std::string> labeled_history_;
};

/// Builds the weak RGB/TG pair of one sample with one shared record.
struct WeakPair {
  VideoClip rgb;
  VideoClip tg;
  AugmentationRecord record;
};
WeakPair make_weak_pair(const modalities::Video& video, const BatchConfig& config,
                        std::uint64_t seed);

}  // namespace tgmatch::data

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tgmatch/modalities.hpp"

namespace tgmatch::augment {

using modalities::VideoClip;

struct CropBox {
  std::int64_t top = 0;
  std::int64_t left = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;
  bool operator==(const CropBox&) const = default;
};

/// Sampled weak transform: resize short side, crop a box from the resized frame, resize the
/// crop to output_size², optionally flip horizontally. Replaying one record on RGB and TG
/// clips of the same source gives pixelwise-corresponding outputs.
struct AugmentationRecord {
  std::int64_t input_height = 0;  // pre-resize frame shape the record was drawn for
  std::int64_t input_width = 0;
  std::int64_t scale_short_side = 256;
  CropBox crop_box;  // in post-resize coordinates
  bool flip = false;
  std::int64_t output_size = 224;

  /// Frame shape after the short-side resize.
  std::pair<std::int64_t, std::int64_t> resized_shape() const;
  bool operator==(const AugmentationRecord&) const = default;
};

struct WeakAugConfig {
  std::int64_t scale_short_side = 256;
  std::int64_t output_size = 224;
  double min_area = 0.08;  // random-resized-crop area fraction range
  double max_area = 1.0;
  double min_aspect = 3.0 / 4.0;
  double max_aspect = 4.0 / 3.0;
  double flip_prob = 0.5;
  void validate() const;
};

AugmentationRecord sample_weak_record(std::int64_t input_height, std::int64_t input_width,
                                      const WeakAugConfig& config, std::uint64_t seed);

VideoClip apply_weak(const VideoClip& clip, const AugmentationRecord& record);

/// Resizes so the short side equals `short_side` (bilinear, half-pixel centers).
torch::Tensor resize_short_side(const torch::Tensor& frames, std::int64_t short_side);
/// Bilinear resize of [T, H, W, C] frames.
torch::Tensor resize_frames(const torch::Tensor& frames, std::int64_t height, std::int64_t width);

/// Names of the implemented strong-augmentation ops.
const std::vector<std::string>& strong_op_pool();

struct StrongAugPolicy {
  std::vector<std::string> op_pool = strong_op_pool();
  std::int64_t num_ops = 2;
  std::int64_t magnitude = 5;  // 0..10
  void validate() const;
};

/// RandAugment-style: draws num_ops ops uniformly (with replacement) from the pool and applies
/// each clip-wide with one parameter draw per clip; output clamped to [0, 255].
VideoClip apply_strong(const VideoClip& clip, const StrongAugPolicy& policy, std::uint64_t seed);

/// Applies one named op at the given magnitude; `negate` flips the direction of signed ops.
VideoClip apply_strong_op(const VideoClip& clip, const std::string& op, std::int64_t magnitude,
                          bool negate);

enum class Corruption { ContrastNoise, BrightnessNoise, Grayscale };

std::string to_string(Corruption c);
Corruption corruption_from_string(const std::string& s);

/// Test-time corruption of an RGB clip. Contrast and brightness draw one factor per clip
/// uniformly from [0.5, 1.5]; grayscale writes 0.299R + 0.587G + 0.114B into every channel.
VideoClip corrupt(const VideoClip& clip, Corruption kind, std::uint64_t seed);
VideoClip adjust_contrast(const VideoClip& clip, double factor);
VideoClip adjust_brightness(const VideoClip& clip, double factor);

}  // namespace tgmatch::augment

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

namespace tgmatch::modalities {

enum class Modality { RGB, TG };

std::string to_string(Modality m);
Modality modality_from_string(const std::string& s);

struct ValueRange {
  double lo = 0.0;
  double hi = 255.0;
  bool operator==(const ValueRange&) const = default;
};

inline constexpr ValueRange kPixelRange{0.0, 255.0};
inline constexpr ValueRange kRawTgRange{-255.0, 255.0};

/// A T×H×W×C frame stack (float64, channel-last) with its modality and value range.
///
/// RGB clips and normalized TG clips live in [0, 255]; raw TG lives in [-255, 255].
struct VideoClip {
  torch::Tensor frames;  // [T, H, W, C], kFloat64
  Modality modality = Modality::RGB;
  ValueRange value_range = kPixelRange;
  std::string source_id;
  std::int64_t start_frame = 0;

  std::int64_t num_frames() const { return frames.size(0); }
  std::int64_t height() const { return frames.size(1); }
  std::int64_t width() const { return frames.size(2); }
  std::int64_t channels() const { return frames.size(3); }
};

/// Throws ShapeError / Error if the clip violates its structural or range invariants.
void validate(const VideoClip& clip);

/// A decoded video held in memory: [N, H, W, 3] frames with values in [0, 255].
/// Frames are stored as uint8 (decoded pixels) or float64.
struct Video {
  std::string id;
  torch::Tensor frames;

  std::int64_t num_frames() const { return frames.size(0); }
  std::int64_t height() const { return frames.size(1); }
  std::int64_t width() const { return frames.size(2); }
};

struct ClipSamplingSpec {
  std::int64_t frames_per_clip = 8;
  std::int64_t frame_stride = 8;
  std::int64_t tg_stride = 1;  // 1 = fast TG, 7 = slow TG
  std::int64_t clips_per_video_eval = 10;

  /// Raw frames covered by one clip: frames_per_clip * frame_stride.
  std::int64_t span() const { return frames_per_clip * frame_stride; }
  /// Raw frames a clip needs without index clamping: span plus the trailing TG frames.
  std::int64_t required_frames() const { return span() + tg_stride; }
  void validate() const;
};

/// Frame-by-frame TG: out[t] = frames[t] - frames[t + n] for t in [0, T).
/// Input holds T + n frames; output is a raw-range TG clip of T frames.
VideoClip compute_temporal_gradient(const torch::Tensor& rgb_frames, std::int64_t tg_stride);

/// (v + 255) / 2, so zero motion maps to 127.5.
VideoClip normalize_tg(const VideoClip& raw_tg);
/// Inverse of normalize_tg: 2v - 255.
VideoClip denormalize_tg(const VideoClip& tg);

/// Temporal window a clip was drawn from. `rgb_indices[k]` is the raw frame of clip frame k
/// and `tg_partner_indices[k]` the frame subtracted from it. Indices past the end of the
/// video are clamped to the last frame; `looped` reports whether the video was shorter than
/// ClipSamplingSpec::required_frames().
struct ClipWindow {
  std::int64_t start = 0;
  std::vector<std::int64_t> rgb_indices;
  std::vector<std::int64_t> tg_partner_indices;
  bool looped = false;
};

/// Builds the window for a given start index.
ClipWindow make_window(std::int64_t num_video_frames, const ClipSamplingSpec& spec,
                       std::int64_t start);

/// Highest start index a training clip may use: max(0, N - span - tg_stride).
std::int64_t max_training_start(std::int64_t num_video_frames, const ClipSamplingSpec& spec);

/// Gathers the RGB clip and normalized TG clip for a window. TG is differenced on raw frames.
std::pair<VideoClip, VideoClip> extract_clip_pair(const Video& video, const ClipWindow& window);

/// Random-start training clip. Returns (rgb clip, normalized TG clip), frame-for-frame aligned.
std::pair<VideoClip, VideoClip> sample_training_clip(const Video& video,
                                                     const ClipSamplingSpec& spec,
                                                     std::uint64_t seed);

/// Start indices for evaluation: clips_per_video_eval points spaced uniformly over
/// [0, max(0, N - span)], rounded to the nearest frame.
std::vector<std::int64_t> eval_clip_starts(std::int64_t num_video_frames,
                                           const ClipSamplingSpec& spec);

std::vector<std::pair<VideoClip, VideoClip>> sample_eval_clips(const Video& video,
                                                               const ClipSamplingSpec& spec);

}  // namespace tgmatch::modalities

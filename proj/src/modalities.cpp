#include "tgmatch/modalities.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "tgmatch/errors.hpp"
#include "tgmatch/rng.hpp"

namespace tgmatch::modalities {

std::string to_string(Modality m) { return m == Modality::RGB ? "rgb" : "tg"; }

Modality modality_from_string(const std::string& s) {
  if (s == "rgb" || s == "RGB") return Modality::RGB;
  if (s == "tg" || s == "TG") return Modality::TG;
  throw ConfigError("unknown modality '" + s + "' (expected rgb or tg)");
}

void validate(const VideoClip& clip) {
  const auto& f = clip.frames;
  if (!f.defined() || f.dim() != 4)
    throw ShapeError("VideoClip frames must be a 4-d [T, H, W, C] tensor");
  if (f.size(0) < 1 || f.size(1) < 1 || f.size(2) < 1)
    throw ShapeError("VideoClip needs T, H, W >= 1");
  if (f.size(3) != 3) throw ShapeError("VideoClip needs C = 3");
  const double lo = f.min().item<double>();
  const double hi = f.max().item<double>();
  if (lo < clip.value_range.lo || hi > clip.value_range.hi)
    throw Error("VideoClip '" + clip.source_id + "' has values outside its declared range");
}

void ClipSamplingSpec::validate() const {
  if (frames_per_clip < 1) throw ConfigError("frames_per_clip must be >= 1");
  if (frame_stride < 1) throw ConfigError("frame_stride must be >= 1");
  if (tg_stride < 1) throw ConfigError("tg_stride must be >= 1");
  if (clips_per_video_eval < 1) throw ConfigError("clips_per_video_eval must be >= 1");
}

VideoClip compute_temporal_gradient(const torch::Tensor& rgb_frames, std::int64_t tg_stride) {
  if (tg_stride < 1) throw ConfigError("tg_stride must be >= 1");
  if (rgb_frames.dim() != 4 || rgb_frames.size(3) != 3)
    throw ShapeError("expected RGB frames shaped [T + n, H, W, 3]");
  const auto total = rgb_frames.size(0);
  if (total <= tg_stride)
    throw Error("not enough frames for stride " + std::to_string(tg_stride) + ": got " +
                std::to_string(total) + ", need at least " + std::to_string(tg_stride + 1));
  auto frames = rgb_frames.to(torch::kFloat64);
  const auto t = total - tg_stride;
  VideoClip out;
  out.frames = frames.slice(0, 0, t) - frames.slice(0, tg_stride, total);
  out.modality = Modality::TG;
  out.value_range = kRawTgRange;
  return out;
}

VideoClip normalize_tg(const VideoClip& raw_tg) {
  if (raw_tg.modality != Modality::TG) throw ModalityError("normalize_tg expects a TG clip");
  if (raw_tg.value_range != kRawTgRange)
    throw Error("normalize_tg expects a raw-range TG clip");
  VideoClip out = raw_tg;
  out.frames = (raw_tg.frames + 255.0) / 2.0;
  out.value_range = kPixelRange;
  return out;
}

VideoClip denormalize_tg(const VideoClip& tg) {
  if (tg.modality != Modality::TG) throw ModalityError("denormalize_tg expects a TG clip");
  VideoClip out = tg;
  out.frames = tg.frames * 2.0 - 255.0;
  out.value_range = kRawTgRange;
  return out;
}

ClipWindow make_window(std::int64_t num_video_frames, const ClipSamplingSpec& spec,
                       std::int64_t start) {
  spec.validate();
  if (num_video_frames < 1) throw Error("cannot sample a clip from an empty video");
  ClipWindow w;
  w.start = start;
  w.looped = num_video_frames < spec.required_frames();
  const auto last = num_video_frames - 1;
  for (std::int64_t k = 0; k < spec.frames_per_clip; ++k) {
    const auto idx = start + k * spec.frame_stride;
    w.rgb_indices.push_back(std::min(idx, last));
    w.tg_partner_indices.push_back(std::min(idx + spec.tg_stride, last));
  }
  return w;
}

std::int64_t max_training_start(std::int64_t num_video_frames, const ClipSamplingSpec& spec) {
  return std::max<std::int64_t>(0, num_video_frames - spec.required_frames());
}

namespace {

torch::Tensor gather(const torch::Tensor& frames, const std::vector<std::int64_t>& idx) {
  auto index = torch::tensor(idx, torch::kInt64);
  return frames.index_select(0, index).to(torch::kFloat64);
}

}  // namespace

std::pair<VideoClip, VideoClip> extract_clip_pair(const Video& video, const ClipWindow& window) {
  if (!video.frames.defined() || video.frames.size(0) < 1)
    throw Error("cannot sample a clip from an empty video");
  auto current = gather(video.frames, window.rgb_indices);
  auto partner = gather(video.frames, window.tg_partner_indices);

  VideoClip rgb;
  rgb.frames = current;
  rgb.modality = Modality::RGB;
  rgb.value_range = kPixelRange;
  rgb.source_id = video.id;
  rgb.start_frame = window.start;

  VideoClip raw;
  raw.frames = current - partner;
  raw.modality = Modality::TG;
  raw.value_range = kRawTgRange;
  VideoClip tg = normalize_tg(raw);
  tg.source_id = video.id;
  tg.start_frame = window.start;
  return {std::move(rgb), std::move(tg)};
}

std::pair<VideoClip, VideoClip> sample_training_clip(const Video& video,
                                                     const ClipSamplingSpec& spec,
                                                     std::uint64_t seed) {
  if (!video.frames.defined() || video.num_frames() < 1)
    throw Error("cannot sample a clip from an empty video");
  Rng rng(seed);
  std::uniform_int_distribution<std::int64_t> dist(0, max_training_start(video.num_frames(), spec));
  const auto start = dist(rng);
  return extract_clip_pair(video, make_window(video.num_frames(), spec, start));
}

std::vector<std::int64_t> eval_clip_starts(std::int64_t num_video_frames,
                                           const ClipSamplingSpec& spec) {
  spec.validate();
  if (num_video_frames < 1) throw Error("cannot sample a clip from an empty video");
  const auto max_start = std::max<std::int64_t>(0, num_video_frames - spec.span());
  const auto n = spec.clips_per_video_eval;
  std::vector<std::int64_t> starts;
  starts.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    if (n == 1) {
      starts.push_back(max_start / 2);
    } else {
      const double pos = static_cast<double>(max_start) * static_cast<double>(i) /
                         static_cast<double>(n - 1);
      starts.push_back(static_cast<std::int64_t>(std::llround(pos)));
    }
  }
  return starts;
}

std::vector<std::pair<VideoClip, VideoClip>> sample_eval_clips(const Video& video,
                                                               const ClipSamplingSpec& spec) {
  if (!video.frames.defined() || video.num_frames() < 1)
    throw Error("cannot sample a clip from an empty video");
  std::vector<std::pair<VideoClip, VideoClip>> clips;
  for (auto start : eval_clip_starts(video.num_frames(), spec))
    clips.push_back(extract_clip_pair(video, make_window(video.num_frames(), spec, start)));
  return clips;
}

}  // namespace tgmatch::modalities

#include "tgmatch/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "tgmatch/errors.hpp"
#include "tgmatch/rng.hpp"

namespace F = torch::nn::functional;

namespace tgmatch::augment {

using modalities::Modality;

std::pair<std::int64_t, std::int64_t> AugmentationRecord::resized_shape() const {
  const auto h = input_height, w = input_width;
  if (h <= w) {
    const auto rw = static_cast<std::int64_t>(
        std::llround(static_cast<double>(w) * static_cast<double>(scale_short_side) /
                     static_cast<double>(h)));
    return {scale_short_side, rw};
  }
  const auto rh = static_cast<std::int64_t>(std::llround(
      static_cast<double>(h) * static_cast<double>(scale_short_side) / static_cast<double>(w)));
  return {rh, scale_short_side};
}

void WeakAugConfig::validate() const {
  if (scale_short_side < 1 || output_size < 1) throw ConfigError("augment sizes must be >= 1");
  if (!(min_area > 0.0 && min_area <= max_area && max_area <= 1.0))
    throw ConfigError("crop area range must satisfy 0 < min <= max <= 1");
  if (!(min_aspect > 0.0 && min_aspect <= max_aspect))
    throw ConfigError("crop aspect range must satisfy 0 < min <= max");
  if (flip_prob < 0.0 || flip_prob > 1.0) throw ConfigError("flip_prob must be in [0, 1]");
}

AugmentationRecord sample_weak_record(std::int64_t input_height, std::int64_t input_width,
                                      const WeakAugConfig& config, std::uint64_t seed) {
  if (input_height < 1 || input_width < 1) throw ShapeError("input H and W must be >= 1");
  config.validate();
  AugmentationRecord rec;
  rec.input_height = input_height;
  rec.input_width = input_width;
  rec.scale_short_side = config.scale_short_side;
  rec.output_size = config.output_size;
  const auto [rh, rw] = rec.resized_shape();

  Rng rng(seed);
  std::uniform_real_distribution<double> area_dist(config.min_area, config.max_area);
  std::uniform_real_distribution<double> log_aspect(std::log(config.min_aspect),
                                                    std::log(config.max_aspect));
  const double area = static_cast<double>(rh * rw);
  bool found = false;
  for (int attempt = 0; attempt < 10 && !found; ++attempt) {
    const double target = area * area_dist(rng);
    const double aspect = std::exp(log_aspect(rng));
    const auto cw = static_cast<std::int64_t>(std::llround(std::sqrt(target * aspect)));
    const auto ch = static_cast<std::int64_t>(std::llround(std::sqrt(target / aspect)));
    if (cw >= 1 && ch >= 1 && cw <= rw && ch <= rh) {
      std::uniform_int_distribution<std::int64_t> top(0, rh - ch), left(0, rw - cw);
      rec.crop_box = {top(rng), left(rng), ch, cw};
      found = true;
    }
  }
  if (!found) {
    const auto side = std::min(rh, rw);
    rec.crop_box = {(rh - side) / 2, (rw - side) / 2, side, side};
  }
  std::bernoulli_distribution coin(config.flip_prob);
  rec.flip = coin(rng);
  return rec;
}

torch::Tensor resize_frames(const torch::Tensor& frames, std::int64_t height, std::int64_t width) {
  if (frames.size(1) == height && frames.size(2) == width) return frames.clone();
  auto x = frames.permute({0, 3, 1, 2});
  auto y = F::interpolate(x, F::InterpolateFuncOptions()
                                 .size(std::vector<std::int64_t>{height, width})
                                 .mode(torch::kBilinear)
                                 .align_corners(false));
  return y.permute({0, 2, 3, 1}).contiguous();
}

torch::Tensor resize_short_side(const torch::Tensor& frames, std::int64_t short_side) {
  AugmentationRecord shape;
  shape.input_height = frames.size(1);
  shape.input_width = frames.size(2);
  shape.scale_short_side = short_side;
  const auto [h, w] = shape.resized_shape();
  return resize_frames(frames, h, w);
}

VideoClip apply_weak(const VideoClip& clip, const AugmentationRecord& record) {
  if (clip.frames.dim() != 4) throw ShapeError("apply_weak expects [T, H, W, C] frames");
  if (clip.height() != record.input_height || clip.width() != record.input_width)
    throw ShapeError("clip is " + std::to_string(clip.height()) + "x" +
                     std::to_string(clip.width()) + " but the record was drawn for " +
                     std::to_string(record.input_height) + "x" +
                     std::to_string(record.input_width));
  const auto [rh, rw] = record.resized_shape();
  const auto& box = record.crop_box;
  if (box.top < 0 || box.left < 0 || box.height < 1 || box.width < 1 ||
      box.top + box.height > rh || box.left + box.width > rw)
    throw ShapeError("crop box lies outside the resized frame");

  auto resized = resize_frames(clip.frames, rh, rw);
  auto cropped = resized.slice(1, box.top, box.top + box.height)
                     .slice(2, box.left, box.left + box.width);
  auto out = resize_frames(cropped, record.output_size, record.output_size);
  if (record.flip) out = out.flip({2});

  VideoClip result = clip;
  result.frames = out.contiguous();
  return result;
}

const std::vector<std::string>& strong_op_pool() {
  static const std::vector<std::string> pool = {
      "rotate",   "invert",     "translate_x", "translate_y", "contrast",  "brightness",
      "shear_x",  "shear_y",    "posterize",   "solarize",    "sharpness", "autocontrast"};
  return pool;
}

void StrongAugPolicy::validate() const {
  if (num_ops < 0) throw ConfigError("strong augmentation num_ops must be >= 0");
  if (magnitude < 0 || magnitude > 10) throw ConfigError("strong augmentation magnitude must be in [0, 10]");
  if (num_ops > 0 && op_pool.empty()) throw ConfigError("strong augmentation op pool is empty");
  const auto& known = strong_op_pool();
  for (const auto& op : op_pool)
    if (std::find(known.begin(), known.end(), op) == known.end())
      throw ConfigError("unknown strong augmentation op '" + op + "'");
}

namespace {

// Value used for pixels uncovered by a geometric op: black for RGB, zero motion for TG.
double fill_value(const VideoClip& clip) {
  return clip.modality == Modality::TG ? 127.5 : 0.0;
}

// Pixel-space affine map output->input about the frame center, applied to every frame.
torch::Tensor warp(const VideoClip& clip, double a00, double a01, double a10, double a11,
                   double dx, double dy) {
  const auto t = clip.num_frames();
  const double h = static_cast<double>(clip.height());
  const double w = static_cast<double>(clip.width());
  auto theta = torch::tensor({a00, a01 * h / w, -2.0 * dx / w, a10 * w / h, a11, -2.0 * dy / h},
                             torch::kFloat64)
                   .view({1, 2, 3})
                   .expand({t, 2, 3})
                   .contiguous();
  auto x = clip.frames.permute({0, 3, 1, 2}).contiguous();
  auto grid = F::affine_grid(theta, x.sizes(), /*align_corners=*/false);
  const double fill = fill_value(clip);
  auto y = F::grid_sample(x - fill, grid,
                          F::GridSampleFuncOptions()
                              .mode(torch::kBilinear)
                              .padding_mode(torch::kZeros)
                              .align_corners(false)) +
           fill;
  return y.permute({0, 2, 3, 1}).contiguous();
}

// Luminance; pixels that are already neutral keep their exact value.
torch::Tensor gray(const torch::Tensor& frames) {
  auto r = frames.select(3, 0), g = frames.select(3, 1), b = frames.select(3, 2);
  auto lum = r * 0.299 + g * 0.587 + b * 0.114;
  return torch::where(r.eq(g).logical_and(g.eq(b)), r, lum);
}

torch::Tensor smooth(const torch::Tensor& frames) {
  // 3x3 smoothing kernel [[1,1,1],[1,5,1],[1,1,1]] / 13; border pixels are left unchanged.
  auto x = frames.permute({0, 3, 1, 2}).contiguous();
  const auto c = x.size(1);
  auto kernel = torch::ones({3, 3}, torch::kFloat64);
  kernel.index_put_({1, 1}, 5.0);
  kernel = (kernel / 13.0).view({1, 1, 3, 3}).expand({c, 1, 3, 3}).contiguous();
  auto blurred = F::conv2d(x, kernel, F::Conv2dFuncOptions().groups(c));
  auto out = x.clone();
  if (x.size(2) > 2 && x.size(3) > 2)
    out.slice(2, 1, x.size(2) - 1).slice(3, 1, x.size(3) - 1).copy_(blurred);
  return out.permute({0, 2, 3, 1}).contiguous();
}

}  // namespace

VideoClip adjust_contrast(const VideoClip& clip, double factor) {
  VideoClip out = clip;
  const double mean = gray(clip.frames).mean().item<double>();
  out.frames = ((clip.frames - mean) * factor + mean).clamp(clip.value_range.lo, clip.value_range.hi);
  return out;
}

VideoClip adjust_brightness(const VideoClip& clip, double factor) {
  VideoClip out = clip;
  out.frames = (clip.frames * factor).clamp(clip.value_range.lo, clip.value_range.hi);
  return out;
}

VideoClip apply_strong_op(const VideoClip& clip, const std::string& op, std::int64_t magnitude,
                          bool negate) {
  const double level = static_cast<double>(magnitude) / 10.0;
  const double sign = negate ? -1.0 : 1.0;
  VideoClip out = clip;
  auto& f = out.frames;
  const auto& x = clip.frames;
  if (op == "rotate") {
    const double a = sign * level * 30.0 * std::numbers::pi / 180.0;
    f = warp(clip, std::cos(a), -std::sin(a), std::sin(a), std::cos(a), 0.0, 0.0);
  } else if (op == "invert") {
    f = 255.0 - x;
  } else if (op == "translate_x") {
    f = warp(clip, 1, 0, 0, 1, sign * level * 0.3 * static_cast<double>(clip.width()), 0.0);
  } else if (op == "translate_y") {
    f = warp(clip, 1, 0, 0, 1, 0.0, sign * level * 0.3 * static_cast<double>(clip.height()));
  } else if (op == "shear_x") {
    f = warp(clip, 1, sign * level * 0.3, 0, 1, 0.0, 0.0);
  } else if (op == "shear_y") {
    f = warp(clip, 1, 0, sign * level * 0.3, 1, 0.0, 0.0);
  } else if (op == "contrast") {
    return adjust_contrast(clip, 1.0 + sign * level * 0.9);
  } else if (op == "brightness") {
    return adjust_brightness(clip, 1.0 + sign * level * 0.9);
  } else if (op == "sharpness") {
    const double factor = 1.0 + sign * level * 0.9;
    auto blurred = smooth(x);
    f = blurred + (x - blurred) * factor;
  } else if (op == "posterize") {
    const auto bits = 8 - static_cast<std::int64_t>(std::llround(level * 4.0));
    const double step = std::ldexp(1.0, static_cast<int>(8 - bits));
    f = torch::floor(x / step) * step;
  } else if (op == "solarize") {
    const double threshold = 256.0 - level * 256.0;
    f = torch::where(x >= threshold, 255.0 - x, x);
  } else if (op == "autocontrast") {
    auto flat = x.reshape({-1, x.size(3)});
    auto lo = std::get<0>(flat.min(0));
    auto hi = std::get<0>(flat.max(0));
    auto range = hi - lo;
    auto scaled = (x - lo) * (255.0 / range.clamp_min(1e-12));
    f = torch::where(range > 0, scaled, x);
  } else {
    throw ConfigError("unknown strong augmentation op '" + op + "'");
  }
  f = f.clamp(0.0, 255.0).contiguous();
  return out;
}

VideoClip apply_strong(const VideoClip& clip, const StrongAugPolicy& policy, std::uint64_t seed) {
  policy.validate();
  if (clip.value_range != modalities::kPixelRange)
    throw Error("apply_strong expects a clip in the [0, 255] range");
  Rng rng(seed);
  VideoClip out = clip;
  if (policy.num_ops == 0) return out;
  std::uniform_int_distribution<std::size_t> pick(0, policy.op_pool.size() - 1);
  std::bernoulli_distribution coin(0.5);
  for (std::int64_t i = 0; i < policy.num_ops; ++i) {
    const auto& op = policy.op_pool[pick(rng)];
    out = apply_strong_op(out, op, policy.magnitude, coin(rng));
  }
  return out;
}

std::string to_string(Corruption c) {
  switch (c) {
    case Corruption::ContrastNoise: return "contrast_noise";
    case Corruption::BrightnessNoise: return "brightness_noise";
    case Corruption::Grayscale: return "grayscale";
  }
  return "?";
}

Corruption corruption_from_string(const std::string& s) {
  if (s == "contrast_noise") return Corruption::ContrastNoise;
  if (s == "brightness_noise") return Corruption::BrightnessNoise;
  if (s == "grayscale") return Corruption::Grayscale;
  throw ConfigError("unknown corruption '" + s +
                    "' (expected contrast_noise, brightness_noise or grayscale)");
}

VideoClip corrupt(const VideoClip& clip, Corruption kind, std::uint64_t seed) {
  if (clip.modality != Modality::RGB) throw ModalityError("corruptions apply to RGB clips only");
  Rng rng(seed);
  std::uniform_real_distribution<double> factor(0.5, 1.5);
  switch (kind) {
    case Corruption::ContrastNoise: return adjust_contrast(clip, factor(rng));
    case Corruption::BrightnessNoise: return adjust_brightness(clip, factor(rng));
    case Corruption::Grayscale: {
      VideoClip out = clip;
      out.frames = gray(clip.frames).unsqueeze(3).expand({-1, -1, -1, 3}).contiguous();
      return out;
    }
  }
  return clip;
}

}  // namespace tgmatch::augment

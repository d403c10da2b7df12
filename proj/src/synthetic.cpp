#include "tgmatch/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "tgmatch/errors.hpp"
#include "tgmatch/rng.hpp"
#include "tgmatch/video_io.hpp"

namespace fs = std::filesystem;

namespace tgmatch::synthetic {

namespace {

torch::Tensor color_tensor(const std::array<double, 3>& c) {
  return torch::tensor({c[0], c[1], c[2]}, torch::kFloat64);
}

std::array<double, 3> random_color(Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 255.0);
  return {u(rng), u(rng), u(rng)};
}

// Anti-aliased coverage of a disc or square centered at (cx, cy) over the pixel grid.
torch::Tensor coverage_of(const torch::Tensor& xx, const torch::Tensor& yy, double cx, double cy,
                          double radius, bool square) {
  if (square) {
    auto cx_cov = (radius + 0.5 - (xx - cx).abs()).clamp(0.0, 1.0);
    auto cy_cov = (radius + 0.5 - (yy - cy).abs()).clamp(0.0, 1.0);
    return cx_cov * cy_cov;
  }
  auto d = torch::sqrt((xx - cx).pow(2) + (yy - cy).pow(2));
  return (radius + 0.5 - d).clamp(0.0, 1.0);
}

torch::Tensor paint(const torch::Tensor& canvas, const torch::Tensor& coverage,
                    const std::array<double, 3>& color) {
  auto cov = coverage.unsqueeze(2);
  return canvas * (1.0 - cov) + color_tensor(color).view({1, 1, 3}) * cov;
}

// Static textured background: a base color, a few soft color blobs and distractor shapes.
torch::Tensor render_background(const SyntheticSpec& spec, const Appearance& app,
                                const torch::Tensor& xx, const torch::Tensor& yy) {
  Rng rng(app.background_seed);
  const double h = static_cast<double>(spec.height), w = static_cast<double>(spec.width);
  const auto base = random_color(rng);
  auto canvas = color_tensor(app.background_color.value_or(base)).view({1, 1, 3}).expand({spec.height, spec.width, 3}).clone();
  std::uniform_real_distribution<double> ux(0.0, w), uy(0.0, h), sigma(3.0, 9.0), alpha(0.4, 0.9);
  for (std::int64_t b = 0; b < spec.background_blobs; ++b) {
    const double cx = ux(rng), cy = uy(rng), s = sigma(rng);
    auto blob = torch::exp(-((xx - cx).pow(2) + (yy - cy).pow(2)) / (2 * s * s)) * alpha(rng);
    canvas = paint(canvas, blob, random_color(rng));
  }
  std::uniform_real_distribution<double> radius(3.0, 6.0);
  std::bernoulli_distribution coin(0.5);
  for (std::int64_t d = 0; d < spec.distractors; ++d) {
    const double cx = ux(rng), cy = uy(rng);
    canvas = paint(canvas, coverage_of(xx, yy, cx, cy, radius(rng), coin(rng)), random_color(rng));
  }
  return canvas;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (height < 32 || width < 32) throw ConfigError("synthetic frames must be at least 32x32");
  if (num_frames < 16) throw ConfigError("synthetic videos need at least 16 frames");
  if (!(num_classes == 16 || (num_classes >= 1 && num_classes <= 8)))
    throw ConfigError("synthetic datasets support 1-8 heading classes or 16 (8 headings x 2 speeds)");
  if (videos_per_class < 1 || test_videos_per_class < 0)
    throw ConfigError("video counts must be positive");
  if (!(slow_speed > 0.0 && fast_speed > slow_speed))
    throw ConfigError("speeds must satisfy 0 < slow < fast");
  if (distractors < 0 || background_blobs < 0 || noise_std < 0.0)
    throw ConfigError("distractors, blobs and noise must be >= 0");
  if (scene_bias < 0.0 || scene_bias > 1.0) throw ConfigError("scene_bias must be in [0, 1]");
  if (!(min_radius >= 1.0 && max_radius >= min_radius))
    throw ConfigError("shape radius range must satisfy 1 <= min <= max");
  // The fastest trajectory plus the largest shape must fit along the short side.
  const double travel = fast_speed * static_cast<double>(num_frames - 1);
  if (travel + 2 * (max_radius + 1) > static_cast<double>(std::min(height, width)))
    throw ConfigError("unsatisfiable geometry: a fast shape travels " + std::to_string(travel) +
                      " px, which does not fit in a " + std::to_string(height) + "x" +
                      std::to_string(width) + " frame");
}

Motion motion_of_class(std::int64_t class_id, const SyntheticSpec& spec) {
  if (class_id < 0 || class_id >= spec.num_classes) throw ConfigError("class id out of range");
  if (spec.num_classes == 16)
    return {static_cast<double>(class_id % 8) * 45.0, class_id < 8 ? spec.slow_speed : spec.fast_speed};
  return {static_cast<double>(class_id) * 360.0 / static_cast<double>(spec.num_classes),
          spec.fast_speed};
}

std::array<double, 3> class_color(std::int64_t class_id, const SyntheticSpec& spec) {
  if (class_id < 0 || class_id >= spec.num_classes) throw ConfigError("class id out of range");
  const double hue = 2.0 * std::numbers::pi * static_cast<double>(class_id) /
                     static_cast<double>(spec.num_classes);
  std::array<double, 3> c;
  for (int k = 0; k < 3; ++k)
    c[static_cast<std::size_t>(k)] = 0.5 + 0.5 * std::cos(hue - 2.0 * std::numbers::pi * k / 3.0);
  const double luma = 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2];
  // Scale to luminance 80; the largest channel stays below 255 for every hue.
  for (auto& v : c) v *= 80.0 / luma;
  return c;
}

Appearance sample_appearance(const SyntheticSpec& spec, std::uint64_t seed, std::int64_t class_id) {
  Rng rng(seed);
  Appearance a;
  a.shape_color = random_color(rng);
  std::bernoulli_distribution coin(0.5);
  a.square = coin(rng);
  std::uniform_real_distribution<double> radius(spec.min_radius, spec.max_radius);
  a.radius = radius(rng);
  a.background_seed = rng();
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (class_id >= 0 && u(rng) < spec.scene_bias) a.background_color = class_color(class_id, spec);
  return a;
}

RenderedVideo render_video(const SyntheticSpec& spec, const Motion& motion,
                           const Appearance& appearance, std::uint64_t placement_seed) {
  spec.validate();
  const auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  auto yy = torch::arange(spec.height, opts).view({spec.height, 1}).expand({spec.height, spec.width});
  auto xx = torch::arange(spec.width, opts).view({1, spec.width}).expand({spec.height, spec.width});
  auto background = render_background(spec, appearance, xx, yy);

  const double theta = motion.heading_deg * std::numbers::pi / 180.0;
  const double vx = motion.speed * std::cos(theta);
  const double vy = -motion.speed * std::sin(theta);  // image rows grow downward
  const double steps = static_cast<double>(spec.num_frames - 1);
  const double dx = vx * steps, dy = vy * steps;
  const double margin = appearance.radius + 1.0;
  const double x_lo = margin - std::min(0.0, dx);
  const double x_hi = static_cast<double>(spec.width - 1) - margin - std::max(0.0, dx);
  const double y_lo = margin - std::min(0.0, dy);
  const double y_hi = static_cast<double>(spec.height - 1) - margin - std::max(0.0, dy);
  if (x_lo > x_hi || y_lo > y_hi) throw ConfigError("unsatisfiable geometry for this motion");

  Rng rng(placement_seed);
  std::uniform_real_distribution<double> px(x_lo, x_hi), py(y_lo, y_hi);
  const double x0 = px(rng), y0 = py(rng);
  std::normal_distribution<double> noise(0.0, spec.noise_std);

  RenderedVideo out;
  std::vector<torch::Tensor> frames, coverage;
  for (std::int64_t t = 0; t < spec.num_frames; ++t) {
    const double cx = x0 + vx * static_cast<double>(t);
    const double cy = y0 + vy * static_cast<double>(t);
    auto cov = coverage_of(xx, yy, cx, cy, appearance.radius, appearance.square);
    auto frame = paint(background, cov, appearance.shape_color);
    if (spec.noise_std > 0.0) {
      auto n = torch::empty_like(frame);
      auto acc = n.accessor<double, 3>();
      for (std::int64_t i = 0; i < n.size(0); ++i)
        for (std::int64_t j = 0; j < n.size(1); ++j)
          for (std::int64_t c = 0; c < 3; ++c) acc[i][j][c] = noise(rng);
      frame = frame + n;
    }
    frames.push_back(frame.clamp(0.0, 255.0));
    coverage.push_back(cov);
  }
  out.frames = torch::stack(frames);
  out.coverage = torch::stack(coverage);
  return out;
}

GeneratedDataset generate_synthetic_dataset(const SyntheticSpec& spec, const fs::path& out_dir) {
  spec.validate();
  fs::create_directories(out_dir / "videos");
  GeneratedDataset out;
  out.train.num_classes = out.test.num_classes = spec.num_classes;
  out.train.seed = out.test.seed = spec.seed;
  out.train.root = out.test.root = out_dir;

  auto emit = [&](data::DatasetManifest& manifest, std::uint64_t split, const char* prefix,
                  std::int64_t per_class) {
    for (std::int64_t c = 0; c < spec.num_classes; ++c) {
      const auto motion = motion_of_class(c, spec);
      for (std::int64_t i = 0; i < per_class; ++i) {
        const auto seed = derive_seed(spec.seed, {split, static_cast<std::uint64_t>(c),
                                                  static_cast<std::uint64_t>(i)});
        auto video = render_video(spec, motion, sample_appearance(spec, derive_seed(seed, {0}), c),
                                  derive_seed(seed, {1}));
        char id[64];
        std::snprintf(id, sizeof id, "%sc%02lld_v%04lld", prefix, static_cast<long long>(c),
                      static_cast<long long>(i));
        const auto rel = fs::path("videos") / (std::string(id) + ".tgv");
        video_io::write_packed(out_dir / rel, video.frames, video_io::DType::UInt8);
        manifest.entries.push_back({id, rel.generic_string(), c, spec.num_frames});
      }
    }
  };
  emit(out.train, 0, "", spec.videos_per_class);
  emit(out.test, 1, "test_", spec.test_videos_per_class);

  out.train_manifest = out_dir / "train.tsv";
  out.test_manifest = out_dir / "test.tsv";
  data::write_manifest(out.train_manifest, out.train);
  data::write_manifest(out.test_manifest, out.test);
  return out;
}

}  // namespace tgmatch::synthetic

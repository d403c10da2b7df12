#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>

#include <torch/torch.h>

#include "tgmatch/data.hpp"

namespace tgmatch::synthetic {

/// Moving-shapes videos whose class is a pure function of motion (heading, speed). Color,
/// shape type, the textured static background and static distractor shapes are randomized
/// nuisances.
struct SyntheticSpec {
  std::int64_t num_classes = 16;  // 16 = 8 headings x {slow, fast}; 1..8 = headings only
  std::int64_t videos_per_class = 30;
  std::int64_t test_videos_per_class = 10;
  std::int64_t height = 40;
  std::int64_t width = 48;
  std::int64_t num_frames = 20;
  double slow_speed = 0.6;  // pixels per frame
  double fast_speed = 1.2;
  std::int64_t distractors = 2;
  std::int64_t background_blobs = 4;
  double min_radius = 4.0;  // moving shape size range
  double max_radius = 6.0;
  double noise_std = 0.0;
  /// Probability that a video's background base color is its class's prototype color
  /// (a scene-appearance shortcut correlated with the label); 0 keeps color a pure nuisance.
  double scene_bias = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Motion {
  double heading_deg = 0.0;  // 0 = +x (right), 90 = up
  double speed = 1.0;        // pixels per frame
};

Motion motion_of_class(std::int64_t class_id, const SyntheticSpec& spec);

struct Appearance {
  std::array<double, 3> shape_color{255, 0, 0};
  bool square = false;
  double radius = 5.0;
  std::uint64_t background_seed = 0;
  std::optional<std::array<double, 3>> background_color;  // unset: drawn from background_seed
};

/// Prototype color of a class: hues evenly spaced around the color wheel, all with the same
/// luminance (0.299R + 0.587G + 0.114B = 80), so grayscale removes the cue.
std::array<double, 3> class_color(std::int64_t class_id, const SyntheticSpec& spec);

/// Random appearance; with probability spec.scene_bias the background takes class_color().
Appearance sample_appearance(const SyntheticSpec& spec, std::uint64_t seed,
                             std::int64_t class_id = -1);

struct RenderedVideo {
  torch::Tensor frames;    // [T, H, W, 3] float64 in [0, 255]
  torch::Tensor coverage;  // [T, H, W] float64 in [0, 1], the moving shape's coverage
};

/// Renders one video; `placement_seed` picks the start position along a feasible trajectory.
RenderedVideo render_video(const SyntheticSpec& spec, const Motion& motion,
                           const Appearance& appearance, std::uint64_t placement_seed);

struct GeneratedDataset {
  std::filesystem::path train_manifest;
  std::filesystem::path test_manifest;
  data::DatasetManifest train;
  data::DatasetManifest test;
};

/// Writes videos/<id>.tgv (packed uint8) plus train.tsv and test.tsv under `out_dir`.
GeneratedDataset generate_synthetic_dataset(const SyntheticSpec& spec,
                                            const std::filesystem::path& out_dir);

}  // namespace tgmatch::synthetic

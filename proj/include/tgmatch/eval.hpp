#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "tgmatch/augment.hpp"
#include "tgmatch/data.hpp"
#include "tgmatch/model.hpp"

namespace tgmatch::eval {

struct EvalSpec {
  std::int64_t clips_per_video = 10;
  std::int64_t crops_per_clip = 3;
  std::int64_t short_side = 32;  // frames are resized so the short side is this long
  std::int64_t crop_size = 32;
  std::optional<augment::Corruption> corruption;
  std::uint64_t corruption_seed = 0;
  modalities::ClipSamplingSpec sampling;

  void validate() const;
};

/// Crop boxes along the longer axis of a resized frame, evenly spaced from one end to the other
/// (left/center/right for landscape, top/center/bottom for portrait).
std::vector<augment::CropBox> eval_crop_boxes(std::int64_t resized_height,
                                              std::int64_t resized_width, std::int64_t crop_size,
                                              std::int64_t count);

/// All clip x crop views of one video for the given modality, as network input
/// [clips * crops, 3, T, crop, crop]. Corruptions hit raw RGB frames before TG is computed.
torch::Tensor video_views(const modalities::Video& video, modalities::Modality modality,
                          const EvalSpec& spec);

struct VideoPrediction {
  std::string video_id;
  std::int64_t label = 0;
  torch::Tensor probabilities;  // [K], averaged over views
  std::int64_t predicted = 0;
};

struct EvalResult {
  double top1 = 0.0;  // fractions in [0, 1]
  double top5 = 0.0;
  std::int64_t num_videos = 0;
  std::vector<VideoPrediction> predictions;
};

/// Averages view probabilities (checked to be simplex rows) and returns the mean.
torch::Tensor average_view_probabilities(const torch::Tensor& view_probs);

/// Top-1/Top-5 of per-video averaged probabilities. Runs the model in eval mode and restores
/// its previous mode. Deterministic.
EvalResult evaluate(model::VideoNet& net, const std::vector<data::ManifestEntry>& split,
                    data::VideoStore& store, const EvalSpec& spec);

/// Accuracy from precomputed per-video probabilities [N, K] and labels.
EvalResult score(const torch::Tensor& probs, const std::vector<std::int64_t>& labels);

struct RobustnessRow {
  std::string condition;  // "clean" or a corruption name
  double top1 = 0.0;
  double drop = 0.0;  // clean top1 - this top1
};

std::vector<RobustnessRow> robustness_suite(model::VideoNet& net,
                                            const std::vector<data::ManifestEntry>& split,
                                            data::VideoStore& store, const EvalSpec& spec,
                                            const std::vector<augment::Corruption>& kinds);

struct GapResult {
  double train_acc = 0.0;
  double test_acc = 0.0;
  double gap = 0.0;  // train - test
};

GapResult train_test_gap(model::VideoNet& net, const std::vector<data::ManifestEntry>& train,
                         const std::vector<data::ManifestEntry>& test, data::VideoStore& store,
                         const EvalSpec& spec);

std::string format_robustness_table(const std::vector<RobustnessRow>& rows);

}  // namespace tgmatch::eval

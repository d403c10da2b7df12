#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "tgmatch/modalities.hpp"

namespace tgmatch::model {

using modalities::Modality;
using modalities::VideoClip;

struct BackboneConfig {
  std::array<std::int64_t, 4> stage_channels{8, 16, 32, 64};
  std::int64_t blocks_per_stage = 2;
  std::int64_t input_channels = 3;
  std::int64_t num_classes = 16;
  double dropout_rate = 0.5;
  std::array<bool, 4> temporal_downsample{false, true, true, true};
  std::int64_t projection_hidden = 64;
  std::int64_t projection_dim = 32;

  /// 3D ResNet-18 widths (64, 128, 256, 512).
  static BackboneConfig full_width(std::int64_t num_classes);
  void validate() const;
  bool operator==(const BackboneConfig&) const = default;
};

/// Per-stage feature maps, each [B, C_i, T_i, H_i, W_i].
struct BlockFeatureSet {
  std::vector<torch::Tensor> features;
  Modality modality = Modality::RGB;

  /// Copy whose tensors carry no autograd history (the teacher side of alignment).
  BlockFeatureSet detached() const;
};

struct ModelOutputs {
  torch::Tensor logits;         // [B, K]
  torch::Tensor probabilities;  // [B, K], rows sum to 1
  torch::Tensor projection;     // [B, d], unit rows
  BlockFeatureSet block_features;
};

class BasicBlock3dImpl : public torch::nn::Module {
public:
  BasicBlock3dImpl(std::int64_t in_channels, std::int64_t out_channels,
                   std::array<std::int64_t, 3> stride);
  torch::Tensor forward(const torch::Tensor& x);

private:
  torch::nn::Conv3d conv1_{nullptr}, conv2_{nullptr};
  torch::nn::BatchNorm3d bn1_{nullptr}, bn2_{nullptr};
  torch::nn::Sequential shortcut_{nullptr};
};
TORCH_MODULE(BasicBlock3d);

/// 3-layer MLP (Linear-BN-ReLU, Linear-BN-ReLU, Linear) followed by l2 normalization.
class ProjectionHeadImpl : public torch::nn::Module {
public:
  ProjectionHeadImpl(std::int64_t in_features, std::int64_t hidden, std::int64_t out_features);
  torch::Tensor forward(const torch::Tensor& pooled);

private:
  torch::nn::Linear fc1_{nullptr}, fc2_{nullptr}, fc3_{nullptr};
  torch::nn::BatchNorm1d bn1_{nullptr}, bn2_{nullptr};
};
TORCH_MODULE(ProjectionHead);

/// 3D ResNet: conv1 (3x7x7, stride 1x2x2) + 1x3x3 max-pool (stride 1x2x2), four residual
/// stages whose outputs are tapped, and two heads on the globally pooled last stage:
/// classifier (dropout + linear) and contrastive projection.
class VideoNetImpl : public torch::nn::Module {
public:
  VideoNetImpl(BackboneConfig config, Modality modality);

  /// x: [B, 3, T, H, W], standardized.
  ModelOutputs forward(const torch::Tensor& x);
  /// Projection head on pooled last-stage features [B, C_4].
  torch::Tensor project(const torch::Tensor& pooled);

  const BackboneConfig& config() const { return config_; }
  Modality modality() const { return modality_; }

private:
  BackboneConfig config_;
  Modality modality_;
  torch::nn::Conv3d stem_conv_{nullptr};
  torch::nn::BatchNorm3d stem_bn_{nullptr};
  torch::nn::MaxPool3d stem_pool_{nullptr};
  std::array<torch::nn::Sequential, 4> stages_{nullptr, nullptr, nullptr, nullptr};
  torch::nn::Dropout dropout_{nullptr};
  torch::nn::Linear classifier_{nullptr};
  ProjectionHead projection_{nullptr};
};
TORCH_MODULE(VideoNet);

/// Clips -> network input: [B, 3, T, H, W] float32, standardized with mean 127.5 / std 127.5
/// per channel (maps [0, 255] to [-1, 1]).
torch::Tensor to_network_input(const std::vector<VideoClip>& clips);
torch::Tensor to_network_input(const VideoClip& clip);

/// One forward pass on a clip batch. Throws ShapeError when the input does not fit the config.
ModelOutputs forward(VideoNet& net, const torch::Tensor& input);

/// Expected per-stage feature shapes [C, T, H, W] for an input [3, T, H, W].
std::vector<std::array<std::int64_t, 4>> expected_block_shapes(const BackboneConfig& config,
                                                               std::int64_t t, std::int64_t h,
                                                               std::int64_t w);

/// Number of batch-normalization layers (1d and 3d) inside a module.
std::size_t count_batchnorm_layers(torch::nn::Module& m);

/// Replaces the running mean/variance of every normalization layer with the average of true
/// batch statistics over `num_batches` forward passes. Parameters are left untouched. The
/// stream returns nullopt when exhausted; an empty stream is an error.
void precise_bn_recompute(torch::nn::Module& net,
                          const std::function<torch::Tensor(const torch::Tensor&)>& forward_fn,
                          const std::function<std::optional<torch::Tensor>()>& next_batch,
                          std::int64_t num_batches);
void precise_bn_recompute(VideoNet& net, const std::vector<torch::Tensor>& batches);

}  // namespace tgmatch::model

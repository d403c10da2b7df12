#include "tgmatch/model.hpp"

#include <algorithm>
#include <sstream>

#include "tgmatch/errors.hpp"

namespace nn = torch::nn;
namespace F = torch::nn::functional;

namespace tgmatch::model {

BackboneConfig BackboneConfig::full_width(std::int64_t num_classes) {
  BackboneConfig c;
  c.stage_channels = {64, 128, 256, 512};
  c.num_classes = num_classes;
  c.projection_hidden = 512;
  c.projection_dim = 128;
  return c;
}

void BackboneConfig::validate() const {
  for (std::size_t i = 0; i < stage_channels.size(); ++i) {
    if (stage_channels[i] < 1) throw ConfigError("stage channels must be >= 1");
    if (i > 0 && stage_channels[i] < stage_channels[i - 1])
      throw ConfigError("stage channels must be non-decreasing");
  }
  if (blocks_per_stage < 1) throw ConfigError("blocks_per_stage must be >= 1");
  if (input_channels != 3) throw ConfigError("input_channels must be 3");
  if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw ConfigError("dropout_rate must be in [0, 1)");
  if (projection_hidden < 1 || projection_dim < 1)
    throw ConfigError("projection sizes must be >= 1");
}

BlockFeatureSet BlockFeatureSet::detached() const {
  BlockFeatureSet out;
  out.modality = modality;
  for (const auto& f : features) out.features.push_back(f.detach());
  return out;
}

BasicBlock3dImpl::BasicBlock3dImpl(std::int64_t in_channels, std::int64_t out_channels,
                                   std::array<std::int64_t, 3> stride) {
  const std::vector<std::int64_t> s(stride.begin(), stride.end());
  conv1_ = register_module(
      "conv1", nn::Conv3d(nn::Conv3dOptions(in_channels, out_channels, 3).stride(s).padding(1).bias(false)));
  bn1_ = register_module("bn1", nn::BatchNorm3d(out_channels));
  conv2_ = register_module(
      "conv2", nn::Conv3d(nn::Conv3dOptions(out_channels, out_channels, 3).padding(1).bias(false)));
  bn2_ = register_module("bn2", nn::BatchNorm3d(out_channels));
  const bool strided = std::any_of(stride.begin(), stride.end(), [](auto v) { return v != 1; });
  if (strided || in_channels != out_channels) {
    shortcut_ = register_module(
        "shortcut",
        nn::Sequential(nn::Conv3d(nn::Conv3dOptions(in_channels, out_channels, 1).stride(s).bias(false)),
                       nn::BatchNorm3d(out_channels)));
  }
}

torch::Tensor BasicBlock3dImpl::forward(const torch::Tensor& x) {
  auto out = torch::relu(bn1_(conv1_(x)));
  out = bn2_(conv2_(out));
  auto identity = shortcut_ ? shortcut_->forward(x) : x;
  return torch::relu(out + identity);
}

ProjectionHeadImpl::ProjectionHeadImpl(std::int64_t in_features, std::int64_t hidden,
                                       std::int64_t out_features) {
  fc1_ = register_module("fc1", nn::Linear(in_features, hidden));
  bn1_ = register_module("bn1", nn::BatchNorm1d(hidden));
  fc2_ = register_module("fc2", nn::Linear(hidden, hidden));
  bn2_ = register_module("bn2", nn::BatchNorm1d(hidden));
  fc3_ = register_module("fc3", nn::Linear(hidden, out_features));
}

torch::Tensor ProjectionHeadImpl::forward(const torch::Tensor& pooled) {
  auto h = torch::relu(bn1_(fc1_(pooled)));
  h = torch::relu(bn2_(fc2_(h)));
  return F::normalize(fc3_(h), F::NormalizeFuncOptions().p(2).dim(1).eps(1e-12));
}

VideoNetImpl::VideoNetImpl(BackboneConfig config, Modality modality)
    : config_(std::move(config)), modality_(modality) {
  config_.validate();
  const auto& ch = config_.stage_channels;
  stem_conv_ = register_module(
      "stem_conv", nn::Conv3d(nn::Conv3dOptions(config_.input_channels, ch[0], {3, 7, 7})
                                  .stride({1, 2, 2})
                                  .padding({1, 3, 3})
                                  .bias(false)));
  stem_bn_ = register_module("stem_bn", nn::BatchNorm3d(ch[0]));
  stem_pool_ = register_module(
      "stem_pool", nn::MaxPool3d(nn::MaxPool3dOptions({1, 3, 3}).stride({1, 2, 2}).padding({0, 1, 1})));

  std::int64_t in = ch[0];
  for (std::size_t s = 0; s < 4; ++s) {
    nn::Sequential stage;
    for (std::int64_t b = 0; b < config_.blocks_per_stage; ++b) {
      std::array<std::int64_t, 3> stride{1, 1, 1};
      if (b == 0 && s > 0) stride = {config_.temporal_downsample[s] ? 2 : 1, 2, 2};
      else if (b == 0 && config_.temporal_downsample[s]) stride = {2, 1, 1};
      stage->push_back(BasicBlock3d(in, ch[s], stride));
      in = ch[s];
    }
    stages_[s] = register_module("stage" + std::to_string(s + 1), stage);
  }
  dropout_ = register_module("dropout", nn::Dropout(config_.dropout_rate));
  classifier_ = register_module("classifier", nn::Linear(ch[3], config_.num_classes));
  projection_ = register_module(
      "projection", ProjectionHead(ch[3], config_.projection_hidden, config_.projection_dim));

  for (auto& m : modules(/*include_self=*/false)) {
    if (auto* conv = m->as<nn::Conv3d>()) {
      torch::nn::init::kaiming_normal_(conv->weight, 0.0, torch::kFanOut, torch::kReLU);
    } else if (auto* bn = m->as<nn::BatchNorm3d>()) {
      torch::nn::init::ones_(bn->weight);
      torch::nn::init::zeros_(bn->bias);
    }
  }
  // Residual branches start as identity maps.
  for (auto& p : named_parameters())
    if (p.key().starts_with("stage") && p.key().ends_with("bn2.weight"))
      torch::nn::init::zeros_(p.value());
}

ModelOutputs VideoNetImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 5 || x.size(1) != config_.input_channels) {
    std::ostringstream msg;
    msg << "network input must be [B, " << config_.input_channels << ", T, H, W], got "
        << x.sizes();
    throw ShapeError(msg.str());
  }
  ModelOutputs out;
  out.block_features.modality = modality_;
  auto h = stem_pool_(torch::relu(stem_bn_(stem_conv_(x))));
  for (auto& stage : stages_) {
    h = stage->forward(h);
    out.block_features.features.push_back(h);
  }
  auto pooled = F::adaptive_avg_pool3d(h, F::AdaptiveAvgPool3dFuncOptions(1)).flatten(1);
  out.logits = classifier_(dropout_(pooled));
  out.probabilities = torch::softmax(out.logits, 1);
  out.projection = projection_(pooled);
  return out;
}

torch::Tensor VideoNetImpl::project(const torch::Tensor& pooled) { return projection_(pooled); }

torch::Tensor to_network_input(const std::vector<VideoClip>& clips) {
  if (clips.empty()) throw ShapeError("cannot build a network input from zero clips");
  std::vector<torch::Tensor> frames;
  frames.reserve(clips.size());
  for (const auto& c : clips) {
    if (c.frames.sizes() != clips.front().frames.sizes())
      throw ShapeError("clips in one batch must share a shape");
    frames.push_back(c.frames);
  }
  auto x = torch::stack(frames).permute({0, 4, 1, 2, 3});
  return ((x - 127.5) / 127.5).to(torch::kFloat32).contiguous();
}

torch::Tensor to_network_input(const VideoClip& clip) {
  return to_network_input(std::vector<VideoClip>{clip});
}

ModelOutputs forward(VideoNet& net, const torch::Tensor& input) { return net->forward(input); }

std::vector<std::array<std::int64_t, 4>> expected_block_shapes(const BackboneConfig& config,
                                                               std::int64_t t, std::int64_t h,
                                                               std::int64_t w) {
  auto down = [](std::int64_t v, std::int64_t stride) { return (v - 1) / stride + 1; };
  h = down(down(h, 2), 2);  // conv1 stride 2, then pool stride 2
  w = down(down(w, 2), 2);
  std::vector<std::array<std::int64_t, 4>> shapes;
  for (std::size_t s = 0; s < 4; ++s) {
    if (s > 0) {
      h = down(h, 2);
      w = down(w, 2);
    }
    if (config.temporal_downsample[s]) t = down(t, 2);
    shapes.push_back({config.stage_channels[s], t, h, w});
  }
  return shapes;
}

namespace {

struct NormRef {
  torch::Tensor running_mean;
  torch::Tensor running_var;
  std::optional<double>* momentum;
};

std::vector<NormRef> norm_layers(nn::Module& m) {
  std::vector<NormRef> refs;
  for (auto& sub : m.modules(/*include_self=*/true)) {
    if (auto* bn3 = sub->as<nn::BatchNorm3d>())
      refs.push_back({bn3->running_mean, bn3->running_var, &bn3->options.momentum()});
    else if (auto* bn1 = sub->as<nn::BatchNorm1d>())
      refs.push_back({bn1->running_mean, bn1->running_var, &bn1->options.momentum()});
  }
  return refs;
}

}  // namespace

std::size_t count_batchnorm_layers(nn::Module& m) { return norm_layers(m).size(); }

void precise_bn_recompute(nn::Module& net,
                          const std::function<torch::Tensor(const torch::Tensor&)>& forward_fn,
                          const std::function<std::optional<torch::Tensor>()>& next_batch,
                          std::int64_t num_batches) {
  if (num_batches < 1) throw ConfigError("precise BN needs num_batches >= 1");
  auto layers = norm_layers(net);
  const bool was_training = net.is_training();
  std::vector<std::optional<double>> saved_momentum;
  std::vector<torch::Tensor> mean_sum, var_sum;
  for (auto& l : layers) {
    saved_momentum.push_back(*l.momentum);
    // Momentum 1 makes the running buffers equal the statistics of the latest batch.
    *l.momentum = 1.0;
    mean_sum.push_back(torch::zeros_like(l.running_mean, torch::kFloat64));
    var_sum.push_back(torch::zeros_like(l.running_var, torch::kFloat64));
  }

  std::int64_t seen = 0;
  {
    torch::NoGradGuard no_grad;
    net.train(true);
    while (seen < num_batches) {
      auto batch = next_batch();
      if (!batch) break;
      forward_fn(*batch);
      for (std::size_t i = 0; i < layers.size(); ++i) {
        mean_sum[i] += layers[i].running_mean.to(torch::kFloat64);
        var_sum[i] += layers[i].running_var.to(torch::kFloat64);
      }
      ++seen;
    }
    for (std::size_t i = 0; i < layers.size(); ++i) {
      *layers[i].momentum = saved_momentum[i];
      if (seen > 0) {
        layers[i].running_mean.copy_(mean_sum[i] / static_cast<double>(seen));
        layers[i].running_var.copy_(var_sum[i] / static_cast<double>(seen));
      }
    }
  }
  net.train(was_training);
  if (seen == 0) throw Error("precise BN received an empty data stream");
}

void precise_bn_recompute(VideoNet& net, const std::vector<torch::Tensor>& batches) {
  std::size_t next = 0;
  precise_bn_recompute(
      *net, [&](const torch::Tensor& x) { return net->forward(x).logits; },
      [&]() -> std::optional<torch::Tensor> {
        if (next >= batches.size()) return std::nullopt;
        return batches[next++];
      },
      std::max<std::int64_t>(1, static_cast<std::int64_t>(batches.size())));
}

}  // namespace tgmatch::model

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "tgmatch/data.hpp"
#include "tgmatch/eval.hpp"
#include "tgmatch/losses.hpp"
#include "tgmatch/model.hpp"

namespace tgmatch::trainer {

/// Which networks take part. Full trains RGB and TG jointly; the single-modality variants are
/// plain FixMatch on one modality (RgbOnly is the baseline).
enum class Variant { Full, RgbOnly, TgOnly };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct TrainConfig {
  double base_lr = 0.02;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::int64_t total_epochs = 40;
  std::int64_t lr_warmup_epochs = 2;
  std::int64_t supervised_warmup_epochs = 2;
  std::int64_t precise_bn_batches = 4;
  losses::LossWeights loss_weights;
  std::uint64_t seed = 0;
  Variant variant = Variant::Full;
  std::int64_t max_steps = 0;          // stop early after this many steps; 0 runs the schedule
  std::int64_t checkpoint_every = 0;   // epochs between checkpoints; 0 = only the final one
  std::int64_t eval_every = 0;         // epochs between test evaluations; 0 = only at the end

  void validate() const;
};

/// Learning rate at a step: linear ramp base_lr * s / warmup_steps, then
/// base_lr * 0.5 * (1 + cos(pi * progress)) over the remaining steps.
double lr_at(std::int64_t step, const TrainConfig& config, std::int64_t steps_per_epoch);
std::int64_t total_steps(const TrainConfig& config, std::int64_t steps_per_epoch);

struct StepMetrics {
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  double lr = 0.0;
  bool supervised_only = false;
  double total = 0.0;
  std::optional<double> ce_rgb, ce_tg;  // supervised terms
  std::optional<double> u_rgb, u_tg;    // unsupervised terms
  std::optional<double> fm_rgb, fm_tg, kd, clr;
  std::optional<double> mask_fraction;
  std::optional<double> pseudo_label_accuracy;  // over masked samples, against held labels

  nlohmann::json to_json() const;
};

/// Both networks, their optimizers and the loss wiring.
class Trainer {
public:
  Trainer(TrainConfig config, model::BackboneConfig backbone);

  /// Zeroes gradients, computes every active loss term on the batch and back-propagates the
  /// total once. No parameter update. Used by train_step and by gradient inspection.
  StepMetrics backward(const data::SemiBatch& batch, bool supervised_only);

  /// backward() followed by one SGD update of each active model at lr_at(step).
  StepMetrics train_step(const data::SemiBatch& batch, std::int64_t step,
                         std::int64_t steps_per_epoch);

  bool uses_rgb() const { return config_.variant != Variant::TgOnly; }
  bool uses_tg() const { return config_.variant != Variant::RgbOnly; }
  /// The network reported at test time: RGB unless only TG is trained.
  model::VideoNet& eval_model() { return uses_rgb() ? rgb_ : tg_; }

  model::VideoNet& rgb() { return rgb_; }
  model::VideoNet& tg() { return tg_; }
  const TrainConfig& config() const { return config_; }
  const model::BackboneConfig& backbone() const { return backbone_; }
  std::vector<std::pair<std::string, model::VideoNet>> named_models();

  void set_lr(double lr);

private:
  TrainConfig config_;
  model::BackboneConfig backbone_;
  model::VideoNet rgb_{nullptr}, tg_{nullptr};
  std::unique_ptr<torch::optim::SGD> opt_rgb_, opt_tg_;
  std::uint64_t backward_calls_ = 0;
};

struct FitOptions {
  std::filesystem::path out_dir;  // metrics.jsonl and checkpoints go here; empty = no files
  std::optional<data::DatasetManifest> test_manifest;
  eval::EvalSpec eval_spec;
  nlohmann::json run_config = nlohmann::json::object();  // stored in checkpoint headers
  std::function<void(const StepMetrics&)> on_step;
  bool quiet = true;
};

struct FitResult {
  std::vector<StepMetrics> history;
  std::optional<eval::EvalResult> test;
  std::filesystem::path checkpoint;
  std::int64_t steps_per_epoch = 0;
};

/// Runs the schedule on a manifest with a labeled subset. Evaluation (test manifest) is
/// preceded by a PreciseBN refresh of every active model.
FitResult fit(Trainer& trainer, const data::DatasetManifest& train_manifest,
              const data::BatchConfig& batch_config, const FitOptions& options,
              std::shared_ptr<data::VideoStore> store = nullptr);

/// Recomputes normalization statistics of the trainer's active models on weak views drawn
/// from the manifest's videos.
void refresh_precise_bn(Trainer& trainer, const data::DatasetManifest& manifest,
                        const data::BatchConfig& batch_config, data::VideoStore& store);

}  // namespace tgmatch::trainer

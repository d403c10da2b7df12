#include "tgmatch/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>
#include <numeric>
#include <random>

#include "tgmatch/checkpoint.hpp"
#include "tgmatch/errors.hpp"
#include "tgmatch/rng.hpp"

namespace fs = std::filesystem;

namespace tgmatch::trainer {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Full: return "full";
    case Variant::RgbOnly: return "fixmatch-rgb-only";
    case Variant::TgOnly: return "fixmatch-tg-only";
  }
  return "?";
}

Variant variant_from_string(const std::string& s) {
  if (s == "full" || s == "none" || s.empty()) return Variant::Full;
  if (s == "fixmatch-rgb-only" || s == "rgb-only" || s == "baseline") return Variant::RgbOnly;
  if (s == "fixmatch-tg-only" || s == "tg-only") return Variant::TgOnly;
  throw ConfigError("unknown ablation variant '" + s +
                    "' (expected full, fixmatch-rgb-only or fixmatch-tg-only)");
}

void TrainConfig::validate() const {
  if (!(base_lr > 0.0)) throw ConfigError("base_lr must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (total_epochs < 1) throw ConfigError("total_epochs must be >= 1");
  if (lr_warmup_epochs < 0 || supervised_warmup_epochs < 0)
    throw ConfigError("warm-up epochs must be >= 0");
  if (lr_warmup_epochs + supervised_warmup_epochs >= total_epochs)
    throw ConfigError("lr_warmup_epochs + supervised_warmup_epochs must be < total_epochs");
  if (precise_bn_batches < 0) throw ConfigError("precise_bn_batches must be >= 0");
  if (max_steps < 0 || checkpoint_every < 0 || eval_every < 0)
    throw ConfigError("max_steps, checkpoint_every and eval_every must be >= 0");
  loss_weights.validate();
}

std::int64_t total_steps(const TrainConfig& config, std::int64_t steps_per_epoch) {
  if (steps_per_epoch < 1) throw ConfigError("steps_per_epoch must be >= 1");
  return config.total_epochs * steps_per_epoch;
}

double lr_at(std::int64_t step, const TrainConfig& config, std::int64_t steps_per_epoch) {
  const auto total = total_steps(config, steps_per_epoch);
  if (step < 0 || step >= total)
    throw Error("step " + std::to_string(step) + " outside the schedule [0, " +
                std::to_string(total) + ")");
  const auto warmup = config.lr_warmup_epochs * steps_per_epoch;
  if (step < warmup)
    return config.base_lr * static_cast<double>(step) / static_cast<double>(warmup);
  const double progress =
      static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return config.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

nlohmann::json StepMetrics::to_json() const {
  auto opt = [](const std::optional<double>& v) -> nlohmann::json {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  return {{"step", step},
          {"epoch", epoch},
          {"lr", lr},
          {"supervised_only", supervised_only},
          {"loss_total", total},
          {"ce_rgb", opt(ce_rgb)},
          {"ce_tg", opt(ce_tg)},
          {"u_rgb", opt(u_rgb)},
          {"u_tg", opt(u_tg)},
          {"fm_rgb", opt(fm_rgb)},
          {"fm_tg", opt(fm_tg)},
          {"kd", opt(kd)},
          {"clr", opt(clr)},
          {"mask_fraction", opt(mask_fraction)},
          {"pseudo_label_accuracy", opt(pseudo_label_accuracy)}};
}

namespace {

std::unique_ptr<torch::optim::SGD> make_optimizer(model::VideoNet& net, const TrainConfig& c) {
  std::vector<torch::Tensor> decay, no_decay;
  for (auto& p : net->parameters()) (p.dim() <= 1 ? no_decay : decay).push_back(p);
  auto opts = [&](double wd) {
    return std::make_unique<torch::optim::SGDOptions>(
        torch::optim::SGDOptions(c.base_lr).momentum(c.momentum).weight_decay(wd));
  };
  std::vector<torch::optim::OptimizerParamGroup> groups;
  groups.emplace_back(decay, opts(c.weight_decay));
  groups.emplace_back(no_decay, opts(0.0));
  // libtorch fills group fields equal to their default value from the constructor defaults,
  // so the defaults must carry weight_decay 0 for the no-decay group to keep it.
  return std::make_unique<torch::optim::SGD>(
      std::move(groups), torch::optim::SGDOptions(c.base_lr).momentum(c.momentum).weight_decay(0.0));
}

model::VideoNet make_net(const model::BackboneConfig& b, modalities::Modality m, std::uint64_t seed) {
  torch::manual_seed(seed);
  return model::VideoNet(b, m);
}

double scalar(const torch::Tensor& t) { return t.item<double>(); }

model::BlockFeatureSet slice_features(const model::BlockFeatureSet& s, std::int64_t n, bool detach) {
  model::BlockFeatureSet out;
  out.modality = s.modality;
  for (const auto& f : s.features) out.features.push_back(detach ? f.slice(0, 0, n).detach() : f.slice(0, 0, n));
  return out;
}

}  // namespace

Trainer::Trainer(TrainConfig config, model::BackboneConfig backbone)
    : config_(std::move(config)), backbone_(std::move(backbone)) {
  config_.validate();
  backbone_.validate();
  rgb_ = make_net(backbone_, modalities::Modality::RGB, derive_seed(config_.seed, "init-rgb"));
  tg_ = make_net(backbone_, modalities::Modality::TG, derive_seed(config_.seed, "init-tg"));
  rgb_->train();
  tg_->train();
  opt_rgb_ = make_optimizer(rgb_, config_);
  opt_tg_ = make_optimizer(tg_, config_);
}

std::vector<std::pair<std::string, model::VideoNet>> Trainer::named_models() {
  std::vector<std::pair<std::string, model::VideoNet>> out;
  if (uses_rgb()) out.emplace_back("rgb", rgb_);
  if (uses_tg()) out.emplace_back("tg", tg_);
  return out;
}

void Trainer::set_lr(double lr) {
  for (auto* opt : {opt_rgb_.get(), opt_tg_.get()})
    for (auto& group : opt->param_groups())
      static_cast<torch::optim::SGDOptions&>(group.options()).lr(lr);
}

StepMetrics Trainer::backward(const data::SemiBatch& batch, bool supervised_only) {
  const auto& w = config_.loss_weights;
  const bool joint = config_.variant == Variant::Full;
  const auto b_l = static_cast<std::int64_t>(batch.labeled_rgb_weak.size());
  const auto b_u = static_cast<std::int64_t>(batch.unlabeled_rgb_weak.size());
  const bool semi = !supervised_only && b_u > 0;
  if (b_l == 0) throw Error("a training batch needs labeled samples");

  rgb_->zero_grad();
  tg_->zero_grad();
  // Dropout draws from the global generator; reseed so a step depends only on its inputs.
  torch::manual_seed(derive_seed(config_.seed, {0x5eedULL, backward_calls_++}));

  StepMetrics m;
  m.supervised_only = !semi;

  losses::PseudoLabelAssignment pl;
  if (semi) {
    torch::Tensor p_rgb, p_tg;
    {
      torch::NoGradGuard no_grad;
      if (uses_rgb()) {
        rgb_->eval();
        p_rgb = model::forward(rgb_, model::to_network_input(batch.unlabeled_rgb_weak)).probabilities;
        rgb_->train();
      }
      if (uses_tg()) {
        tg_->eval();
        p_tg = model::forward(tg_, model::to_network_input(batch.unlabeled_tg_weak)).probabilities;
        tg_->train();
      }
    }
    const auto metric = joint ? w.pseudo_label_metric
                              : (uses_rgb() ? losses::PseudoLabelMetric::RgbOnly
                                            : losses::PseudoLabelMetric::TgOnly);
    pl = losses::assign_pseudo_labels(p_rgb, p_tg, metric, w.gamma);
    const auto& reported = uses_rgb() ? pl.for_rgb : pl.for_tg;
    m.mask_fraction = reported.mask_fraction();
    const auto masked = reported.mask.sum().item<std::int64_t>();
    if (masked > 0 && batch.unlabeled_true_labels.size() == static_cast<std::size_t>(b_u)) {
      auto truth = torch::tensor(batch.unlabeled_true_labels, torch::kInt64);
      const auto correct = ((reported.labels == truth) & reported.mask).sum().item<std::int64_t>();
      m.pseudo_label_accuracy = static_cast<double>(correct) / static_cast<double>(masked);
    }
  }

  // Rows: [labeled weak | unlabeled weak (joint only) | unlabeled strong].
  const bool with_unlabeled_weak = semi && joint;
  const std::int64_t strong_offset = b_l + (with_unlabeled_weak ? b_u : 0);
  auto run = [&](model::VideoNet& net, const std::vector<modalities::VideoClip>& labeled,
                 const std::vector<modalities::VideoClip>& weak,
                 const std::vector<modalities::VideoClip>& strong) {
    std::vector<modalities::VideoClip> clips = labeled;
    if (with_unlabeled_weak) clips.insert(clips.end(), weak.begin(), weak.end());
    if (semi) clips.insert(clips.end(), strong.begin(), strong.end());
    return model::forward(net, model::to_network_input(clips));
  };

  losses::LossTerms terms;
  std::optional<model::ModelOutputs> out_rgb, out_tg;
  auto fixmatch = [&](const model::ModelOutputs& out, const losses::PseudoLabelSet& pseudo,
                      std::optional<double>& ce_slot, std::optional<double>& u_slot) {
    auto ce = losses::supervised_ce(out.probabilities.slice(0, 0, b_l), batch.one_hot);
    ce_slot = scalar(ce);
    if (!semi) return ce;
    auto u = losses::unsupervised_ce(out.probabilities.slice(0, strong_offset, strong_offset + b_u),
                                     pseudo);
    u_slot = scalar(u);
    return ce + w.lambda_u * u;
  };
  if (uses_rgb()) {
    out_rgb = run(rgb_, batch.labeled_rgb_weak, batch.unlabeled_rgb_weak, batch.unlabeled_rgb_strong);
    terms.fm_rgb = fixmatch(*out_rgb, pl.for_rgb, m.ce_rgb, m.u_rgb);
    m.fm_rgb = scalar(*terms.fm_rgb);
  }
  if (uses_tg()) {
    out_tg = run(tg_, batch.labeled_tg_weak, batch.unlabeled_tg_weak, batch.unlabeled_tg_strong);
    terms.fm_tg = fixmatch(*out_tg, pl.for_tg, m.ce_tg, m.u_tg);
    m.fm_tg = scalar(*terms.fm_tg);
  }

  if (with_unlabeled_weak) {
    const auto pool = b_l + b_u;
    if (w.w_kd > 0.0) {
      terms.kd = losses::dense_alignment_loss(slice_features(out_rgb->block_features, pool, false),
                                              slice_features(out_tg->block_features, pool, w.stopgrad),
                                              w);
      m.kd = scalar(*terms.kd);
    }
    if (w.w_clr > 0.0) {
      terms.clr = losses::cross_modal_infonce(out_rgb->projection.slice(0, 0, pool),
                                              out_tg->projection.slice(0, 0, pool), w.tau,
                                              w.symmetric_infonce);
      m.clr = scalar(*terms.clr);
    }
  }

  auto total = losses::total_loss(terms, w);
  m.total = scalar(total);
  total.backward();
  return m;
}

StepMetrics Trainer::train_step(const data::SemiBatch& batch, std::int64_t step,
                                std::int64_t steps_per_epoch) {
  const double lr = lr_at(step, config_, steps_per_epoch);
  set_lr(lr);
  const auto epoch = step / steps_per_epoch;
  auto m = backward(batch, epoch < config_.supervised_warmup_epochs);
  if (uses_rgb()) opt_rgb_->step();
  if (uses_tg()) opt_tg_->step();
  m.step = step;
  m.epoch = epoch;
  m.lr = lr;
  return m;
}

void refresh_precise_bn(Trainer& trainer, const data::DatasetManifest& manifest,
                        const data::BatchConfig& batch_config, data::VideoStore& store) {
  const auto num_batches = trainer.config().precise_bn_batches;
  if (num_batches == 0) return;
  if (manifest.entries.empty()) throw Error("PreciseBN needs training videos");
  const auto seed = derive_seed(trainer.config().seed, "precise-bn");
  std::vector<std::size_t> order(manifest.entries.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto batch_size = batch_config.labeled_batch + batch_config.unlabeled_batch;
  std::vector<torch::Tensor> rgb_batches, tg_batches;
  std::size_t cursor = 0;
  for (std::int64_t b = 0; b < num_batches; ++b) {
    std::vector<modalities::VideoClip> rgb, tg;
    for (std::int64_t i = 0; i < batch_size; ++i, ++cursor) {
      const auto& entry = manifest.entries[order[cursor % order.size()]];
      auto pair = data::make_weak_pair(store.get(entry), batch_config, derive_seed(seed, {cursor}));
      rgb.push_back(std::move(pair.rgb));
      tg.push_back(std::move(pair.tg));
    }
    rgb_batches.push_back(model::to_network_input(rgb));
    tg_batches.push_back(model::to_network_input(tg));
  }
  if (trainer.uses_rgb()) model::precise_bn_recompute(trainer.rgb(), rgb_batches);
  if (trainer.uses_tg()) model::precise_bn_recompute(trainer.tg(), tg_batches);
}

FitResult fit(Trainer& trainer, const data::DatasetManifest& train_manifest,
              const data::BatchConfig& batch_config, const FitOptions& options,
              std::shared_ptr<data::VideoStore> store) {
  const auto& config = trainer.config();
  if (!store) store = std::make_shared<data::VideoStore>(train_manifest.root);
  data::SemiBatchSampler sampler(train_manifest, batch_config, derive_seed(config.seed, "sampler"),
                                 store);
  FitResult result;
  result.steps_per_epoch = sampler.steps_per_epoch();
  const auto spe = result.steps_per_epoch;
  const auto scheduled = total_steps(config, spe);
  const auto limit = config.max_steps > 0 ? std::min(scheduled, config.max_steps) : scheduled;

  std::ofstream metrics_log, eval_log;
  if (!options.out_dir.empty()) {
    fs::create_directories(options.out_dir);
    metrics_log.open(options.out_dir / "metrics.jsonl");
    if (!metrics_log) throw IoError("cannot write metrics log in " + options.out_dir.string());
  }

  std::shared_ptr<data::VideoStore> test_store;
  if (options.test_manifest)
    test_store = options.test_manifest->root == train_manifest.root
                     ? store
                     : std::make_shared<data::VideoStore>(options.test_manifest->root);

  auto save_checkpoint = [&](const fs::path& path, std::int64_t step, const nlohmann::json& metrics) {
    checkpoint::Header h;
    h.step = step;
    h.metrics = metrics;
    h.config["run"] = options.run_config;
    h.config["variant"] = to_string(config.variant);
    checkpoint::save(path, h, trainer.named_models());
  };
  auto run_eval = [&]() {
    refresh_precise_bn(trainer, train_manifest, batch_config, *store);
    return eval::evaluate(trainer.eval_model(), options.test_manifest->entries, *test_store,
                          options.eval_spec);
  };

  for (std::int64_t step = 0; step < limit; ++step) {
    const bool supervised = step / spe < config.supervised_warmup_epochs;
    auto batch = sampler.next_batch(!supervised);
    auto m = trainer.train_step(batch, step, spe);
    if (metrics_log.is_open()) metrics_log << m.to_json().dump() << '\n' << std::flush;
    if (options.on_step) options.on_step(m);
    if (!options.quiet && (step % 50 == 0 || step + 1 == limit))
      std::cerr << "step " << step << "/" << limit << " loss " << m.total << " lr " << m.lr << "\n";
    result.history.push_back(m);

    if ((step + 1) % spe != 0 || step + 1 == limit) continue;
    const auto epoch_done = (step + 1) / spe;
    if (config.checkpoint_every > 0 && epoch_done % config.checkpoint_every == 0 &&
        !options.out_dir.empty())
      save_checkpoint(options.out_dir / ("checkpoint_epoch" + std::to_string(epoch_done) + ".tgm"),
                      step + 1, nlohmann::json::object());
    if (config.eval_every > 0 && options.test_manifest && epoch_done % config.eval_every == 0) {
      auto r = run_eval();
      if (!eval_log.is_open() && !options.out_dir.empty()) eval_log.open(options.out_dir / "eval.jsonl");
      if (eval_log.is_open())
        eval_log << nlohmann::json{{"epoch", epoch_done}, {"top1", r.top1}, {"top5", r.top5}}.dump()
                 << '\n' << std::flush;
    }
  }

  nlohmann::json final_metrics = nlohmann::json::object();
  if (options.test_manifest) {
    result.test = run_eval();
    final_metrics = {{"top1", result.test->top1}, {"top5", result.test->top5}};
  } else {
    refresh_precise_bn(trainer, train_manifest, batch_config, *store);
  }
  if (!options.out_dir.empty()) {
    result.checkpoint = options.out_dir / "checkpoint.tgm";
    save_checkpoint(result.checkpoint, limit, final_metrics);
  }
  return result;
}

}  // namespace tgmatch::trainer

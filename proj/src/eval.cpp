#include "tgmatch/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "tgmatch/errors.hpp"
#include "tgmatch/rng.hpp"

namespace tgmatch::eval {

void EvalSpec::validate() const {
  if (clips_per_video < 1) throw ConfigError("clips_per_video must be >= 1");
  if (crops_per_clip < 1) throw ConfigError("crops_per_clip must be >= 1");
  if (crop_size < 1 || short_side < 1) throw ConfigError("crop and short side must be >= 1");
  if (crop_size > short_side) throw ConfigError("crop_size must not exceed the resized short side");
  sampling.validate();
}

std::vector<augment::CropBox> eval_crop_boxes(std::int64_t resized_height,
                                              std::int64_t resized_width, std::int64_t crop_size,
                                              std::int64_t count) {
  if (crop_size > resized_height || crop_size > resized_width)
    throw ConfigError("crop does not fit the resized frame");
  const bool landscape = resized_width >= resized_height;
  const auto slack_long = (landscape ? resized_width : resized_height) - crop_size;
  const auto center_short = ((landscape ? resized_height : resized_width) - crop_size) / 2;
  std::vector<augment::CropBox> boxes;
  for (std::int64_t i = 0; i < count; ++i) {
    const auto offset =
        count == 1 ? slack_long / 2
                   : static_cast<std::int64_t>(std::llround(static_cast<double>(slack_long) *
                                                            static_cast<double>(i) /
                                                            static_cast<double>(count - 1)));
    augment::CropBox b;
    b.height = b.width = crop_size;
    b.top = landscape ? center_short : offset;
    b.left = landscape ? offset : center_short;
    boxes.push_back(b);
  }
  return boxes;
}

torch::Tensor video_views(const modalities::Video& video, modalities::Modality modality,
                          const EvalSpec& spec) {
  spec.validate();
  modalities::Video source = video;
  if (spec.corruption) {
    modalities::VideoClip raw;
    raw.frames = video.frames.to(torch::kFloat64);
    raw.source_id = video.id;
    source.frames =
        augment::corrupt(raw, *spec.corruption, derive_seed(spec.corruption_seed, video.id)).frames;
  }
  auto sampling = spec.sampling;
  sampling.clips_per_video_eval = spec.clips_per_video;
  std::vector<torch::Tensor> views;
  for (const auto& [rgb, tg] : modalities::sample_eval_clips(source, sampling)) {
    const auto& clip = modality == modalities::Modality::RGB ? rgb : tg;
    auto resized = augment::resize_short_side(clip.frames, spec.short_side);
    for (const auto& box : eval_crop_boxes(resized.size(1), resized.size(2), spec.crop_size,
                                           spec.crops_per_clip)) {
      modalities::VideoClip crop = clip;
      crop.frames = resized.slice(1, box.top, box.top + box.height)
                        .slice(2, box.left, box.left + box.width)
                        .contiguous();
      views.push_back(model::to_network_input(crop).squeeze(0));
    }
  }
  return torch::stack(views);
}

torch::Tensor average_view_probabilities(const torch::Tensor& view_probs) {
  if (view_probs.dim() != 2) throw ShapeError("view probabilities must be [V, K]");
  const auto p = view_probs.to(torch::kFloat64);
  const double sum_dev = (p.sum(1) - 1.0).abs().max().item<double>();
  if (sum_dev > 1e-4 || p.min().item<double>() < 0.0)
    throw Error("view probabilities are not on the simplex");
  return p.mean(0);
}

EvalResult score(const torch::Tensor& probs, const std::vector<std::int64_t>& labels) {
  if (probs.size(0) == 0) throw Error("cannot evaluate an empty split");
  if (static_cast<std::size_t>(probs.size(0)) != labels.size())
    throw ShapeError("one label per video is required");
  const auto k = std::min<std::int64_t>(5, probs.size(1));
  const auto top = std::get<1>(probs.topk(k, 1));
  EvalResult r;
  r.num_videos = probs.size(0);
  std::int64_t hit1 = 0, hit5 = 0;
  for (std::int64_t i = 0; i < r.num_videos; ++i) {
    const auto label = labels[static_cast<std::size_t>(i)];
    if (top[i][0].item<std::int64_t>() == label) ++hit1;
    for (std::int64_t j = 0; j < k; ++j)
      if (top[i][j].item<std::int64_t>() == label) {
        ++hit5;
        break;
      }
  }
  r.top1 = static_cast<double>(hit1) / static_cast<double>(r.num_videos);
  r.top5 = static_cast<double>(hit5) / static_cast<double>(r.num_videos);
  return r;
}

EvalResult evaluate(model::VideoNet& net, const std::vector<data::ManifestEntry>& split,
                    data::VideoStore& store, const EvalSpec& spec) {
  if (split.empty()) throw Error("cannot evaluate an empty split");
  spec.validate();
  const bool was_training = net->is_training();
  net->eval();
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> rows;
  std::vector<std::int64_t> labels;
  std::vector<VideoPrediction> preds;
  for (const auto& entry : split) {
    const auto& video = store.get(entry);
    auto out = model::forward(net, video_views(video, net->modality(), spec));
    auto avg = average_view_probabilities(out.probabilities);
    rows.push_back(avg);
    labels.push_back(entry.class_id);
    preds.push_back({entry.video_id, entry.class_id, avg, avg.argmax().item<std::int64_t>()});
  }
  net->train(was_training);
  auto r = score(torch::stack(rows), labels);
  r.predictions = std::move(preds);
  return r;
}

std::vector<RobustnessRow> robustness_suite(model::VideoNet& net,
                                            const std::vector<data::ManifestEntry>& split,
                                            data::VideoStore& store, const EvalSpec& spec,
                                            const std::vector<augment::Corruption>& kinds) {
  auto clean_spec = spec;
  clean_spec.corruption.reset();
  const double clean = evaluate(net, split, store, clean_spec).top1;
  std::vector<RobustnessRow> rows{{"clean", clean, 0.0}};
  for (auto kind : kinds) {
    auto s = spec;
    s.corruption = kind;
    const double acc = evaluate(net, split, store, s).top1;
    rows.push_back({augment::to_string(kind), acc, clean - acc});
  }
  return rows;
}

GapResult train_test_gap(model::VideoNet& net, const std::vector<data::ManifestEntry>& train,
                         const std::vector<data::ManifestEntry>& test, data::VideoStore& store,
                         const EvalSpec& spec) {
  GapResult g;
  g.train_acc = evaluate(net, train, store, spec).top1;
  g.test_acc = evaluate(net, test, store, spec).top1;
  g.gap = g.train_acc - g.test_acc;
  return g;
}

std::string format_robustness_table(const std::vector<RobustnessRow>& rows) {
  std::ostringstream os;
  char line[128];
  std::snprintf(line, sizeof line, "%-18s %8s %8s\n", "condition", "top1", "drop");
  os << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-18s %8.2f %8.2f\n", r.condition.c_str(), 100.0 * r.top1,
                  100.0 * r.drop);
    os << line;
  }
  return os.str();
}

}  // namespace tgmatch::eval

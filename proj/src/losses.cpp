#include "tgmatch/losses.hpp"

#include <sstream>

#include "tgmatch/errors.hpp"

namespace F = torch::nn::functional;

namespace tgmatch::losses {

std::string to_string(AlignmentKind k) {
  switch (k) {
    case AlignmentKind::L1: return "l1";
    case AlignmentKind::L2: return "l2";
    case AlignmentKind::Cosine: return "cosine";
  }
  return "?";
}

AlignmentKind alignment_kind_from_string(const std::string& s) {
  if (s == "l1" || s == "L1") return AlignmentKind::L1;
  if (s == "l2" || s == "L2") return AlignmentKind::L2;
  if (s == "cosine" || s == "cos") return AlignmentKind::Cosine;
  throw ConfigError("unknown alignment kind '" + s + "' (expected l1, l2 or cosine)");
}

std::string to_string(PseudoLabelMetric m) {
  switch (m) {
    case PseudoLabelMetric::RgbOnly: return "rgb";
    case PseudoLabelMetric::TgOnly: return "tg";
    case PseudoLabelMetric::Self: return "self";
    case PseudoLabelMetric::Average: return "average";
  }
  return "?";
}

PseudoLabelMetric pseudo_label_metric_from_string(const std::string& s) {
  if (s == "rgb" || s == "rgb_only") return PseudoLabelMetric::RgbOnly;
  if (s == "tg" || s == "tg_only") return PseudoLabelMetric::TgOnly;
  if (s == "self") return PseudoLabelMetric::Self;
  if (s == "average" || s == "avg") return PseudoLabelMetric::Average;
  throw ConfigError("unknown pseudo-label metric '" + s + "' (expected rgb, tg, self or average)");
}

void LossWeights::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must be in (0, 1]");
  if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
  if (w_fm < 0.0 || w_kd < 0.0 || w_clr < 0.0 || lambda_u < 0.0)
    throw ConfigError("loss weights must be >= 0");
  if (w_kd > 0.0 && aligned_blocks.empty())
    throw ConfigError("aligned_blocks must be non-empty when w_kd > 0");
  for (int b : aligned_blocks)
    if (b < 1 || b > 4) throw ConfigError("aligned block indices must be in 1..4");
}

double PseudoLabelSet::mask_fraction() const {
  if (!mask.defined() || mask.numel() == 0) return 0.0;
  return mask.to(torch::kFloat64).mean().item<double>();
}

namespace {

void require_matrix(const torch::Tensor& t, const char* what) {
  if (!t.defined() || t.dim() != 2) throw ShapeError(std::string(what) + " must be a [B, K] matrix");
}

void require_finite(const torch::Tensor& t, const char* term) {
  if (!torch::isfinite(t).all().item<bool>())
    throw TrainingFault(term, std::string("loss term '") + term + "' is not finite");
}

}  // namespace

torch::Tensor supervised_ce(const torch::Tensor& probs, const torch::Tensor& one_hot) {
  require_matrix(probs, "probs");
  if (one_hot.sizes() != probs.sizes()) throw ShapeError("labels must match probs in shape");
  const auto logp = torch::log(probs.clamp_min(kLogEpsilon));
  return -(one_hot.to(probs.scalar_type()) * logp).sum(1).mean();
}

PseudoLabelSet threshold_pseudo_labels(const torch::Tensor& probs, double gamma) {
  require_matrix(probs, "probs");
  PseudoLabelSet out;
  out.fused_probs = probs.detach();
  auto [conf, idx] = out.fused_probs.max(1);
  out.mask = conf >= gamma;
  out.labels = idx;
  return out;
}

PseudoLabelSet fuse_pseudo_labels(const torch::Tensor& probs_rgb, const torch::Tensor& probs_tg,
                                  double gamma) {
  require_matrix(probs_rgb, "probs_rgb");
  require_matrix(probs_tg, "probs_tg");
  if (probs_rgb.sizes() != probs_tg.sizes())
    throw ShapeError("RGB and TG probabilities must have the same shape");
  return threshold_pseudo_labels((probs_rgb.detach() + probs_tg.detach()) / 2, gamma);
}

PseudoLabelAssignment assign_pseudo_labels(const torch::Tensor& probs_rgb,
                                           const torch::Tensor& probs_tg,
                                           PseudoLabelMetric metric, double gamma) {
  auto need = [](const torch::Tensor& t, const char* which) {
    if (!t.defined())
      throw ConfigError(std::string("pseudo-label metric needs ") + which + " predictions");
  };
  PseudoLabelAssignment a;
  switch (metric) {
    case PseudoLabelMetric::RgbOnly:
      need(probs_rgb, "RGB");
      a.for_rgb = a.for_tg = threshold_pseudo_labels(probs_rgb, gamma);
      break;
    case PseudoLabelMetric::TgOnly:
      need(probs_tg, "TG");
      a.for_rgb = a.for_tg = threshold_pseudo_labels(probs_tg, gamma);
      break;
    case PseudoLabelMetric::Self:
      if (probs_rgb.defined()) a.for_rgb = threshold_pseudo_labels(probs_rgb, gamma);
      if (probs_tg.defined()) a.for_tg = threshold_pseudo_labels(probs_tg, gamma);
      break;
    case PseudoLabelMetric::Average:
      need(probs_rgb, "RGB");
      need(probs_tg, "TG");
      a.for_rgb = a.for_tg = fuse_pseudo_labels(probs_rgb, probs_tg, gamma);
      break;
  }
  return a;
}

torch::Tensor unsupervised_ce(const torch::Tensor& probs_strong, const PseudoLabelSet& pseudo) {
  require_matrix(probs_strong, "probs_strong");
  const auto b = probs_strong.size(0);
  if (pseudo.mask.numel() != b || pseudo.labels.numel() != b)
    throw ShapeError("pseudo-labels must cover every sample of the strong batch");
  const auto picked = probs_strong.gather(1, pseudo.labels.view({b, 1})).squeeze(1);
  const auto nll = -torch::log(picked.clamp_min(kLogEpsilon));
  return (nll * pseudo.mask.to(nll.scalar_type())).sum() / static_cast<double>(b);
}

torch::Tensor block_alignment(const torch::Tensor& student, const torch::Tensor& teacher,
                              AlignmentKind kind) {
  if (student.sizes() != teacher.sizes()) {
    std::ostringstream msg;
    msg << "aligned features differ in shape: " << student.sizes() << " vs " << teacher.sizes();
    throw ShapeError(msg.str());
  }
  switch (kind) {
    case AlignmentKind::L1: return (student - teacher).abs().mean();
    case AlignmentKind::L2: return (student - teacher).pow(2).mean();
    case AlignmentKind::Cosine: {
      if (student.dim() < 2) throw ShapeError("cosine alignment needs a channel axis at dim 1");
      // cos = <a, b> / sqrt(|a|^2 |b|^2); identical inputs give exactly 1.
      const auto dot = (student * teacher).sum(1);
      const auto na = (student * student).sum(1);
      const auto nb = (teacher * teacher).sum(1);
      const auto cos = dot / torch::sqrt((na * nb).clamp_min(1e-24));
      return -cos.mean();
    }
  }
  throw ConfigError("unknown alignment kind");
}

torch::Tensor dense_alignment_loss(const model::BlockFeatureSet& rgb_feats,
                                   const model::BlockFeatureSet& tg_feats,
                                   const LossWeights& weights) {
  if (weights.aligned_blocks.empty())
    throw ConfigError("dense alignment needs at least one aligned block");
  if (rgb_feats.features.size() != tg_feats.features.size())
    throw ShapeError("RGB and TG feature sets have different block counts");
  torch::Tensor total;
  for (int block : weights.aligned_blocks) {
    if (block < 1 || static_cast<std::size_t>(block) > rgb_feats.features.size())
      throw ConfigError("aligned block " + std::to_string(block) + " does not exist");
    const auto i = static_cast<std::size_t>(block - 1);
    auto d = block_alignment(rgb_feats.features[i], tg_feats.features[i], weights.alignment_kind);
    total = total.defined() ? total + d : d;
  }
  return total / static_cast<double>(weights.aligned_blocks.size());
}

torch::Tensor cross_modal_infonce(const torch::Tensor& proj_rgb, const torch::Tensor& proj_tg,
                                  double tau, bool symmetric) {
  require_matrix(proj_rgb, "proj_rgb");
  require_matrix(proj_tg, "proj_tg");
  if (proj_rgb.sizes() != proj_tg.sizes())
    throw ShapeError("RGB and TG projections must have the same shape");
  const auto b = proj_rgb.size(0);
  if (b < 2) throw Error("InfoNCE needs at least 2 clips so every anchor has a negative");
  if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
  {
    torch::NoGradGuard no_grad;
    const auto dev = std::max((proj_rgb.norm(2, 1) - 1).abs().max().item<double>(),
                              (proj_tg.norm(2, 1) - 1).abs().max().item<double>());
    if (dev > 1e-4) throw Error("InfoNCE expects l2-normalized rows");
  }
  const auto logits = proj_rgb.matmul(proj_tg.t()) / tau;  // [rgb anchor, tg candidate]
  const auto targets = torch::arange(b, torch::TensorOptions().dtype(torch::kInt64));
  const auto rgb_anchor = F::cross_entropy(logits, targets);
  if (!symmetric) return rgb_anchor;
  const auto tg_anchor = F::cross_entropy(logits.t(), targets);
  return (rgb_anchor + tg_anchor) / 2;
}

torch::Tensor total_loss(const LossTerms& terms, const LossWeights& weights) {
  torch::Tensor total = torch::zeros({});
  auto add = [&](const std::optional<torch::Tensor>& term, double w, const char* name) {
    if (!term) return;
    require_finite(*term, name);
    total = total.to(term->scalar_type()) + w * *term;
  };
  add(terms.fm_rgb, weights.w_fm, "fm_rgb");
  add(terms.fm_tg, weights.w_fm, "fm_tg");
  add(terms.kd, weights.w_kd, "kd");
  add(terms.clr, weights.w_clr, "clr");
  return total;
}

}  // namespace tgmatch::losses

#pragma once

#include <optional>
#include <set>
#include <string>

#include <torch/torch.h>

#include "tgmatch/model.hpp"

namespace tgmatch::losses {

enum class AlignmentKind { L1, L2, Cosine };

/// Which weak-view predictions produce the pseudo-labels a model trains on.
enum class PseudoLabelMetric {
  RgbOnly,  // both models use the RGB prediction
  TgOnly,   // both models use the TG prediction
  Self,     // each model uses its own prediction
  Average   // both models use the mean of the two predictions
};

std::string to_string(AlignmentKind k);
AlignmentKind alignment_kind_from_string(const std::string& s);
std::string to_string(PseudoLabelMetric m);
PseudoLabelMetric pseudo_label_metric_from_string(const std::string& s);

/// Floor applied inside every log.
inline constexpr double kLogEpsilon = 1e-12;

struct LossWeights {
  double w_fm = 0.5;
  double w_kd = 1.0;
  double w_clr = 1.0;
  double gamma = 0.3;  // confidence threshold
  double tau = 0.5;    // contrastive temperature
  double lambda_u = 1.0;
  AlignmentKind alignment_kind = AlignmentKind::Cosine;
  std::set<int> aligned_blocks{1, 2, 3, 4};
  PseudoLabelMetric pseudo_label_metric = PseudoLabelMetric::Average;
  bool stopgrad = true;
  bool symmetric_infonce = true;

  void validate() const;
};

/// mask[j] is true iff max(fused_probs[j]) >= gamma; labels[j] = argmax(fused_probs[j]).
struct PseudoLabelSet {
  torch::Tensor mask;        // [B_u] bool
  torch::Tensor labels;      // [B_u] int64 (meaningful where mask is true)
  torch::Tensor fused_probs; // [B_u, K]

  double mask_fraction() const;
};

/// -(1/B_l) sum_i y_i . log p_i with log floored at kLogEpsilon. `one_hot` is [B_l, K].
torch::Tensor supervised_ce(const torch::Tensor& probs, const torch::Tensor& one_hot);

/// Thresholds a probability matrix directly (single-source pseudo-labels).
PseudoLabelSet threshold_pseudo_labels(const torch::Tensor& probs, double gamma);

/// Averages the two modalities' weak-view probabilities, then thresholds.
PseudoLabelSet fuse_pseudo_labels(const torch::Tensor& probs_rgb, const torch::Tensor& probs_tg,
                                  double gamma);

/// Pseudo-labels each model should train on under `metric`.
struct PseudoLabelAssignment {
  PseudoLabelSet for_rgb;
  PseudoLabelSet for_tg;
};
PseudoLabelAssignment assign_pseudo_labels(const torch::Tensor& probs_rgb,
                                           const torch::Tensor& probs_tg,
                                           PseudoLabelMetric metric, double gamma);

/// -(1/B_u) sum_{j in C} log p_j[label_j]. The divisor is the full batch size, not |C|.
torch::Tensor unsupervised_ce(const torch::Tensor& probs_strong, const PseudoLabelSet& pseudo);

/// Alignment distance of one block pair [B, C, T, H, W]:
///   L1     mean |a - b|
///   L2     mean (a - b)^2
///   cosine -mean over (b, t, h, w) of cos(a[:, loc], b[:, loc]) over the channel axis
torch::Tensor block_alignment(const torch::Tensor& student, const torch::Tensor& teacher,
                              AlignmentKind kind);

/// Mean of block_alignment over `weights.aligned_blocks` (1-based). The teacher (TG) side is
/// taken as given: pass BlockFeatureSet::detached() to cut its gradient path.
torch::Tensor dense_alignment_loss(const model::BlockFeatureSet& rgb_feats,
                                   const model::BlockFeatureSet& tg_feats,
                                   const LossWeights& weights);

/// Cross-modal InfoNCE over unit-norm rows [B, d]. Row i of each matrix is the same clip.
/// Each anchor's positive is the other modality's row of the same clip; negatives are the
/// other modality's rows of different clips. Symmetric form averages over all 2B anchors;
/// the one-directional form uses RGB rows as anchors only.
torch::Tensor cross_modal_infonce(const torch::Tensor& proj_rgb, const torch::Tensor& proj_tg,
                                  double tau, bool symmetric = true);

/// Per-term inputs to the total objective. fm_* = L_l + lambda_u * L_u for that modality.
/// Absent terms contribute nothing.
struct LossTerms {
  std::optional<torch::Tensor> fm_rgb;
  std::optional<torch::Tensor> fm_tg;
  std::optional<torch::Tensor> kd;
  std::optional<torch::Tensor> clr;
};

/// w_fm (L_fm^RGB + L_fm^TG) + w_kd L_kd + w_clr L_clr. Throws TrainingFault naming the first
/// non-finite term.
torch::Tensor total_loss(const LossTerms& terms, const LossWeights& weights);

}  // namespace tgmatch::losses

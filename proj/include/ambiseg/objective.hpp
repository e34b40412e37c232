#pragma once

// Training losses for the multi-mask model: focal + soft-IoU mask loss,
// squared-error IoU-score loss, winner-take-all assignment with an
// epoch-decaying regularizer over every head.
//
// Two forms are provided. The raster functions evaluate a single sample
// directly and define the reference values; build_batch_objective produces a
// differentiable graph over a whole batch for training.

#include <cstddef>
#include <string>
#include <vector>

#include "ambiseg/diffcore.hpp"
#include "ambiseg/multimask.hpp"

namespace ambiseg::objective {

enum class FocalVariant {
  PositiveOnly,  // foreground term only
  Symmetric,     // foreground + background term
};

enum class WinnerRule {
  ArgmaxIoU,             // best actual overlap with ground truth
  ArgminIoU,             // the formula as typeset; kept for experiments
  ArgmaxPredictedScore,  // the head the score branch currently prefers
};

struct LossConfig {
  Real focusing = 2.0;  // tau
  Real lambda_mask = 10.0;
  Real lambda_score = 0.05;
  Real lambda_reg = 0.1;
  Real decay = 0.2;  // gamma
  FocalVariant focal = FocalVariant::Symmetric;
  bool normalize_focal = false;  // divide the focal sum by the pixel count
  WinnerRule winner = WinnerRule::ArgmaxIoU;
  bool regularizer_includes_winner = true;
  bool binarized_score_target = false;
  bool detach_score_target = true;  // graph form only
  Real clamp_eps = 1e-6;

  void validate() const;
};

struct ObjectiveBreakdown {
  Real total = 0;
  std::size_t winner = 0;  // zero-based
  std::vector<Real> mask_losses;
  std::vector<Real> score_losses;
  Real regularizer = 0;
};

/// Clamp a soft mask into [eps, 1 - eps].
Mask clamp_mask(const Mask& m, Real eps = 1e-6);

Real soft_iou(const Mask& m, const Mask& y);
Real focal_loss(const Mask& m, const Mask& y, const LossConfig& cfg = {});
Real iou_loss(const Mask& m, const Mask& y);
Real mask_loss(const Mask& m, const Mask& y, const LossConfig& cfg = {});
Real score_loss(Real score, const Mask& m, const Mask& y, const LossConfig& cfg = {});

/// Weight on the all-heads regularizer at epoch t: lambda_reg * exp(-gamma t).
Real regularizer_weight(int epoch, const LossConfig& cfg);

std::size_t select_winner(const MultiMaskOutput& out, const Mask& y,
                          WinnerRule rule = WinnerRule::ArgmaxIoU);

ObjectiveBreakdown total_objective(const MultiMaskOutput& out, const Mask& y, int epoch,
                                   const LossConfig& cfg = {});

// ---- graph form ------------------------------------------------------------

/// Variable names bound by the trainer.
inline const std::string kTargetVar = "loss.target";          // B x N x H x W, gt repeated per head
inline const std::string kAssignVar = "loss.assign";          // B x N x 1 x 1 mask-loss weights
inline const std::string kScoreTargetVar = "loss.score_target";  // B x N x 1 x 1 (detached mode)

struct BatchObjective {
  diff::Expr total;       // scalar, mean over the batch
  diff::Expr mask_loss;   // B x N x 1 x 1
  diff::Expr soft_iou;    // B x N x 1 x 1
  diff::Expr score_loss;  // B x N x 1 x 1 (empty when scores are absent)
};

/// masks: B x N x H x W, already clamped into (0,1). scores: B x N x 1 x 1 or
/// an empty Expr for score-less training.
BatchObjective build_batch_objective(const diff::Expr& masks, const diff::Expr& scores,
                                     const LossConfig& cfg);

/// Per-(sample, head) mask-loss weights: 1 on the winner plus the decayed
/// regularizer weight on every head covered by the regularizer.
Tensor assignment_weights(const std::vector<std::size_t>& winners, std::size_t heads, int epoch,
                          const LossConfig& cfg);

/// Winner per batch element from evaluated masks / scores and targets.
std::vector<std::size_t> select_winners(const Tensor& masks, const Tensor& scores,
                                        const Tensor& targets, WinnerRule rule);

/// Score-loss targets per (sample, head) from evaluated masks.
Tensor score_targets(const Tensor& masks, const Tensor& targets, bool binarized);

}  // namespace ambiseg::objective

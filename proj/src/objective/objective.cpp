#include "ambiseg/objective.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ambiseg::objective {

using diff::Expr;

void LossConfig::validate() const {
  if (!(focusing > 0 && lambda_mask > 0 && lambda_score > 0 && lambda_reg > 0 && decay > 0)) {
    throw std::invalid_argument("loss constants must be positive");
  }
  if (!(clamp_eps > 0 && clamp_eps < 0.5)) throw std::invalid_argument("clamp_eps out of range");
}

namespace {

void require_pair(const Mask& m, const Mask& y) {
  if (!m.same_geometry(y) || m.channels() != 1) {
    throw std::invalid_argument("mask and target differ in geometry");
  }
}

Real binary_iou(const Mask& m, const Mask& y) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const bool a = m[i] >= 0.5, b = y[i] >= 0.5;
    inter += a && b;
    uni += a || b;
  }
  return uni == 0 ? 1.0 : static_cast<Real>(inter) / static_cast<Real>(uni);
}

}  // namespace

Mask clamp_mask(const Mask& m, Real eps) {
  Mask out = m;
  for (auto& v : out.storage()) v = std::clamp(v, eps, 1.0 - eps);
  return out;
}

Real soft_iou(const Mask& m, const Mask& y) {
  require_pair(m, y);
  Real inter = 0, uni = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    inter += m[i] * y[i];
    uni += m[i] + y[i] - m[i] * y[i];
  }
  // two empty masks agree vacuously
  if (uni == 0) return 1.0;
  return inter / uni;
}

Real focal_loss(const Mask& m, const Mask& y, const LossConfig& cfg) {
  require_pair(m, y);
  const Real lo = cfg.clamp_eps, hi = 1.0 - cfg.clamp_eps;
  Real total = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const Real p = m[i];
    if (!(p >= 0 && p <= 1)) throw std::domain_error("focal_loss: mask value outside [0,1]");
    // only the log arguments are clamped
    const Real q = std::clamp(p, lo, hi);
    if (y[i] != 0) total -= std::pow(1 - p, cfg.focusing) * y[i] * std::log(q);
    if (cfg.focal == FocalVariant::Symmetric && y[i] != 1) {
      total -= std::pow(p, cfg.focusing) * (1 - y[i]) * std::log(1 - q);
    }
  }
  if (cfg.normalize_focal) total /= static_cast<Real>(m.size());
  return total;
}

Real iou_loss(const Mask& m, const Mask& y) { return 1.0 - soft_iou(m, y); }

Real mask_loss(const Mask& m, const Mask& y, const LossConfig& cfg) {
  return cfg.lambda_mask * focal_loss(m, y, cfg) + iou_loss(m, y);
}

Real score_loss(Real score, const Mask& m, const Mask& y, const LossConfig& cfg) {
  const Real target = cfg.binarized_score_target ? binary_iou(m, y) : soft_iou(m, y);
  return (score - target) * (score - target);
}

Real regularizer_weight(int epoch, const LossConfig& cfg) {
  if (epoch < 0) throw std::invalid_argument("epoch index must be non-negative");
  return cfg.lambda_reg * std::exp(-cfg.decay * static_cast<Real>(epoch));
}

std::size_t select_winner(const MultiMaskOutput& out, const Mask& y, WinnerRule rule) {
  if (out.masks.empty()) throw std::invalid_argument("select_winner: no heads");
  if (rule == WinnerRule::ArgmaxPredictedScore) return out.best_scored();
  std::size_t best = 0;
  Real best_iou = soft_iou(out.masks[0], y);
  for (std::size_t i = 1; i < out.masks.size(); ++i) {
    const Real v = soft_iou(out.masks[i], y);
    const bool better = rule == WinnerRule::ArgmaxIoU ? v > best_iou : v < best_iou;
    if (better) {
      best = i;
      best_iou = v;
    }
  }
  return best;
}

ObjectiveBreakdown total_objective(const MultiMaskOutput& out, const Mask& y, int epoch,
                                   const LossConfig& cfg) {
  if (out.masks.empty() || out.scores.size() != out.masks.size()) {
    throw std::invalid_argument("total_objective: malformed multi-mask output");
  }
  ObjectiveBreakdown r;
  r.winner = select_winner(out, y, cfg.winner);
  const Real reg_w = regularizer_weight(epoch, cfg);
  Real score_sum = 0, reg_sum = 0;
  for (std::size_t i = 0; i < out.masks.size(); ++i) {
    r.mask_losses.push_back(mask_loss(out.masks[i], y, cfg));
    r.score_losses.push_back(score_loss(out.scores[i], out.masks[i], y, cfg));
    score_sum += cfg.lambda_score * r.score_losses.back();
    if (cfg.regularizer_includes_winner || i != r.winner) reg_sum += r.mask_losses.back();
  }
  r.regularizer = reg_w * reg_sum;
  r.total = r.mask_losses[r.winner] + score_sum + r.regularizer;
  return r;
}

// ---- graph form ------------------------------------------------------------

BatchObjective build_batch_objective(const Expr& masks, const Expr& scores,
                                     const LossConfig& cfg) {
  const Shape& s = masks.shape();
  if (s.rank() != 4) throw diff::ShapeError("batch objective: masks must be rank 4");
  const Shape per_head{s[0], s[1], 1, 1};
  Expr y = diff::variable(kTargetVar, s);
  Expr assign = diff::variable(kAssignVar, per_head);

  Expr safe = diff::clamp(masks, cfg.clamp_eps, 1.0 - cfg.clamp_eps);
  Expr focal = -diff::spatial_sum(diff::pow(1.0 - masks, cfg.focusing) * y *
                                  diff::log(safe).labelled("focal log(m)"));
  if (cfg.focal == FocalVariant::Symmetric) {
    focal = focal - diff::spatial_sum(diff::pow(masks, cfg.focusing) * (1.0 - y) *
                                      diff::log(1.0 - safe).labelled("focal log(1-m)"));
  }
  if (cfg.normalize_focal) focal = focal * (1.0 / static_cast<Real>(s[2] * s[3]));

  Expr inter = diff::spatial_sum(masks * y);
  Expr uni = diff::spatial_sum(masks + y - masks * y);
  Expr iou = inter * diff::pow(uni, -1.0);
  Expr mloss = cfg.lambda_mask * focal + (1.0 - iou);

  BatchObjective out;
  out.mask_loss = mloss;
  out.soft_iou = iou;
  Expr per_sample = assign * mloss;
  if (scores.valid()) {
    if (!(scores.shape() == per_head)) {
      throw diff::ShapeError("batch objective: scores must be " + per_head.str());
    }
    Expr target = cfg.detach_score_target ? diff::variable(kScoreTargetVar, per_head) : iou;
    out.score_loss = diff::pow(scores - target, 2.0);
    per_sample = per_sample + cfg.lambda_score * out.score_loss;
  }
  out.total = diff::sum(per_sample) * (1.0 / static_cast<Real>(s[0]));
  return out;
}

Tensor assignment_weights(const std::vector<std::size_t>& winners, std::size_t heads, int epoch,
                          const LossConfig& cfg) {
  const Real reg = regularizer_weight(epoch, cfg);
  Tensor a(Shape{winners.size(), heads, 1, 1});
  for (std::size_t b = 0; b < winners.size(); ++b) {
    for (std::size_t i = 0; i < heads; ++i) {
      Real w = i == winners[b] ? 1.0 : 0.0;
      if (cfg.regularizer_includes_winner || i != winners[b]) w += reg;
      a[b * heads + i] = w;
    }
  }
  return a;
}

namespace {

MultiMaskOutput sample_output(const Tensor& masks, const Tensor& scores, std::size_t b) {
  MultiMaskOutput o;
  const std::size_t n = masks.shape()[1];
  for (std::size_t i = 0; i < n; ++i) {
    o.masks.push_back(plane_of(masks, b, i));
    o.scores.push_back(scores.empty() ? 0.0 : scores[b * n + i]);
  }
  return o;
}

}  // namespace

std::vector<std::size_t> select_winners(const Tensor& masks, const Tensor& scores,
                                        const Tensor& targets, WinnerRule rule) {
  std::vector<std::size_t> winners;
  for (std::size_t b = 0; b < masks.shape()[0]; ++b) {
    winners.push_back(select_winner(sample_output(masks, scores, b), plane_of(targets, b, 0), rule));
  }
  return winners;
}

Tensor score_targets(const Tensor& masks, const Tensor& targets, bool binarized) {
  const std::size_t B = masks.shape()[0], n = masks.shape()[1];
  Tensor t(Shape{B, n, 1, 1});
  for (std::size_t b = 0; b < B; ++b) {
    const Mask y = plane_of(targets, b, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const Mask m = plane_of(masks, b, i);
      t[b * n + i] = binarized ? binary_iou(m, y) : soft_iou(m, y);
    }
  }
  return t;
}

}  // namespace ambiseg::objective

#include "ambiseg/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "json.hpp"

namespace ambiseg::metrics {

namespace {

void require_pair(const Mask& pred, const Mask& gt) {
  if (!pred.same_geometry(gt) || pred.channels() != 1) {
    throw std::invalid_argument("prediction and ground truth differ in geometry");
  }
  if (pred.size() == 0) throw std::invalid_argument("empty mask");
}

// Largest k in [0, 255] with k/255 <= p, or -1 when p < 0.
int highest_threshold(Real p) {
  int k = static_cast<int>(std::floor(p * 255.0));
  k = std::clamp(k, -1, 255);
  while (k < 255 && static_cast<Real>(k + 1) / 255.0 <= p) ++k;
  while (k >= 0 && static_cast<Real>(k) / 255.0 > p) --k;
  return k;
}

// Per-threshold counts of predicted-positive pixels inside / outside gt.
struct ThresholdCounts {
  std::array<std::size_t, kThresholds> fg{}, bg{};
  std::size_t gt_fg = 0, total = 0;
};

ThresholdCounts threshold_counts(const Mask& pred, const Mask& gt) {
  ThresholdCounts c;
  std::array<std::size_t, kThresholds + 1> hf{}, hb{};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int k = highest_threshold(pred[i]);
    const bool fg = gt[i] >= 0.5;
    c.gt_fg += fg;
    if (k < 0) continue;
    (fg ? hf : hb)[static_cast<std::size_t>(k)]++;
  }
  // pixel passing threshold k passes every lower threshold too
  std::size_t af = 0, ab = 0;
  for (int k = kThresholds - 1; k >= 0; --k) {
    af += hf[static_cast<std::size_t>(k)];
    ab += hb[static_cast<std::size_t>(k)];
    c.fg[static_cast<std::size_t>(k)] = af;
    c.bg[static_cast<std::size_t>(k)] = ab;
  }
  c.total = pred.size();
  return c;
}

Real object_score(const std::vector<Real>& x) {
  if (x.empty()) return 0;
  Real m = 0;
  for (Real v : x) m += v;
  m /= static_cast<Real>(x.size());
  Real var = 0;
  for (Real v : x) var += (v - m) * (v - m);
  const Real sd = x.size() > 1 ? std::sqrt(var / static_cast<Real>(x.size() - 1)) : 0.0;
  return 2.0 * m / (m * m + 1.0 + sd + kEps);
}

Real region_ssim(const Mask& pred, const Mask& gt, std::size_t y0, std::size_t y1, std::size_t x0,
                 std::size_t x1) {
  const auto n = static_cast<Real>((y1 - y0) * (x1 - x0));
  Real mx = 0, my = 0;
  for (std::size_t r = y0; r < y1; ++r)
    for (std::size_t c = x0; c < x1; ++c) {
      mx += pred(r, c);
      my += gt(r, c);
    }
  mx /= n;
  my /= n;
  Real vx = 0, vy = 0, cxy = 0;
  for (std::size_t r = y0; r < y1; ++r)
    for (std::size_t c = x0; c < x1; ++c) {
      const Real dx = pred(r, c) - mx, dy = gt(r, c) - my;
      vx += dx * dx;
      vy += dy * dy;
      cxy += dx * dy;
    }
  vx /= (n - 1 + kEps);
  vy /= (n - 1 + kEps);
  cxy /= (n - 1 + kEps);
  const Real num = 4 * mx * my * cxy;
  const Real den = (mx * mx + my * my) * (vx + vy);
  if (num != 0) return num / (den + kEps);
  return den == 0 ? 1.0 : 0.0;
}

Real region_score(const Mask& pred, const Mask& gt) {
  const std::size_t h = gt.height(), w = gt.width();
  Real sy = 0, sx = 0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      if (gt(r, c) >= 0.5) {
        sy += static_cast<Real>(r);
        sx += static_cast<Real>(c);
        ++count;
      }
  // split row / column: one past the rounded foreground centroid
  const auto cy = static_cast<std::size_t>(std::nearbyint(sy / static_cast<Real>(count))) + 1;
  const auto cx = static_cast<std::size_t>(std::nearbyint(sx / static_cast<Real>(count))) + 1;
  const Real area = static_cast<Real>(h * w);
  const std::array<std::array<std::size_t, 4>, 4> quads{{
      {0, cy, 0, cx}, {0, cy, cx, w}, {cy, h, 0, cx}, {cy, h, cx, w}}};
  Real total = 0;
  for (const auto& q : quads) {
    if (q[1] <= q[0] || q[3] <= q[2]) continue;
    const Real weight = static_cast<Real>((q[1] - q[0]) * (q[3] - q[2])) / area;
    total += weight * region_ssim(pred, gt, q[0], q[1], q[2], q[3]);
  }
  return total;
}

}  // namespace

Real mae(const Mask& pred, const Mask& gt) {
  require_pair(pred, gt);
  Real acc = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred[i] - gt[i]);
  return acc / static_cast<Real>(pred.size());
}

std::vector<Real> f_measure_curve(const Mask& pred, const Mask& gt) {
  require_pair(pred, gt);
  const auto c = threshold_counts(pred, gt);
  std::vector<Real> f(kThresholds, 0.0);
  for (std::size_t k = 0; k < static_cast<std::size_t>(kThresholds); ++k) {
    const std::size_t tp = c.fg[k], positives = c.fg[k] + c.bg[k];
    const Real p = positives == 0 ? 0.0 : static_cast<Real>(tp) / static_cast<Real>(positives);
    const Real r = c.gt_fg == 0 ? 0.0 : static_cast<Real>(tp) / static_cast<Real>(c.gt_fg);
    const Real den = kBetaSquared * p + r;
    f[k] = den == 0 ? 0.0 : (1 + kBetaSquared) * p * r / den;
  }
  return f;
}

Real f_measure_max(const Mask& pred, const Mask& gt) {
  const auto f = f_measure_curve(pred, gt);
  return *std::max_element(f.begin(), f.end());
}

Real s_measure(const Mask& pred, const Mask& gt, Real alpha) {
  require_pair(pred, gt);
  const Real mu = static_cast<Real>(count_nonzero(binarize(gt))) / static_cast<Real>(gt.size());
  if (mu == 0) return std::clamp(1.0 - pred.mean(), 0.0, 1.0);
  if (mu == 1) return std::clamp(pred.mean(), 0.0, 1.0);
  std::vector<Real> fg, bg;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (gt[i] >= 0.5) {
      fg.push_back(pred[i]);
    } else {
      bg.push_back(1.0 - pred[i]);
    }
  }
  const Real so = mu * object_score(fg) + (1 - mu) * object_score(bg);
  const Real sr = region_score(pred, gt);
  return std::clamp(alpha * so + (1 - alpha) * sr, 0.0, 1.0);
}

namespace {

// Enhanced alignment from the four (gt, bin) pixel classes; the bias-removed
// fields take only two values each, so the per-pixel map has four values.
Real e_score(std::size_t n11, std::size_t n10, std::size_t n01, std::size_t n00) {
  const Real total = static_cast<Real>(n11 + n10 + n01 + n00);
  const Real mg = static_cast<Real>(n11 + n10) / total;  // gt foreground fraction
  const Real mb = static_cast<Real>(n11 + n01) / total;  // prediction foreground fraction
  if (mg == 0) return 1.0 - mb;
  if (mg == 1) return mb;
  auto enhanced = [](Real g, Real p) {
    const Real xi = 2 * g * p / (g * g + p * p + kEps);
    return (xi + 1) * (xi + 1) / 4;
  };
  const Real s = static_cast<Real>(n11) * enhanced(1 - mg, 1 - mb) +
                 static_cast<Real>(n10) * enhanced(1 - mg, -mb) +
                 static_cast<Real>(n01) * enhanced(-mg, 1 - mb) +
                 static_cast<Real>(n00) * enhanced(-mg, -mb);
  return s / total;
}

}  // namespace

Real e_measure_binary(const Mask& bin, const Mask& gt) {
  require_pair(bin, gt);
  std::size_t n11 = 0, n10 = 0, n01 = 0, n00 = 0;
  for (std::size_t i = 0; i < bin.size(); ++i) {
    const bool g = gt[i] >= 0.5, p = bin[i] >= 0.5;
    n11 += g && p;
    n10 += g && !p;
    n01 += !g && p;
    n00 += !g && !p;
  }
  return e_score(n11, n10, n01, n00);
}

Real e_measure(const Mask& pred, const Mask& gt, EMeasureMode mode) {
  require_pair(pred, gt);
  if (mode == EMeasureMode::Adaptive) {
    const Real thr = std::min(2.0 * pred.mean(), 1.0);
    return e_measure_binary(binarize(pred, thr), gt);
  }
  const auto c = threshold_counts(pred, gt);
  const std::size_t gfg = c.gt_fg, gbg = c.total - c.gt_fg;
  Real acc = 0, best = 0;
  for (std::size_t k = 0; k < static_cast<std::size_t>(kThresholds); ++k) {
    const Real s = e_score(c.fg[k], gfg - c.fg[k], c.bg[k], gbg - c.bg[k]);
    acc += s;
    best = std::max(best, s);
  }
  return mode == EMeasureMode::MaxOverThresholds ? best : acc / kThresholds;
}

Real iou_binary(const Mask& pred, const Mask& gt, Real threshold) {
  require_pair(pred, gt);
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool a = pred[i] >= threshold, b = gt[i] >= 0.5;
    inter += a && b;
    uni += a || b;
  }
  return uni == 0 ? 1.0 : static_cast<Real>(inter) / static_cast<Real>(uni);
}

const char* to_string(SelectionMode m) {
  return m == SelectionMode::Selected ? "selected" : "oracle_best";
}

SelectionMode selection_mode_from_string(const std::string& s) {
  if (s == "selected") return SelectionMode::Selected;
  if (s == "oracle_best") return SelectionMode::OracleBest;
  throw std::invalid_argument("unknown selection mode '" + s + "' (expected selected|oracle_best)");
}

std::size_t choose_head(const MultiMaskOutput& out, const Mask& gt, SelectionMode mode) {
  if (out.masks.empty()) throw std::invalid_argument("prediction has no heads");
  if (mode == SelectionMode::Selected) return out.best_scored();
  std::size_t best = 0;
  Real best_iou = iou_binary(out.masks[0], gt);
  for (std::size_t i = 1; i < out.masks.size(); ++i) {
    const Real v = iou_binary(out.masks[i], gt);
    if (v > best_iou) {
      best = i;
      best_iou = v;
    }
  }
  return best;
}

SampleRecord evaluate_sample(const Mask& pred, const Mask& gt) {
  SampleRecord r;
  r.f_max = f_measure_max(pred, gt);
  r.mae = mae(pred, gt);
  r.s_measure = s_measure(pred, gt);
  r.e_measure = e_measure(pred, gt);
  r.iou = iou_binary(pred, gt);
  return r;
}

MetricsReport evaluate_dataset(const std::vector<MultiMaskOutput>& predictions,
                               const std::vector<Mask>& ground_truths, SelectionMode mode,
                               std::string dataset, const std::vector<std::string>& ids) {
  if (predictions.size() != ground_truths.size()) {
    throw std::invalid_argument("evaluate_dataset: " + std::to_string(predictions.size()) +
                                " predictions for " + std::to_string(ground_truths.size()) +
                                " ground truths");
  }
  if (!ids.empty() && ids.size() != predictions.size()) {
    throw std::invalid_argument("evaluate_dataset: id list length mismatch");
  }
  MetricsReport rep;
  rep.dataset = std::move(dataset);
  rep.mode = mode;
  rep.n = predictions.size();
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const std::size_t head = choose_head(predictions[i], ground_truths[i], mode);
    SampleRecord r = evaluate_sample(predictions[i].masks[head], ground_truths[i]);
    r.head = head;
    r.id = ids.empty() ? std::to_string(i) : ids[i];
    rep.samples.push_back(std::move(r));
  }
  // fixed-order summation
  for (const auto& r : rep.samples) {
    rep.f_max += r.f_max;
    rep.mae += r.mae;
    rep.s_measure += r.s_measure;
    rep.e_measure += r.e_measure;
    rep.iou += r.iou;
  }
  if (rep.n > 0) {
    const Real n = static_cast<Real>(rep.n);
    rep.f_max /= n;
    rep.mae /= n;
    rep.s_measure /= n;
    rep.e_measure /= n;
    rep.iou /= n;
  }
  return rep;
}

std::string to_json(const MetricsReport& r, bool with_samples) {
  nlohmann::ordered_json j;
  j["dataset"] = r.dataset;
  j["n"] = r.n;
  j["f_max"] = r.f_max;
  j["s_measure"] = r.s_measure;
  j["e_measure"] = r.e_measure;
  j["mae"] = r.mae;
  j["iou"] = r.iou;
  j["mode"] = to_string(r.mode);
  if (with_samples) {
    auto& arr = j["samples"] = nlohmann::ordered_json::array();
    for (const auto& s : r.samples) {
      arr.push_back({{"id", s.id}, {"head", s.head}, {"f_max", s.f_max},
                     {"s_measure", s.s_measure}, {"e_measure", s.e_measure}, {"mae", s.mae},
                     {"iou", s.iou}});
    }
  }
  return j.dump(2);
}

std::string csv_header() { return "dataset,n,f_max,s_measure,e_measure,mae,iou,mode"; }

std::string to_csv_row(const MetricsReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, ",%zu,%.10f,%.10f,%.10f,%.10f,%.10f,", r.n, r.f_max,
                r.s_measure, r.e_measure, r.mae, r.iou);
  return r.dataset + buf + to_string(r.mode);
}

}  // namespace ambiseg::metrics

#include <algorithm>
#include <cmath>
#include <random>

#include "ambiseg/metrics.hpp"
#include "doctest.h"
#include "naive_metrics.hpp"

using namespace ambiseg;
using namespace ambiseg::metrics;

namespace {

Mask left_half(std::size_t n) {
  Mask y = Mask::mask(n, n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n / 2; ++c) y(r, c) = 1;
  return y;
}

Mask blob_gt(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double cy = u(rng) * n, cx = u(rng) * n, r = 2 + u(rng) * n / 3;
  Mask m = Mask::mask(n, n);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x)
      m(y, x) = std::hypot(y - cy, x - cx) < r ? 1.0 : 0.0;
  return m;
}

// Mix of noisy-gt, uniform, and 8-bit quantized predictions so thresholds
// land exactly on pixel values.
Mask random_pred(std::mt19937_64& rng, const Mask& gt, int kind) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Mask p = gt;
  for (auto& v : p.storage()) {
    switch (kind % 3) {
      case 0: v = std::clamp(0.7 * v + 0.3 * u(rng), 0.0, 1.0); break;
      case 1: v = u(rng); break;
      default: v = std::floor(u(rng) * 256.0) / 255.0; v = std::min(v, 1.0);
    }
  }
  return p;
}

}  // namespace

TEST_CASE("closed-form values") {
  const Mask y = left_half(32);
  CHECK(mae(y, y) == 0.0);
  CHECK(mae(invert(y), y) == 1.0);
  CHECK(f_measure_max(y, y) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(f_measure_max(Mask::mask(32, 32, 0.5), y) - 1.3 * 0.5 / 1.15) < 1e-9);
  CHECK(std::abs(f_measure_max(Mask::mask(32, 32, 0.5), y) - 0.565217391304) < 1e-9);
  CHECK(s_measure(y, y) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(s_measure(Mask::mask(8, 8, 0.25), Mask::mask(8, 8)) == doctest::Approx(0.75));
  CHECK(e_measure(Mask::mask(8, 8, 1.0), Mask::mask(8, 8, 1.0)) == 1.0);
  CHECK(e_measure_binary(invert(y), y) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(e_measure_binary(y, y) == doctest::Approx(1.0).epsilon(1e-6));
  // threshold 0 marks every pixel foreground, which scores 0.25
  CHECK(e_measure(y, y) == doctest::Approx((255.0 + 0.25) / 256.0).epsilon(1e-6));
  CHECK(iou_binary(y, y) == 1.0);
  CHECK(iou_binary(invert(y), y) == 0.0);
  CHECK(iou_binary(Mask::mask(4, 4), Mask::mask(4, 4)) == 1.0);
}

TEST_CASE("empty conventions") {
  const Mask empty = Mask::mask(16, 16);
  CHECK(f_measure_max(empty, empty) == 0.0);
  CHECK(f_measure_max(empty, left_half(16)) > 0.0);  // threshold 0 selects everything
  CHECK(e_measure(Mask::mask(16, 16, 0.3), empty) ==
        doctest::Approx(naive::e_measure(Mask::mask(16, 16, 0.3), empty)).epsilon(1e-12));
}

TEST_CASE("fast metrics agree with naive oracle on 200 random pairs") {
  std::mt19937_64 rng(2024);
  double worst = 0;
  for (int i = 0; i < 200; ++i) {
    const Mask gt = blob_gt(rng, 32);
    const Mask p = random_pred(rng, gt, i);
    const double diffs[] = {
        std::abs(mae(p, gt) - naive::mae(p, gt)),
        std::abs(f_measure_max(p, gt) - naive::f_measure_max(p, gt)),
        std::abs(s_measure(p, gt) - naive::s_measure(p, gt)),
        std::abs(e_measure(p, gt) - naive::e_measure(p, gt)),
        std::abs(iou_binary(p, gt) - naive::iou_binary(p, gt)),
    };
    for (double d : diffs) worst = std::max(worst, d);
  }
  CHECK(worst <= 1e-9);
}

TEST_CASE("range and symmetry properties") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 60; ++i) {
    const Mask gt = blob_gt(rng, 24);
    const Mask p = random_pred(rng, gt, i);
    for (double v : {mae(p, gt), f_measure_max(p, gt), s_measure(p, gt), e_measure(p, gt),
                     iou_binary(p, gt), e_measure(p, gt, EMeasureMode::MaxOverThresholds),
                     e_measure(p, gt, EMeasureMode::Adaptive)}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    CHECK(mae(p, gt) == doctest::Approx(mae(invert(p), invert(gt))).epsilon(1e-12));
    CHECK(e_measure(p, gt, EMeasureMode::MaxOverThresholds) >= e_measure(p, gt));
  }
}

TEST_CASE("f_measure_max invariant to remaps preserving threshold membership") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 30; ++i) {
    const Mask gt = blob_gt(rng, 32);
    const Mask p = random_pred(rng, gt, i);
    Mask q = p;
    // move each value anywhere inside its threshold bin [k/255, (k+1)/255)
    for (auto& v : q.storage()) {
      int k = static_cast<int>(std::floor(v * 255.0));
      while (k < 255 && (k + 1) / 255.0 <= v) ++k;
      while (k > 0 && k / 255.0 > v) --k;
      if (k >= 255) continue;
      const double lo = k / 255.0, hi = (k + 1) / 255.0;
      double w = lo + (hi - lo) * u(rng) * 0.999;
      if (w < lo) w = lo;
      v = w;
    }
    CHECK(f_measure_max(q, gt) == doctest::Approx(f_measure_max(p, gt)).epsilon(1e-12));
  }
}

TEST_CASE("evaluate_dataset") {
  std::mt19937_64 rng(5);
  const Mask gt = left_half(16);

  SUBCASE("single perfect sample") {
    MultiMaskOutput o{{gt}, {0.9}};
    const auto r = evaluate_dataset({o}, {gt}, SelectionMode::Selected);
    CHECK(r.iou == 1.0);
    CHECK(r.mae == 0.0);
    CHECK(r.f_max == doctest::Approx(1.0));
    CHECK(r.s_measure == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(r.e_measure == doctest::Approx((255.0 + 0.25) / 256.0).epsilon(1e-6));
  }
  SUBCASE("oracle picks the branch equal to gt") {
    MultiMaskOutput o{{invert(gt), gt, Mask::mask(16, 16, 0.3)}, {0.9, 0.1, 0.5}};
    CHECK(evaluate_dataset({o}, {gt}, SelectionMode::OracleBest).iou == 1.0);
    CHECK(evaluate_dataset({o}, {gt}, SelectionMode::Selected).iou == 0.0);
  }
  SUBCASE("aggregate is the mean of independent per-sample values") {
    std::vector<MultiMaskOutput> preds;
    std::vector<Mask> gts;
    std::uniform_real_distribution<double> u(0, 1);
    for (int i = 0; i < 10; ++i) {
      gts.push_back(blob_gt(rng, 16));
      MultiMaskOutput o;
      for (int h = 0; h < 3; ++h) {
        o.masks.push_back(random_pred(rng, gts.back(), h));
        o.scores.push_back(u(rng));
      }
      preds.push_back(o);
    }
    for (auto mode : {SelectionMode::Selected, SelectionMode::OracleBest}) {
      const auto r = evaluate_dataset(preds, gts, mode);
      double f = 0, m = 0, s = 0, e = 0, iou = 0;
      for (std::size_t i = 0; i < preds.size(); ++i) {
        std::size_t h = 0;
        if (mode == SelectionMode::Selected) {
          h = std::max_element(preds[i].scores.begin(), preds[i].scores.end()) -
              preds[i].scores.begin();
        } else {
          double best = -1;
          for (std::size_t k = 0; k < 3; ++k) {
            const double v = naive::iou_binary(preds[i].masks[k], gts[i]);
            if (v > best) {
              best = v;
              h = k;
            }
          }
        }
        f += naive::f_measure_max(preds[i].masks[h], gts[i]);
        m += naive::mae(preds[i].masks[h], gts[i]);
        s += naive::s_measure(preds[i].masks[h], gts[i]);
        e += naive::e_measure(preds[i].masks[h], gts[i]);
        iou += naive::iou_binary(preds[i].masks[h], gts[i]);
      }
      CHECK(r.n == 10);
      CHECK(r.f_max == doctest::Approx(f / 10).epsilon(1e-10));
      CHECK(r.mae == doctest::Approx(m / 10).epsilon(1e-10));
      CHECK(r.s_measure == doctest::Approx(s / 10).epsilon(1e-10));
      CHECK(r.e_measure == doctest::Approx(e / 10).epsilon(1e-10));
      CHECK(r.iou == doctest::Approx(iou / 10).epsilon(1e-10));
    }
    const auto sel = evaluate_dataset(preds, gts, SelectionMode::Selected);
    const auto orc = evaluate_dataset(preds, gts, SelectionMode::OracleBest);
    for (std::size_t i = 0; i < preds.size(); ++i) {
      double lo = 1;
      for (const auto& m : preds[i].masks) lo = std::min(lo, iou_binary(m, gts[i]));
      CHECK(orc.samples[i].iou >= sel.samples[i].iou);
      CHECK(sel.samples[i].iou >= lo);
    }
  }
  SUBCASE("mismatched lengths") {
    CHECK_THROWS_AS(evaluate_dataset({}, {gt}, SelectionMode::Selected), std::invalid_argument);
  }
}

TEST_CASE("report emission") {
  MetricsReport r;
  r.dataset = "demo";
  r.n = 2;
  r.iou = 0.5;
  r.mode = SelectionMode::OracleBest;
  CHECK(csv_header() == "dataset,n,f_max,s_measure,e_measure,mae,iou,mode");
  CHECK(to_csv_row(r).rfind("demo,2,", 0) == 0);
  CHECK(to_csv_row(r).find(",oracle_best") != std::string::npos);
  const std::string j = to_json(r);
  CHECK(j.find("\"dataset\"") < j.find("\"n\""));
  CHECK(j.find("\"iou\"") < j.find("\"mode\""));
  CHECK(selection_mode_from_string("selected") == SelectionMode::Selected);
  CHECK_THROWS(selection_mode_from_string("best"));
}

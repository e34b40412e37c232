#include "naive_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace ambiseg::naive {

namespace {

using Grid = std::vector<std::vector<double>>;

const double kEps = 1e-8;

Grid grid(const Mask& m) {
  Grid g(m.height(), std::vector<double>(m.width()));
  for (std::size_t y = 0; y < m.height(); ++y)
    for (std::size_t x = 0; x < m.width(); ++x) g[y][x] = m(y, x);
  return g;
}

Grid threshold_grid(const Grid& p, double t) {
  Grid b = p;
  for (auto& row : b)
    for (auto& v : row) v = v >= t ? 1.0 : 0.0;
  return b;
}

double grid_mean(const Grid& g) {
  double s = 0;
  std::size_t n = 0;
  for (const auto& row : g)
    for (double v : row) {
      s += v;
      ++n;
    }
  return s / static_cast<double>(n);
}

double o_term(const std::vector<double>& xs) {
  double m = 0;
  for (double v : xs) m += v;
  m /= static_cast<double>(xs.size());
  double ss = 0;
  for (double v : xs) ss += (v - m) * (v - m);
  double sd = 0;
  if (xs.size() > 1) sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  return 2.0 * m / (m * m + 1.0 + sd + kEps);
}

double ssim_block(const Grid& p, const Grid& g, std::size_t r0, std::size_t r1, std::size_t c0,
                  std::size_t c1) {
  std::vector<double> a, b;
  for (std::size_t r = r0; r < r1; ++r)
    for (std::size_t c = c0; c < c1; ++c) {
      a.push_back(p[r][c]);
      b.push_back(g[r][c]);
    }
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double va = 0, vb = 0, cov = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
    cov += (a[i] - ma) * (b[i] - mb);
  }
  va /= n - 1 + kEps;
  vb /= n - 1 + kEps;
  cov /= n - 1 + kEps;
  const double top = 4 * ma * mb * cov;
  const double bottom = (ma * ma + mb * mb) * (va + vb);
  if (top != 0) return top / (bottom + kEps);
  if (bottom == 0) return 1.0;
  return 0.0;
}

}  // namespace

Real mae(const Mask& pred, const Mask& gt) {
  const Grid p = grid(pred), g = grid(gt);
  double s = 0;
  for (std::size_t y = 0; y < p.size(); ++y)
    for (std::size_t x = 0; x < p[y].size(); ++x) s += std::fabs(p[y][x] - g[y][x]);
  return s / static_cast<double>(p.size() * p[0].size());
}

Real f_measure_max(const Mask& pred, const Mask& gt) {
  const Grid p = grid(pred), g = grid(gt);
  double best = 0;
  for (int k = 0; k < 256; ++k) {
    const Grid b = threshold_grid(p, k / 255.0);
    double tp = 0, pp = 0, gp = 0;
    for (std::size_t y = 0; y < p.size(); ++y)
      for (std::size_t x = 0; x < p[y].size(); ++x) {
        const bool gf = g[y][x] >= 0.5;
        tp += (b[y][x] == 1.0 && gf) ? 1 : 0;
        pp += b[y][x];
        gp += gf ? 1 : 0;
      }
    const double prec = pp > 0 ? tp / pp : 0.0;
    const double rec = gp > 0 ? tp / gp : 0.0;
    double f = 0;
    if (0.3 * prec + rec > 0) f = 1.3 * prec * rec / (0.3 * prec + rec);
    best = std::max(best, f);
  }
  return best;
}

Real s_measure(const Mask& pred, const Mask& gt) {
  const Grid p = grid(pred), g0 = grid(gt);
  const Grid g = threshold_grid(g0, 0.5);
  const std::size_t h = p.size(), w = p[0].size();
  const double mu = grid_mean(g);
  double s;
  if (mu == 0.0) {
    s = 1.0 - grid_mean(p);
  } else if (mu == 1.0) {
    s = grid_mean(p);
  } else {
    std::vector<double> fg, bg;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        if (g[y][x] == 1.0) fg.push_back(p[y][x]);
        else bg.push_back(1.0 - p[y][x]);
      }
    const double so = mu * o_term(fg) + (1 - mu) * o_term(bg);

    double ry = 0, rx = 0, cnt = 0;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        if (g[y][x] == 1.0) {
          ry += static_cast<double>(y);
          rx += static_cast<double>(x);
          cnt += 1;
        }
    const std::size_t cy = static_cast<std::size_t>(std::nearbyint(ry / cnt)) + 1;
    const std::size_t cx = static_cast<std::size_t>(std::nearbyint(rx / cnt)) + 1;
    const double area = static_cast<double>(h * w);
    double sr = 0;
    if (cy > 0 && cx > 0) sr += (cy * cx / area) * ssim_block(p, g, 0, cy, 0, cx);
    if (cy > 0 && cx < w) sr += (cy * (w - cx) / area) * ssim_block(p, g, 0, cy, cx, w);
    if (cy < h && cx > 0) sr += ((h - cy) * cx / area) * ssim_block(p, g, cy, h, 0, cx);
    if (cy < h && cx < w) sr += ((h - cy) * (w - cx) / area) * ssim_block(p, g, cy, h, cx, w);
    s = 0.5 * so + 0.5 * sr;
  }
  return std::min(1.0, std::max(0.0, s));
}

Real e_measure(const Mask& pred, const Mask& gt) {
  const Grid p = grid(pred);
  const Grid g = threshold_grid(grid(gt), 0.5);
  const double mg = grid_mean(g);
  double total = 0;
  for (int k = 0; k < 256; ++k) {
    const Grid b = threshold_grid(p, k / 255.0);
    const double mb = grid_mean(b);
    double score;
    if (mg == 0.0) {
      score = 1.0 - mb;
    } else if (mg == 1.0) {
      score = mb;
    } else {
      double acc = 0;
      for (std::size_t y = 0; y < p.size(); ++y)
        for (std::size_t x = 0; x < p[y].size(); ++x) {
          const double a = g[y][x] - mg, c = b[y][x] - mb;
          const double xi = 2 * a * c / (a * a + c * c + kEps);
          acc += (xi + 1) * (xi + 1) / 4;
        }
      score = acc / static_cast<double>(p.size() * p[0].size());
    }
    total += score;
  }
  return total / 256.0;
}

Real iou_binary(const Mask& pred, const Mask& gt, Real threshold) {
  double i = 0, u = 0;
  for (std::size_t y = 0; y < pred.height(); ++y)
    for (std::size_t x = 0; x < pred.width(); ++x) {
      const bool a = pred(y, x) >= threshold, b = gt(y, x) >= 0.5;
      if (a && b) i += 1;
      if (a || b) u += 1;
    }
  return u == 0 ? 1.0 : i / u;
}

}  // namespace ambiseg::naive

#include <cmath>
#include <functional>
#include <random>

#include "ambiseg/gradcheck.hpp"
#include "ambiseg/shell.hpp"

namespace ambiseg::shell {
namespace {

using namespace ambiseg::diff;
using Gen = std::mt19937_64;

constexpr Real kPrimitiveTol = 1e-5;
constexpr Real kModelTol = 1e-4;

Tensor random_tensor(Gen& rng, Shape shape, Real lo = -1.0, Real hi = 1.0) {
  std::uniform_real_distribution<Real> u(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = u(rng);
  return t;
}

// No entry within the finite-difference step of a kink.
Tensor away_from(Gen& rng, Shape shape, std::vector<Real> kinks) {
  Tensor t = random_tensor(rng, std::move(shape), -1.5, 1.5);
  for (auto& v : t.values())
    for (Real k : kinks)
      if (std::abs(v - k) < 1e-3) v = k + 0.01;
  return t;
}

// Scalar with a distinct random weight per output element.
Expr project(const Expr& e, Gen& rng) {
  if (e.shape().numel() == 1) return e * 1.7;
  return sum(e * constant(random_tensor(rng, e.shape())));
}

Real check(const Expr& root, const Bindings& b, const std::vector<std::string>& wrt, std::uint64_t seed) {
  GradCheckOptions opt;
  opt.max_entries = 40;
  opt.seed = seed;
  return check_gradient(root, b, wrt, opt).max_relative_error;
}

struct Case {
  const char* name;
  std::function<Real(Gen&, std::uint64_t)> body;
};

std::vector<Case> primitive_cases() {
  const Shape s{2, 3, 4, 5};
  std::vector<Case> c;
  c.push_back({"add/sub/mul", [s](Gen& rng, std::uint64_t k) {
                 auto a = variable("a", s), b = variable("b", s), x = variable("c", Shape{});
                 Expr e = project((a + b) * (a - b) * x + a * 0.3, rng);
                 Bindings bind{{"a", random_tensor(rng, s)}, {"b", random_tensor(rng, s)},
                               {"c", random_tensor(rng, Shape{})}};
                 return check(e, bind, {"a", "b", "c"}, k);
               }});
  c.push_back({"pow", [s](Gen& rng, std::uint64_t k) {
                 const Real exps[] = {2.0, -1.0, 0.5, 3.0};
                 auto a = variable("a", s);
                 Expr e = project(pow(a, exps[rng() % 4]), rng);
                 return check(e, {{"a", random_tensor(rng, s, 0.2, 2.0)}}, {"a"}, k);
               }});
  c.push_back({"log", [s](Gen& rng, std::uint64_t k) {
                 auto a = variable("a", s);
                 return check(project(log(a), rng), {{"a", random_tensor(rng, s, 0.1, 3.0)}}, {"a"}, k);
               }});
  c.push_back({"sigmoid", [s](Gen& rng, std::uint64_t k) {
                 auto a = variable("a", s);
                 return check(project(sigmoid(a * 3.0), rng), {{"a", random_tensor(rng, s)}}, {"a"}, k);
               }});
  c.push_back({"relu", [s](Gen& rng, std::uint64_t k) {
                 auto a = variable("a", s);
                 return check(project(relu(a), rng), {{"a", away_from(rng, s, {0.0})}}, {"a"}, k);
               }});
  c.push_back({"clamp", [s](Gen& rng, std::uint64_t k) {
                 auto a = variable("a", s);
                 return check(project(clamp(a, -0.5, 0.7), rng), {{"a", away_from(rng, s, {-0.5, 0.7})}}, {"a"}, k);
               }});
  c.push_back({"conv2d", [](Gen& rng, std::uint64_t k) {
                 const int mode = static_cast<int>(rng() % 3);
                 const std::size_t ks = mode == 2 ? 1 : 3;
                 auto x = variable("x", Shape{2, 3, 6, 5});
                 auto w = variable("w", Shape{4, 3, ks, ks});
                 auto b = variable("b", Shape{4});
                 Expr e = project(conv2d(x, w, b, mode == 1 ? 2 : 1), rng);
                 Bindings bind{{"x", random_tensor(rng, x.shape())},
                               {"w", random_tensor(rng, w.shape())},
                               {"b", random_tensor(rng, b.shape())}};
                 return check(e, bind, {"x", "w", "b"}, k);
               }});
  c.push_back({"resize_bilinear", [](Gen& rng, std::uint64_t k) {
                 std::uniform_int_distribution<std::size_t> dim(2, 9);
                 auto x = variable("x", Shape{1, 2, 4, 5});
                 const std::size_t h = dim(rng), w = dim(rng);
                 Expr e = project(resize_bilinear(x, h, w), rng);
                 return check(e, {{"x", random_tensor(rng, x.shape())}}, {"x"}, k);
               }});
  c.push_back({"concat/slice", [](Gen& rng, std::uint64_t k) {
                 auto a = variable("a", Shape{2, 2, 3, 3}), b = variable("b", Shape{2, 3, 3, 3});
                 Expr cat = concat_channels({a, b});
                 Expr e = project(cat, rng) + project(slice_channels(cat, 1, 4), rng);
                 Bindings bind{{"a", random_tensor(rng, a.shape())}, {"b", random_tensor(rng, b.shape())}};
                 return check(e, bind, {"a", "b"}, k);
               }});
  c.push_back({"reductions", [s](Gen& rng, std::uint64_t k) {
                 auto a = variable("a", s);
                 Expr e = project(global_mean_pool(a), rng) + project(spatial_sum(a), rng) + sum(a) * 0.3 +
                          mean(a) * 2.0;
                 return check(e, {{"a", random_tensor(rng, s)}}, {"a"}, k);
               }});
  c.push_back({"batch_norm/train", [s](Gen& rng, std::uint64_t k) {
                 auto x = variable("x", s), g = variable("g", Shape{3}), b = variable("b", Shape{3});
                 Expr e = project(batch_norm(x, g, b), rng);
                 Bindings bind{{"x", random_tensor(rng, s)}, {"g", random_tensor(rng, Shape{3})},
                               {"b", random_tensor(rng, Shape{3})}};
                 return check(e, bind, {"x", "g", "b"}, k);
               }});
  c.push_back({"batch_norm/eval", [s](Gen& rng, std::uint64_t k) {
                 auto x = variable("x", s), g = variable("g", Shape{3}), b = variable("b", Shape{3});
                 Expr rm = constant(random_tensor(rng, Shape{3}));
                 Expr rv = constant(random_tensor(rng, Shape{3}, 0.5, 2.0));
                 Expr e = project(batch_norm(x, g, b, rm, rv), rng);
                 Bindings bind{{"x", random_tensor(rng, s)}, {"g", random_tensor(rng, Shape{3})},
                               {"b", random_tensor(rng, Shape{3})}};
                 return check(e, bind, {"x", "g", "b"}, k);
               }});
  return c;
}

struct LossBatch {
  Expr masks, scores;
  Bindings bind;
};

LossBatch random_loss_batch(Gen& rng, int trial, objective::LossConfig& cfg) {
  const std::size_t B = 2, N = 3, H = 5, W = 4;
  cfg.detach_score_target = trial % 2 == 0;
  cfg.focal = trial % 3 == 0 ? objective::FocalVariant::PositiveOnly : objective::FocalVariant::Symmetric;
  LossBatch b;
  b.masks = variable("m", Shape{B, N, H, W});
  b.scores = variable("s", Shape{B, N, 1, 1});
  Tensor m(b.masks.shape()), s(b.scores.shape()), y(b.masks.shape());
  std::uniform_real_distribution<Real> u(0.05, 0.95);
  std::bernoulli_distribution bit(0.4);
  for (auto& v : m.values()) v = u(rng);
  for (auto& v : s.values()) v = u(rng);
  for (std::size_t bi = 0; bi < B; ++bi) {
    std::vector<Real> plane(H * W);
    for (auto& v : plane) v = bit(rng) ? 1.0 : 0.0;
    for (std::size_t i = 0; i < N; ++i) std::copy(plane.begin(), plane.end(), y.data() + (bi * N + i) * H * W);
  }
  const auto winners = objective::select_winners(m, s, y, cfg.winner);
  b.bind = {{"m", m}, {"s", s}, {objective::kTargetVar, y}};
  b.bind[objective::kAssignVar] = objective::assignment_weights(winners, N, trial % 4, cfg);
  b.bind[objective::kScoreTargetVar] = objective::score_targets(m, y, false);
  return b;
}

std::vector<Case> loss_cases() {
  using Part = std::function<Expr(const objective::BatchObjective&)>;
  auto make = [](const char* name, Part part, std::vector<std::string> wrt) {
    return Case{name, [part, wrt](Gen& rng, std::uint64_t k) {
                  objective::LossConfig cfg;
                  auto b = random_loss_batch(rng, static_cast<int>(k), cfg);
                  const auto obj = objective::build_batch_objective(b.masks, b.scores, cfg);
                  return check(part(obj), b.bind, wrt, k);
                }};
  };
  std::vector<Case> c;
  // mask loss = focal + (1 - soft IoU); the focal term is checked on its own
  c.push_back(make("focal_loss", [](const auto& o) { return sum(o.mask_loss) - sum(1.0 - o.soft_iou); }, {"m"}));
  c.push_back(make("iou_loss", [](const auto& o) { return sum(1.0 - o.soft_iou); }, {"m"}));
  c.push_back(make("mask_loss", [](const auto& o) { return sum(o.mask_loss); }, {"m"}));
  c.push_back(make("score_loss", [](const auto& o) { return sum(o.score_loss); }, {"m", "s"}));
  c.push_back(make("total_objective", [](const auto& o) { return o.total; }, {"m", "s"}));
  return c;
}

Real model_check(std::uint64_t seed) {
  net::ModelConfig c;
  c.height = c.width = 16;
  c.widths = {4, 8};
  c.fusion_width = 4;
  c.heads = 3;
  c.seed = seed;
  const std::size_t B = 2;
  const net::Graph g = net::build_graph(c, B, net::Mode::Eval);
  objective::LossConfig lc;
  lc.detach_score_target = false;
  lc.normalize_focal = true;
  const auto obj = objective::build_batch_objective(g.masks, g.scores, lc);

  net::Network model(c);
  Gen rng(seed);
  std::uniform_real_distribution<Real> u(0, 1);
  std::bernoulli_distribution coin(0.4);
  Raster i0(3, 16, 16), i1(3, 16, 16);
  for (auto* r : {&i0, &i1})
    for (auto& v : r->storage()) v = u(rng);
  Bindings b = model.state_bindings();
  for (auto& [k, v] : model.image_bindings({&i0, &i1})) b[k] = v;
  Tensor y(Shape{B, c.heads, 16, 16});
  for (std::size_t i = 0; i < B; ++i) {
    std::vector<Real> plane(256);
    for (auto& v : plane) v = coin(rng) ? 1.0 : 0.0;
    for (std::size_t h = 0; h < c.heads; ++h) std::copy(plane.begin(), plane.end(), y.data() + (i * c.heads + h) * 256);
  }
  b[objective::kTargetVar] = y;
  b[objective::kAssignVar] = objective::assignment_weights({0, 2}, c.heads, 1, lc);

  std::vector<std::string> wrt;
  for (const auto& [k, v] : model.params()) wrt.push_back(k);
  GradCheckOptions opt;
  opt.max_entries = 8;
  opt.seed = seed;
  return check_gradient(obj.total, b, wrt, opt).max_relative_error;
}

}  // namespace

std::vector<GradCheckEntry> gradcheck_suite(std::uint64_t seed, int instances) {
  std::vector<GradCheckEntry> out;
  auto run = [&](const std::vector<Case>& cases) {
    for (const auto& c : cases) {
      Gen rng(seed);
      GradCheckEntry e{c.name, instances, 0.0, kPrimitiveTol};
      for (int i = 0; i < instances; ++i) e.worst = std::max(e.worst, c.body(rng, static_cast<std::uint64_t>(i)));
      out.push_back(e);
    }
  };
  run(primitive_cases());
  run(loss_cases());
  out.push_back({"model+objective 16x16", 1, model_check(seed), kModelTol});
  return out;
}

}  // namespace ambiseg::shell

#include <cstdio>
#include <filesystem>
#include <random>

#include "ambiseg/gradcheck.hpp"
#include "ambiseg/netmodel.hpp"
#include "ambiseg/objective.hpp"
#include "doctest.h"

using namespace ambiseg;
using namespace ambiseg::net;

namespace {

ModelConfig small_config(std::size_t heads = 3) {
  ModelConfig c;
  c.height = c.width = 16;
  c.widths = {4, 8};
  c.fusion_width = 4;
  c.heads = heads;
  c.seed = 3;
  return c;
}

ModelConfig labeler_config() {
  ModelConfig c = small_config(1);
  c.input = InputKind::Modalities;
  return c;
}

Raster random_raster(std::mt19937_64& rng, std::size_t c, std::size_t h, std::size_t w) {
  std::uniform_real_distribution<double> u(0, 1);
  Raster r(c, h, w);
  for (auto& v : r.storage()) v = u(rng);
  return r;
}

ModalityBundle random_bundle(std::mt19937_64& rng, const ModelConfig& c) {
  const auto& m = c.modalities;
  return {random_raster(rng, m.semantic_channels, c.height, c.width),
          random_raster(rng, m.generative_channels, c.height / m.generative_factor,
                        c.width / m.generative_factor),
          random_raster(rng, m.concept_channels, c.height, c.width)};
}

Tensor random_targets(std::mt19937_64& rng, std::size_t b, std::size_t n, std::size_t h,
                      std::size_t w) {
  std::bernoulli_distribution coin(0.4);
  Tensor t(Shape{b, n, h, w});
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<double> plane(h * w);
    for (auto& v : plane) v = coin(rng) ? 1.0 : 0.0;
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t p = 0; p < h * w; ++p) t[(i * n + k) * h * w + p] = plane[p];
  }
  return t;
}

}  // namespace

TEST_CASE("output shape contract") {
  ModelConfig c;  // defaults: 64x64, N = 3
  c.widths = {4, 8, 8, 8};
  c.fusion_width = 4;
  Network net(c);
  std::mt19937_64 rng(1);
  const Raster img = random_raster(rng, 3, 64, 64);
  const MultiMaskOutput out = net.predict(img);
  CHECK(out.heads() == 3);
  CHECK(out.scores.size() == 3);
  CHECK(out.masks[0].height() == 64);
  CHECK(out.masks[0].width() == 64);
  CHECK_NOTHROW(out.validate());
}

TEST_CASE("zero weights give a constant sigmoid(bias) field") {
  Network net(small_config());
  for (auto& [name, t] : net.params()) t.fill(0.0);
  net.params()["mask.out.b"] = Tensor(Shape{3}, std::vector<Real>{-1.0, 0.0, 2.0});
  std::mt19937_64 rng(2);
  const auto out = net.predict(random_raster(rng, 3, 16, 16));
  for (std::size_t h = 0; h < 3; ++h) {
    const Real expect = 1.0 / (1.0 + std::exp(-net.params()["mask.out.b"][h]));
    for (Real v : out.masks[h].storage()) CHECK(v == doctest::Approx(expect).epsilon(1e-15));
  }
}

TEST_CASE("invalid configs and inputs") {
  ModelConfig c = small_config();
  c.heads = 0;
  CHECK_THROWS(Network{c});
  c = small_config();
  c.height = 18;  // three stages need a multiple of 4
  c.widths = {4, 8, 8};
  CHECK_THROWS(Network{c});
  Network net(small_config());
  Raster wrong(3, 8, 8);
  CHECK_THROWS_AS(net.predict(wrong), diff::ShapeError);
}

TEST_CASE("same seed gives identical parameters") {
  Network a(small_config()), b(small_config());
  CHECK(a.params() == b.params());
  ModelConfig other = small_config();
  other.seed = 4;
  CHECK_FALSE(Network(other).params() == a.params());
}

TEST_CASE("outputs satisfy the multi-mask invariants for extreme parameters") {
  Network net(small_config());
  for (auto& [name, t] : net.params())
    for (auto& v : t.storage()) v *= 40.0;
  std::mt19937_64 rng(6);
  const auto out = net.predict(random_raster(rng, 3, 16, 16));
  CHECK_NOTHROW(out.validate());
}

TEST_CASE("model plus objective gradient matches finite differences") {
  const ModelConfig c = small_config();
  const std::size_t B = 2;
  const Graph g = build_graph(c, B, Mode::Eval);
  objective::LossConfig lc;
  lc.detach_score_target = false;
  lc.normalize_focal = true;
  const auto obj = objective::build_batch_objective(g.masks, g.scores, lc);

  Network net(c);
  std::mt19937_64 rng(9);
  // zero biases put dead-ReLU pixels exactly on the next ReLU's kink
  std::normal_distribution<double> nd(0.0, 0.1);
  for (auto& [name, t] : net.params())
    if (name.back() == 'b')
      for (auto& v : t.storage()) v = nd(rng);
  const Raster i0 = random_raster(rng, 3, 16, 16), i1 = random_raster(rng, 3, 16, 16);
  diff::Bindings b = net.state_bindings();
  for (auto& [k, v] : net.image_bindings({&i0, &i1})) b[k] = v;
  b[objective::kTargetVar] = random_targets(rng, B, c.heads, 16, 16);
  b[objective::kAssignVar] = objective::assignment_weights({0, 2}, c.heads, 1, lc);

  std::vector<std::string> wrt;
  for (const auto& [k, v] : net.params()) wrt.push_back(k);
  diff::GradCheckOptions opt;
  opt.max_entries = 8;
  const auto r = diff::check_gradient(obj.total, b, wrt, opt);
  INFO("worst " << r.worst_variable);
  CHECK(r.max_relative_error <= 1e-4);
  CHECK(r.entries_checked > 100);
}

TEST_CASE("fuse_modalities") {
  const ModelConfig c = labeler_config();
  std::mt19937_64 rng(12);
  const ModalityBundle bundle = random_bundle(rng, c);

  SUBCASE("zero-initialized fusion path reduces to the semantic projection") {
    Network net(c);
    const Tensor fused = net.fuse(bundle);
    const std::size_t H = c.height, W = c.width;
    const auto& m = c.modalities;
    diff::Expr sem = diff::variable(kSemanticVar, Shape{1, m.semantic_channels, H, W});
    diff::Expr proj = diff::batch_norm(
        diff::conv2d(sem, diff::variable("mod.sem.proj.w", net.params().at("mod.sem.proj.w").shape()),
                     diff::variable("mod.sem.proj.b", Shape{c.fusion_width})),
        diff::variable("mod.sem.bn.gamma", Shape{c.fusion_width}),
        diff::variable("mod.sem.bn.beta", Shape{c.fusion_width}),
        diff::variable("mod.sem.bn.mean", Shape{c.fusion_width}),
        diff::variable("mod.sem.bn.var", Shape{c.fusion_width}), c.bn_eps);
    diff::Bindings b = net.state_bindings();
    b[kSemanticVar] = net.bundle_bindings({&bundle}).at(kSemanticVar);
    CHECK(diff::evaluate(proj, b) == fused);
  }

  SUBCASE("output resolution follows the semantic branch") {
    Network net(c);
    const Tensor fused = net.fuse(bundle);
    CHECK(fused.shape() == Shape{1, c.fusion_width, c.height, c.width});
    CHECK(bundle.generative.height() == c.height / 4);
  }

  SUBCASE("all three branches receive gradient") {
    Network net(c);
    for (const char* k : {"mod.mix.out.w"}) {
      std::normal_distribution<double> nd(0, 0.3);
      for (auto& v : net.params()[k].storage()) v = nd(rng);
    }
    const Graph g = build_graph(c, 2, Mode::Train);
    const ModalityBundle other = random_bundle(rng, c);
    diff::Bindings b = net.state_bindings();
    for (auto& [k, v] : net.bundle_bindings({&bundle, &other})) b[k] = v;
    diff::Expr loss = diff::sum(diff::pow(g.fused, 2.0));
    const auto grads = diff::gradient(loss, b, {"mod.sem.proj.w", "mod.gen.proj.w", "mod.con.proj.w"});
    for (const auto& [k, t] : grads) {
      Real norm = 0;
      for (Real v : t.storage()) norm += v * v;
      INFO(k);
      CHECK(norm > 0);
    }
    diff::GradCheckOptions opt;
    opt.max_entries = 16;
    const auto r = diff::check_gradient(loss, b, {"mod.sem.proj.w", "mod.gen.proj.w", "mod.con.proj.w", "mod.mix.conv.w"}, opt);
    CHECK(r.max_relative_error <= 1e-5);
  }

  SUBCASE("channel mismatch is rejected") {
    diff::Expr bad = diff::variable("x", Shape{1, 3, 16, 16});
    diff::Expr gen = diff::variable("g", Shape{1, 2, 4, 4});
    diff::Expr con = diff::variable("c", Shape{1, 2, 16, 16});
    CHECK_THROWS_AS(fuse_modalities(c, bad, gen, con, Mode::Eval), diff::ShapeError);
  }
}

TEST_CASE("checkpoint round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "ambiseg_ckpt_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "model.bin").string();
  for (const ModelConfig& c : {small_config(), labeler_config()}) {
    Network net(c);
    for (auto& [k, t] : net.buffers()) t.fill(0.25);
    save_checkpoint(net, path);
    const Network back = load_checkpoint(path);
    CHECK(back.config() == c);
    CHECK(back.params() == net.params());
    CHECK(back.buffers() == net.buffers());
  }
  {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    std::fputs("garbage", f);
    std::fclose(f);
  }
  CHECK_THROWS(load_checkpoint(path));
  std::filesystem::remove_all(dir);
}

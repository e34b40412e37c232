#include <cmath>
#include <functional>
#include <random>

#include "ambiseg/diffcore.hpp"
#include "ambiseg/gradcheck.hpp"
#include "doctest.h"

using namespace ambiseg;
using namespace ambiseg::diff;

namespace {

Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = u(rng);
  return t;
}

// Keeps values away from the kinks of relu / clamp so central differences
// never straddle one.
Tensor away_from(std::mt19937_64& rng, Shape shape, std::vector<double> kinks) {
  Tensor t = random_tensor(rng, std::move(shape), -1.5, 1.5);
  for (auto& v : t.values()) {
    for (double k : kinks) {
      if (std::abs(v - k) < 1e-3) v = k + 0.01;
    }
  }
  return t;
}

// sum(f(x) * r) with a fixed random projection r so every output element
// contributes a distinct weight to the scalar.
Expr project(const Expr& e, std::mt19937_64& rng) {
  if (e.shape().numel() == 1) return e * 1.7;
  return sum(e * constant(random_tensor(rng, e.shape())));
}

double check(const Expr& root, const Bindings& b, std::vector<std::string> wrt) {
  GradCheckOptions opt;
  opt.max_entries = 40;
  return check_gradient(root, b, wrt, opt).max_relative_error;
}

constexpr int kInstances = 50;
constexpr double kTol = 1e-5;

void for_instances(const std::function<double(std::mt19937_64&)>& body) {
  std::mt19937_64 rng(20261019);
  double worst = 0;
  for (int i = 0; i < kInstances; ++i) worst = std::max(worst, body(rng));
  CHECK(worst <= kTol);
}

}  // namespace

TEST_CASE("forward examples") {
  CHECK(evaluate(sigmoid(constant(0.0)), {}).item() == 0.5);
  CHECK(evaluate(clamp(constant(2.0), 1e-6, 1 - 1e-6), {}).item() ==
        doctest::Approx(0.999999).epsilon(1e-15));

  std::mt19937_64 rng(3);
  const Tensor x = random_tensor(rng, Shape{2, 3, 5, 6});
  Tensor k(Shape{3, 3, 3, 3});
  for (std::size_t c = 0; c < 3; ++c) k.at(c, c, 1, 1) = 1.0;
  auto xv = variable("x", x.shape());
  const Tensor y = evaluate(conv2d(xv, constant(k)), {{"x", x}});
  CHECK(y == x);
}

TEST_CASE("gradient examples") {
  auto x = variable("x", Shape{});
  CHECK(gradient(pow(x, 2.0), {{"x", Tensor::scalar(3.0)}}, {"x"}).at("x").item() ==
        doctest::Approx(6.0));
  CHECK(gradient(sigmoid(x), {{"x", Tensor::scalar(0.0)}}, {"x"}).at("x").item() ==
        doctest::Approx(0.25));
}

TEST_CASE("random five-node graph matches finite differences") {
  for_instances([](std::mt19937_64& rng) {
    auto a = variable("a", Shape{1, 2, 3, 3});
    auto b = variable("b", Shape{1, 2, 3, 3});
    // log(sigmoid(a) + 1) * b - a^2 summed
    Expr g = sum(log(sigmoid(a) + 1.0) * b - pow(a, 2.0));
    Bindings bind{{"a", random_tensor(rng, a.shape())}, {"b", random_tensor(rng, b.shape())}};
    return check(g, bind, {"a", "b"});
  });
}

TEST_CASE("primitive gradients match central differences") {
  const Shape s{2, 3, 4, 5};

  SUBCASE("add / sub / mul") {
    for_instances([&](std::mt19937_64& rng) {
      auto a = variable("a", s), b = variable("b", s), c = variable("c", Shape{});
      Expr e = project((a + b) * (a - b) * c + a * 0.3, rng);
      Bindings bind{{"a", random_tensor(rng, s)}, {"b", random_tensor(rng, s)},
                    {"c", random_tensor(rng, Shape{})}};
      return check(e, bind, {"a", "b", "c"});
    });
  }
  SUBCASE("pow") {
    for_instances([&](std::mt19937_64& rng) {
      std::uniform_int_distribution<int> pick(0, 3);
      const double exps[] = {2.0, -1.0, 0.5, 3.0};
      auto a = variable("a", s);
      Expr e = project(pow(a, exps[pick(rng)]), rng);
      return check(e, {{"a", random_tensor(rng, s, 0.2, 2.0)}}, {"a"});
    });
  }
  SUBCASE("log") {
    for_instances([&](std::mt19937_64& rng) {
      auto a = variable("a", s);
      return check(project(log(a), rng), {{"a", random_tensor(rng, s, 0.1, 3.0)}}, {"a"});
    });
  }
  SUBCASE("sigmoid") {
    for_instances([&](std::mt19937_64& rng) {
      auto a = variable("a", s);
      return check(project(sigmoid(a * 3.0), rng), {{"a", random_tensor(rng, s)}}, {"a"});
    });
  }
  SUBCASE("relu") {
    for_instances([&](std::mt19937_64& rng) {
      auto a = variable("a", s);
      return check(project(relu(a), rng), {{"a", away_from(rng, s, {0.0})}}, {"a"});
    });
  }
  SUBCASE("clamp") {
    for_instances([&](std::mt19937_64& rng) {
      auto a = variable("a", s);
      return check(project(clamp(a, -0.5, 0.7), rng), {{"a", away_from(rng, s, {-0.5, 0.7})}},
                   {"a"});
    });
  }
  SUBCASE("conv2d") {
    for_instances([&](std::mt19937_64& rng) {
      std::uniform_int_distribution<int> pick(0, 2);
      const int mode = pick(rng);
      const std::size_t k = mode == 2 ? 1 : 3;
      const int stride = mode == 1 ? 2 : 1;
      auto x = variable("x", Shape{2, 3, 6, 5});
      auto w = variable("w", Shape{4, 3, k, k});
      auto b = variable("b", Shape{4});
      Expr e = project(conv2d(x, w, b, stride), rng);
      Bindings bind{{"x", random_tensor(rng, x.shape())},
                    {"w", random_tensor(rng, w.shape())},
                    {"b", random_tensor(rng, b.shape())}};
      return check(e, bind, {"x", "w", "b"});
    });
  }
  SUBCASE("resize_bilinear") {
    for_instances([&](std::mt19937_64& rng) {
      std::uniform_int_distribution<std::size_t> dim(2, 9);
      auto x = variable("x", Shape{1, 2, 4, 5});
      Expr e = project(resize_bilinear(x, dim(rng), dim(rng)), rng);
      return check(e, {{"x", random_tensor(rng, x.shape())}}, {"x"});
    });
  }
  SUBCASE("concat / slice") {
    for_instances([&](std::mt19937_64& rng) {
      auto a = variable("a", Shape{2, 2, 3, 3}), b = variable("b", Shape{2, 3, 3, 3});
      Expr cat = concat_channels({a, b});
      Expr e = project(cat, rng) + project(slice_channels(cat, 1, 4), rng);
      Bindings bind{{"a", random_tensor(rng, a.shape())}, {"b", random_tensor(rng, b.shape())}};
      return check(e, bind, {"a", "b"});
    });
  }
  SUBCASE("reductions") {
    for_instances([&](std::mt19937_64& rng) {
      auto a = variable("a", s);
      Expr e = project(global_mean_pool(a), rng) + project(spatial_sum(a), rng) +
               sum(a) * 0.3 + mean(a) * 2.0;
      return check(e, {{"a", random_tensor(rng, s)}}, {"a"});
    });
  }
  SUBCASE("batch_norm with batch statistics") {
    for_instances([&](std::mt19937_64& rng) {
      auto x = variable("x", s), g = variable("g", Shape{3}), b = variable("b", Shape{3});
      Expr e = project(batch_norm(x, g, b), rng);
      Bindings bind{{"x", random_tensor(rng, s)}, {"g", random_tensor(rng, Shape{3})},
                    {"b", random_tensor(rng, Shape{3})}};
      return check(e, bind, {"x", "g", "b"});
    });
  }
  SUBCASE("batch_norm with running statistics") {
    for_instances([&](std::mt19937_64& rng) {
      auto x = variable("x", s), g = variable("g", Shape{3}), b = variable("b", Shape{3});
      Expr e = project(batch_norm(x, g, b, constant(random_tensor(rng, Shape{3})),
                                  constant(random_tensor(rng, Shape{3}, 0.5, 2.0))),
                       rng);
      Bindings bind{{"x", random_tensor(rng, s)}, {"g", random_tensor(rng, Shape{3})},
                    {"b", random_tensor(rng, Shape{3})}};
      return check(e, bind, {"x", "g", "b"});
    });
  }
}

TEST_CASE("evaluate is referentially transparent") {
  std::mt19937_64 rng(9);
  auto x = variable("x", Shape{1, 2, 8, 8});
  auto w = variable("w", Shape{3, 2, 3, 3});
  Expr e = sigmoid(resize_bilinear(conv2d(x, w, 2), 7, 9));
  Bindings b{{"x", random_tensor(rng, x.shape())}, {"w", random_tensor(rng, w.shape())}};
  CHECK(evaluate(e, b) == evaluate(e, b));
}

TEST_CASE("gradient is linear in the expression") {
  std::mt19937_64 rng(10);
  for (int i = 0; i < 20; ++i) {
    auto x = variable("x", Shape{1, 1, 3, 3});
    Expr f = sum(sigmoid(x) * x);
    Expr g = sum(pow(x, 2.0) + log(x));
    const double a = 1.3, c = -0.7;
    Bindings b{{"x", random_tensor(rng, x.shape(), 0.2, 2.0)}};
    const Tensor gf = gradient(f, b, {"x"}).at("x");
    const Tensor gg = gradient(g, b, {"x"}).at("x");
    const Tensor gh = gradient(f * a + g * c, b, {"x"}).at("x");
    for (std::size_t k = 0; k < gh.size(); ++k) {
      CHECK(std::abs(gh[k] - (a * gf[k] + c * gg[k])) <= 1e-12);
    }
  }
}

TEST_CASE("half-pixel resize keeps constant fields constant") {
  auto x = variable("x", Shape{1, 1, 6, 6});
  Tensor c(x.shape(), 0.37);
  const Tensor up = evaluate(resize_bilinear(resize_bilinear(x, 13, 11), 6, 6), {{"x", c}});
  for (double v : up.values()) CHECK(v == doctest::Approx(0.37).epsilon(1e-14));
}

TEST_CASE("errors") {
  auto a = variable("a", Shape{1, 1, 2, 2});
  auto b = variable("b", Shape{1, 1, 3, 3});
  CHECK_THROWS_AS(a + b, ShapeError);
  CHECK_THROWS_AS(evaluate(a, {{"a", Tensor(Shape{1, 1, 3, 3})}}), ShapeError);
  CHECK_THROWS_AS(evaluate(a, {}), BindingError);
  CHECK_THROWS_AS(gradient(a, {{"a", Tensor(a.shape())}}, {"a"}), ShapeError);

  Tensor zeros(a.shape(), 0.0);
  try {
    evaluate(log(a).labelled("focal log"), {{"a", zeros}});
    FAIL("expected NonFiniteError");
  } catch (const NonFiniteError& e) {
    CHECK(std::string(e.what()).find("focal log") != std::string::npos);
  }

  Evaluator ev({{"a", zeros}});
  ev.value(a);
  CHECK_THROWS_AS(ev.bind("a", zeros), BindingError);
}

TEST_CASE("variables the root ignores get zero gradients") {
  auto a = variable("a", Shape{2});
  auto b = variable("b", Shape{3});
  auto g = gradient(sum(a), {{"a", Tensor(Shape{2}, 1.0)}, {"b", Tensor(Shape{3}, 1.0)}},
                    {"a", "b"});
  CHECK(g.at("b") == Tensor(Shape{3}, 0.0));
  CHECK(g.at("a") == Tensor(Shape{2}, 1.0));
}

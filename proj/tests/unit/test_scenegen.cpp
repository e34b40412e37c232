#include <cmath>
#include <cstdio>
#include <filesystem>

#include "ambiseg/dataset.hpp"
#include "ambiseg/image_io.hpp"
#include "ambiseg/scenegen.hpp"
#include "doctest.h"

using namespace ambiseg;
using namespace ambiseg::scene;
namespace fs = std::filesystem;

namespace {

Real binary_iou(const Mask& a, const Mask& b) {
  std::size_t i = 0, u = 0;
  for (std::size_t p = 0; p < a.size(); ++p) {
    i += (a[p] != 0 && b[p] != 0);
    u += (a[p] != 0 || b[p] != 0);
  }
  return u == 0 ? 1.0 : static_cast<Real>(i) / static_cast<Real>(u);
}

bool same_sample(const Sample& a, const Sample& b) {
  return a.id == b.id && a.image == b.image && a.gt == b.gt && a.candidates == b.candidates &&
         a.designated == b.designated && a.category == b.category && a.seed == b.seed;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("ambiseg_scenegen_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("categories") {
  auto cats = make_categories(32, {3, 11}, 5);
  REQUIRE(cats.size() == 32);
  for (const auto& c : cats) {
    CHECK_NOTHROW(c.validate());
    CHECK(c.hard() == (c.id == 3 || c.id == 11));
  }
  CHECK(cats[3].background_similarity >= 0.8);
  CHECK(cats[0].shape != cats[1].shape);

  CategorySpec bad;
  bad.size_min = 0.4;
  bad.size_max = 0.1;
  CHECK_THROWS(bad.validate());
  bad = CategorySpec{};
  bad.occlusion_max = 0.5;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("aspect sizes") {
  for (int a = 0; a < 3; ++a) {
    auto [h, w] = aspect_size(64 * 64, a);
    CHECK(h % 8 == 0);
    CHECK(w % 8 == 0);
    CHECK(std::abs(static_cast<double>(h * w) / 4096.0 - 1.0) < 0.15);
  }
  CHECK(aspect_size(4096, 0) == std::pair<std::size_t, std::size_t>{64, 64});
}

TEST_CASE("category sampling") {
  SUBCASE("one-hot") {
    Rng rng(3);
    std::vector<Real> w(8, 0.0);
    w[5] = 2.5;
    for (int i = 0; i < 500; ++i) CHECK(sample_category(w, rng) == 5);
  }
  SUBCASE("all zero") {
    Rng rng(3);
    CHECK_THROWS(sample_category(std::vector<Real>(4, 0.0), rng));
    CHECK_THROWS(sample_category(std::vector<Real>{1.0, -1.0}, rng));
  }
  SUBCASE("uniform over 16") {
    Rng rng(11);
    const int n = 16000;
    std::vector<int> hist(16, 0);
    for (int i = 0; i < n; ++i) ++hist[sample_category(std::vector<Real>(16, 1.0), rng)];
    const double p = 1.0 / 16, sd = std::sqrt(n * p * (1 - p));
    for (int h : hist) CHECK(std::abs(h - n * p) <= 3 * sd);
  }
  SUBCASE("2:1:1") {
    Rng rng(12);
    const int n = 12000;
    std::vector<int> hist(3, 0);
    for (int i = 0; i < n; ++i) ++hist[sample_category({2.0, 1.0, 1.0}, rng)];
    const double ps[3] = {0.5, 0.25, 0.25};
    for (int c = 0; c < 3; ++c) CHECK(std::abs(hist[c] - n * ps[c]) <= 3 * std::sqrt(n * ps[c] * (1 - ps[c])));
  }
  SUBCASE("dataset marginal") {
    auto cats = make_categories(4, {}, 1);
    GeneratorConfig g;
    g.pixels = 16 * 16;
    const std::vector<Real> w{4, 2, 1, 1};
    auto ds = generate_dataset(cats, w, g, 800, 9, 1);
    std::vector<int> hist(4, 0);
    for (const auto& s : ds) ++hist[static_cast<std::size_t>(s.category)];
    for (int c = 0; c < 4; ++c) {
      const double p = w[static_cast<std::size_t>(c)] / 8.0;
      CHECK(std::abs(hist[static_cast<std::size_t>(c)] - 800 * p) <= 3 * std::sqrt(800 * p * (1 - p)));
    }
  }
}

TEST_CASE("determinism and stream independence") {
  auto cats = make_categories(8, {2}, 4);
  GeneratorConfig g;
  g.pixels = 32 * 32;
  g.ambiguity = {0.5, 3};
  const std::vector<Real> w(8, 1.0);
  auto a = generate_dataset(cats, w, g, 24, 77, 1);
  auto b = generate_dataset(cats, w, g, 24, 77, 1);
  REQUIRE(a.size() == 24);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(same_sample(a[i], b[i]));

  // a sub-range generated alone matches the same indices of the full run
  auto part = generate_dataset(cats, w, g, 6, 77, 1, 10);
  for (std::size_t i = 0; i < part.size(); ++i) CHECK(same_sample(part[i], a[10 + i]));

  auto c = generate_dataset(cats, w, g, 24, 78, 1);
  int differ = 0;
  for (std::size_t i = 0; i < a.size(); ++i) differ += !(a[i].image == c[i].image);
  CHECK(differ > 20);
}

TEST_CASE("sample invariants") {
  auto cats = make_categories(20, {1, 7}, 2);
  GeneratorConfig g;
  g.pixels = 48 * 48;
  g.ambiguity = {0.6, 3};
  auto ds = generate_dataset(cats, std::vector<Real>(20, 1.0), g, 300, 5, 2);
  std::size_t multi = 0;
  for (const auto& s : ds) {
    REQUIRE(s.k() >= 1);
    REQUIRE(s.k() <= 3);
    multi += s.k() > 1;
    CHECK(s.designated < s.k());
    CHECK(s.gt == s.candidates[s.designated]);
    CHECK(s.image.channels() == 3);
    CHECK(s.round == 2);
    CHECK(s.hard == cats[static_cast<std::size_t>(s.category)].hard());
    for (Real v : s.image.storage()) {
      REQUIRE(v >= 0.0);
      REQUIRE(v <= 1.0);
    }
    CHECK(count_nonzero(s.gt) > 0);
    for (std::size_t i = 0; i < s.k(); ++i) {
      CHECK(s.candidates[i].height() == s.image.height());
      CHECK(s.candidates[i].width() == s.image.width());
      for (std::size_t j = i + 1; j < s.k(); ++j) CHECK(binary_iou(s.candidates[i], s.candidates[j]) < 0.5);
    }
  }
  CHECK(multi > 120);
  CHECK(multi < 240);
}

TEST_CASE("no ambiguity gives a single candidate") {
  auto cats = make_categories(16, {}, 8);
  GeneratorConfig g;
  g.pixels = 32 * 32;
  g.ambiguity.p_amb = 0.0;
  for (const auto& s : generate_dataset(cats, std::vector<Real>(16, 1.0), g, 200, 3, 1)) {
    CHECK(s.k() == 1);
    CHECK(s.designated == 0);
  }
}

TEST_CASE("designated object is uniform over two candidates") {
  auto cats = make_categories(16, {}, 8);
  GeneratorConfig g;
  g.pixels = 32 * 32;
  g.ambiguity = {1.0, 2};
  auto ds = generate_dataset(cats, std::vector<Real>(16, 1.0), g, 1000, 21, 1);
  int first = 0;
  for (const auto& s : ds) {
    REQUIRE(s.k() == 2);
    first += s.designated == 0;
  }
  CHECK(std::abs(first - 500) <= 3 * std::sqrt(250.0));
}

TEST_CASE("fit") {
  auto cats = make_categories(4, {}, 1);
  GeneratorConfig g;
  g.pixels = 64 * 64;
  g.ambiguity = {1.0, 2};
  for (const auto& s : generate_dataset(cats, std::vector<Real>(4, 1.0), g, 12, 4, 1)) {
    Sample f = fit(s, 32, 32);
    CHECK(f.image.height() == 32);
    CHECK(f.gt.width() == 32);
    CHECK(f.gt == f.candidates[f.designated]);
    for (Real v : f.gt.storage()) CHECK((v == 0.0 || v == 1.0));
  }
}

TEST_CASE("modality bundles") {
  auto cats = make_categories(8, {}, 1);
  GeneratorConfig g;
  g.pixels = 32 * 32;
  g.aspect_variety = false;
  auto ds = generate_dataset(cats, std::vector<Real>(8, 1.0), g, 10, 6, 1);

  SUBCASE("shapes") {
    const auto mc = modality_config();
    CHECK(mc == net::ModalityConfig{});
    for (const auto& s : ds) {
      Rng rng(1);
      auto b = synthesize_modalities(s, ModalityCorruption{}, rng);
      CHECK(b.semantic.channels() == mc.semantic_channels);
      CHECK(b.semantic.height() == 32);
      CHECK(b.generative.channels() == mc.generative_channels);
      CHECK(b.generative.height() == 8);
      CHECK(b.generative.width() == 8);
      CHECK(b.attention.channels() == mc.concept_channels);
      CHECK(b.attention.width() == 32);
      for (const Raster* r : {&b.semantic, &b.generative, &b.attention})
        for (Real v : r->storage()) {
          REQUIRE(std::isfinite(v));
          REQUIRE(v >= 0.0);
          REQUIRE(v <= 1.0);
        }
    }
  }
  SUBCASE("zero corruption concept channel is the smoothed gt") {
    const auto none = ModalityCorruption::none();
    for (const auto& s : ds) {
      Rng rng(9);
      auto b = synthesize_modalities(s, none, rng);
      const Mask smooth = gaussian_blur(s.gt, none.concept_sigma * 32.0);
      CHECK(b.attention.channel(0) == smooth);
      for (std::size_t i = 0; i < smooth.size(); ++i) CHECK(b.attention.plane(1)[i] == 1.0 - smooth[i]);
      // without blur or cuts the semantic gt channel is the gt itself
      CHECK(b.semantic.channel(3) == s.gt);
    }
  }
  SUBCASE("deterministic given the rng") {
    Rng r1(4), r2(4);
    auto a = synthesize_modalities(ds[0], ModalityCorruption{}, r1);
    auto b = synthesize_modalities(ds[0], ModalityCorruption{}, r2);
    CHECK(a.semantic == b.semantic);
    CHECK(a.generative == b.generative);
    CHECK(a.attention == b.attention);
  }
  SUBCASE("selection zeroes disabled modalities") {
    Rng rng(2);
    auto b = apply_selection(synthesize_modalities(ds[1], ModalityCorruption{}, rng), {false, true, false});
    CHECK(b.semantic.sum() == 0.0);
    CHECK(b.attention.sum() == 0.0);
    CHECK(b.generative.sum() > 0.0);
  }
  SUBCASE("size must divide") {
    Sample s = ds[0];
    s.image = Raster(3, 30, 30);
    s.gt = Mask::mask(30, 30);
    Rng rng(1);
    CHECK_THROWS(synthesize_modalities(s, ModalityCorruption{}, rng));
  }
}

TEST_CASE("mask png round trip") {
  const auto dir = scratch("masks");
  Rng rng(123);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t h = 1 + static_cast<std::size_t>(rng.uniform_int(0, 20));
    const std::size_t w = 1 + static_cast<std::size_t>(rng.uniform_int(0, 20));
    const Real density = rng.uniform();
    Mask m = Mask::mask(h, w);
    for (std::size_t p = 0; p < m.size(); ++p) m[p] = rng.bernoulli(density) ? 1.0 : 0.0;
    const auto path = (dir / ("m" + std::to_string(i % 7) + ".png")).string();
    io::write_mask(m, path);
    REQUIRE(io::read_mask(path) == m);
  }
  // threshold rule on grayscale values
  Mask g = Mask::mask(1, 4);
  g[0] = 127.0 / 255;
  g[1] = 128.0 / 255;
  g[2] = 0.0;
  g[3] = 1.0;
  io::write_png(g, (dir / "gray.png").string());
  Mask r = io::read_mask((dir / "gray.png").string());
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 1.0);
  CHECK(r[2] == 0.0);
  CHECK(r[3] == 1.0);
  CHECK_THROWS(io::read_mask((dir / "missing.png").string()));
}

TEST_CASE("rgb png round trip is 8-bit exact") {
  const auto dir = scratch("rgb");
  Raster img(3, 7, 9);
  Rng rng(4);
  for (auto& v : img.storage()) v = static_cast<Real>(rng.uniform_int(0, 255)) / 255.0;
  io::write_png(img, (dir / "a.png").string());
  Raster back = io::read_png((dir / "a.png").string());
  REQUIRE(back.same_geometry(img));
  for (std::size_t i = 0; i < img.size(); ++i) CHECK(back[i] == doctest::Approx(img[i]).epsilon(1e-12));
}

TEST_CASE("dataset directory") {
  const auto dir = scratch("ds");
  auto cats = make_categories(6, {2}, 3);
  GeneratorConfig g;
  g.pixels = 24 * 24;
  g.ambiguity = {0.5, 2};
  auto ds = generate_dataset(cats, std::vector<Real>(6, 1.0), g, 15, 31, 1);
  std::vector<data::ManifestRecord> recs;
  for (const auto& s : ds) recs.push_back(data::record_of(s));
  recs[4].filter_status = "rejected";
  recs[4].filter_reason = "components";
  data::write_dataset(dir.string(), ds, recs);
  const std::string h1 = data::manifest_hash(dir.string());

  auto back = data::read_dataset(dir.string());
  REQUIRE(back.size() == ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(back[i].record == recs[i]);
    CHECK(back[i].mask == ds[i].gt);
    CHECK(back[i].image.same_geometry(ds[i].image));
  }
  data::write_dataset(dir.string(), ds, recs);
  CHECK(data::manifest_hash(dir.string()) == h1);

  recs[0].seed ^= 1;
  data::write_dataset(dir.string(), ds, recs);
  CHECK(data::manifest_hash(dir.string()) != h1);

  CHECK_THROWS_AS(data::parse_manifest("{\"id\":\"a\"}\n"), std::runtime_error);
  CHECK(data::parse_manifest(data::manifest_text(recs)) == recs);
}

#include "ambiseg/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace ambiseg::scene {

namespace {

constexpr Real kPi = 3.14159265358979323846;

}  // namespace

const char* to_string(ShapeFamily s) {
  switch (s) {
    case ShapeFamily::Ellipse: return "ellipse";
    case ShapeFamily::Rectangle: return "rectangle";
    case ShapeFamily::PolygonBlob: return "blob";
    case ShapeFamily::Ring: return "ring";
    case ShapeFamily::Composite: return "composite";
  }
  return "?";
}

const char* to_string(TextureFamily t) {
  switch (t) {
    case TextureFamily::Flat: return "flat";
    case TextureFamily::Gradient: return "gradient";
    case TextureFamily::Stripes: return "stripes";
    case TextureFamily::Speckle: return "speckle";
  }
  return "?";
}

void CategorySpec::validate() const {
  auto fail = [&](const std::string& what) {
    throw std::invalid_argument("category " + std::to_string(id) + ": " + what);
  };
  if (!(size_min > 0 && size_min <= size_max && size_max <= 0.5)) fail("bad size range");
  if (!(clutter_min >= 0 && clutter_min <= clutter_max && clutter_max <= 8)) fail("bad clutter range");
  if (!(background_similarity >= 0 && background_similarity <= 1)) fail("background similarity outside [0,1]");
  if (!(occlusion_max >= 0 && occlusion_max <= 0.2)) fail("occlusion outside [0,0.2]");
  if (!(elongation_max >= 1)) fail("elongation must be >= 1");
  if (!(texture_scale >= 1)) fail("texture scale must be >= 1");
  if (!(lighting >= 0 && pixel_noise >= 0 && background_pattern >= 0)) fail("negative amplitude");
}

std::vector<CategorySpec> make_categories(std::size_t count, const std::vector<int>& hard_ids,
                                          std::uint64_t seed) {
  if (count == 0) throw std::invalid_argument("make_categories: need at least one category");
  std::vector<CategorySpec> out;
  for (std::size_t i = 0; i < count; ++i) {
    CategorySpec c;
    c.id = static_cast<int>(i);
    c.shape = static_cast<ShapeFamily>(i % 5);
    c.texture = static_cast<TextureFamily>((i / 5) % 4);
    if ((i / 20) % 2 == 0) {
      c.size_min = 0.06;
      c.size_max = 0.20;
    } else {
      c.size_min = 0.15;
      c.size_max = 0.32;
    }
    Rng r(derive_seed(seed, 0xCA7, i));
    c.clutter_min = 0;
    c.clutter_max = static_cast<int>(r.uniform_int(1, 6));
    c.background_similarity = r.uniform(0.0, 0.35);
    c.occlusion_max = r.bernoulli(0.3) ? r.uniform(0.05, 0.15) : 0.0;
    c.elongation_max = r.uniform(1.0, 2.0);
    c.rotation_range = r.uniform(0.5, kPi);
    c.hue_bias = r.uniform(-0.2, 0.2);
    c.texture_scale = r.uniform(3.0, 6.0);
    c.lighting = r.uniform(0.0, 0.15);
    c.pixel_noise = r.uniform(0.01, 0.04);
    c.background_pattern = r.uniform(0.0, 0.08);
    if (std::find(hard_ids.begin(), hard_ids.end(), c.id) != hard_ids.end()) {
      c.background_similarity = r.uniform(0.82, 0.9);
    }
    c.validate();
    out.push_back(c);
  }
  for (int h : hard_ids) {
    if (h < 0 || static_cast<std::size_t>(h) >= count) {
      throw std::invalid_argument("hard category id " + std::to_string(h) + " out of range");
    }
  }
  return out;
}

std::string SceneSpec::describe() const {
  std::ostringstream ss;
  ss << "scene{category=" << category << ", size=" << height << "x" << width
     << ", K=" << objects.size() << ", designated=" << designated << ", seed=" << seed
     << ", objects=[";
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const auto& o = objects[i];
    ss << (i ? ", " : "") << "(" << o.cy << "," << o.cx << " r=" << o.radius << ")";
  }
  ss << "]}";
  return ss.str();
}

std::pair<std::size_t, std::size_t> aspect_size(std::size_t pixels, int aspect_index) {
  // width : height
  static const Real ratios[3] = {1.0, 4.0 / 3.0, 3.0 / 4.0};
  if (aspect_index < 0 || aspect_index > 2) throw std::invalid_argument("aspect index must be 0..2");
  const Real r = ratios[aspect_index];
  auto snap = [](Real v) {
    return std::max<std::size_t>(8, static_cast<std::size_t>(std::lround(v / 8.0)) * 8);
  };
  const Real h = std::sqrt(static_cast<Real>(pixels) / r);
  return {snap(h), snap(h * r)};
}

std::size_t sample_category(const std::vector<Real>& weights, Rng& rng) {
  if (weights.empty()) throw std::invalid_argument("sample_category: no categories");
  Real total = 0;
  for (Real w : weights) {
    if (!(w >= 0) || !std::isfinite(w)) throw std::invalid_argument("sample_category: negative or non-finite weight");
    total += w;
  }
  if (total <= 0) throw std::invalid_argument("sample_category: all weights are zero");
  return rng.categorical(weights);
}

namespace {

Real clamp01(Real v) { return std::clamp(v, 0.0, 1.0); }

bool inside_shape(ShapeFamily shape, const ObjectPlacement& o, Real py, Real px) {
  const Real dy = py - o.cy, dx = px - o.cx;
  const Real c = std::cos(o.rotation), s = std::sin(o.rotation);
  const Real u = dx * c + dy * s, v = -dx * s + dy * c;
  const Real se = std::sqrt(o.elongation);
  const Real r = o.radius;
  auto in_ellipse = [&](Real a, Real b) { return (u / a) * (u / a) + (v / b) * (v / b) <= 1.0; };
  switch (shape) {
    case ShapeFamily::Ellipse:
      return in_ellipse(r * se, r / se);
    case ShapeFamily::Rectangle: {
      const Real k = std::sqrt(kPi / 4.0) * r;
      return std::abs(u) <= k * se && std::abs(v) <= k / se;
    }
    case ShapeFamily::PolygonBlob: {
      const Real rho = std::hypot(u, v * se);
      const Real phi = std::atan2(v, u);
      Real edge = 1.0;
      for (int k = 0; k < 3; ++k) edge += o.blob_amp[k] * std::cos((k + 2) * phi + o.blob_phase[k]);
      return rho <= r * edge;
    }
    case ShapeFamily::Ring: {
      const Real a = 1.2 * r * se, b = 1.2 * r / se;
      const Real q = (u / a) * (u / a) + (v / b) * (v / b);
      return q <= 1.0 && q > 0.55 * 0.55;
    }
    case ShapeFamily::Composite: {
      if (in_ellipse(0.8 * r * se, 0.8 * r / se)) return true;
      const Real ou = u - 0.75 * r;
      return std::abs(ou) <= 0.55 * r && std::abs(v) <= 0.3 * r;
    }
  }
  return false;
}

Mask rasterize(ShapeFamily shape, const ObjectPlacement& o, std::size_t H, std::size_t W) {
  Mask m = Mask::mask(H, W);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      if (inside_shape(shape, o, static_cast<Real>(y) + 0.5, static_cast<Real>(x) + 0.5)) m(y, x) = 1;
  return m;
}

// 1-pixel 8-neighbourhood dilation.
Mask dilate(const Mask& m) {
  Mask out = m;
  const std::size_t H = m.height(), W = m.width();
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      if (m(y, x) == 0) continue;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
          if (yy >= 0 && xx >= 0 && yy < static_cast<long>(H) && xx < static_cast<long>(W)) {
            out(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx)) = 1;
          }
        }
    }
  return out;
}

bool touches_margin(const Mask& m, std::size_t margin) {
  const std::size_t H = m.height(), W = m.width();
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      if (m(y, x) != 0 && (y < margin || x < margin || y + margin >= H || x + margin >= W)) return true;
  return false;
}

bool overlaps(const Mask& a, const Mask& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != 0 && b[i] != 0) return true;
  return false;
}

void random_colour(Rng& rng, Real* c, Real lo, Real hi) {
  for (int i = 0; i < 3; ++i) c[i] = rng.uniform(lo, hi);
}

Real luminance(const Raster& img, std::size_t y, std::size_t x) {
  return 0.299 * img.at(0, y, x) + 0.587 * img.at(1, y, x) + 0.114 * img.at(2, y, x);
}

void paint_texture(Raster& img, const Mask& region, const ObjectPlacement& o,
                   const CategorySpec& cat, Rng& rng) {
  const std::size_t H = img.height(), W = img.width();
  const Real dir = o.rotation;
  const Real cs = std::cos(dir), sn = std::sin(dir);
  const Real extent = 2.0 * o.radius * std::sqrt(o.elongation) + 1e-9;
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      if (region(y, x) == 0) continue;
      const Real py = static_cast<Real>(y) + 0.5, px = static_cast<Real>(x) + 0.5;
      Real scale = 1.0, add = 0.0;
      switch (cat.texture) {
        case TextureFamily::Flat:
          break;
        case TextureFamily::Gradient: {
          const Real t = clamp01(((px - o.cx) * cs + (py - o.cy) * sn) / extent + 0.5);
          scale = 0.8 + 0.4 * t;
          break;
        }
        case TextureFamily::Stripes: {
          const Real p = (px * cs + py * sn) / cat.texture_scale;
          if (static_cast<long>(std::floor(p)) % 2 != 0) scale = 0.82;
          break;
        }
        case TextureFamily::Speckle:
          if (rng.bernoulli(1.0 / cat.texture_scale)) add = 0.12;
          break;
      }
      for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = o.colour[c] * scale + add;
    }
}

struct Layout {
  std::vector<ObjectPlacement> objects;
  std::vector<Mask> masks;
};

}  // namespace

Sample generate_scene(const CategorySpec& cat, const GeneratorConfig& cfg, Rng& rng) {
  cat.validate();
  const auto& amb = cfg.ambiguity;
  if (!(amb.p_amb >= 0 && amb.p_amb <= 1)) throw std::invalid_argument("p_amb outside [0,1]");
  if (amb.p_amb > 0 && amb.k_max < 2) throw std::invalid_argument("k_max must be >= 2 when p_amb > 0");

  const int aspect = cfg.aspect_variety ? static_cast<int>(rng.uniform_int(0, 2)) : 0;
  const auto [H, W] = aspect_size(cfg.pixels, aspect);

  SceneSpec spec;
  spec.category = cat.id;
  spec.height = H;
  spec.width = W;
  random_colour(rng, spec.background, 0.15, 0.85);

  Real contrast[3];
  for (int tries = 0;; ++tries) {
    random_colour(rng, contrast, 0.0, 1.0);
    contrast[0] = clamp01(contrast[0] + cat.hue_bias);
    contrast[2] = clamp01(contrast[2] - cat.hue_bias);
    Real d = 0;
    for (int c = 0; c < 3; ++c) d = std::max(d, std::abs(contrast[c] - spec.background[c]));
    if (d >= 0.4 || tries >= 50) break;
  }
  const Real sim = std::clamp(cat.background_similarity + rng.uniform(-0.03, 0.03), 0.0, 0.97);
  Real base[3];
  for (int c = 0; c < 3; ++c) base[c] = sim * spec.background[c] + (1 - sim) * contrast[c];

  const std::size_t K =
      rng.bernoulli(amb.p_amb) ? static_cast<std::size_t>(rng.uniform_int(2, static_cast<std::int64_t>(amb.k_max))) : 1;
  spec.designated = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(K) - 1));
  Real area = rng.uniform(cat.size_min, cat.size_max);
  if (K > 1) area = std::min(area, 0.4 / static_cast<Real>(K));

  std::vector<ObjectPlacement> proto(K);
  for (auto& o : proto) {
    o.radius = std::sqrt(area * rng.uniform(0.9, 1.1) * static_cast<Real>(H * W) / kPi);
    o.elongation = rng.uniform(1.0, cat.elongation_max);
    o.rotation = rng.uniform(0.0, cat.rotation_range);
    for (int c = 0; c < 3; ++c) o.colour[c] = clamp01(base[c] + 0.02 * rng.normal());
    for (int k = 0; k < 3; ++k) {
      o.blob_amp[k] = rng.uniform(0.0, 0.18);
      o.blob_phase[k] = rng.uniform(0.0, 2 * kPi);
    }
  }

  const std::size_t margin = 1;
  Layout layout;
  bool placed = false;
  for (int shrink = 0; shrink < 10 && !placed; ++shrink) {
    layout = Layout{};
    placed = true;
    Mask occupied = Mask::mask(H, W);
    for (std::size_t k = 0; k < K && placed; ++k) {
      bool ok = false;
      for (int t = 0; t < cfg.max_retries; ++t) {
        ObjectPlacement o = proto[k];
        o.cy = rng.uniform(0.0, static_cast<Real>(H));
        o.cx = rng.uniform(0.0, static_cast<Real>(W));
        Mask m = rasterize(cat.shape, o, H, W);
        if (count_nonzero(m) < 4 || touches_margin(m, margin) || overlaps(dilate(m), occupied)) continue;
        for (std::size_t i = 0; i < m.size(); ++i)
          if (m[i] != 0) occupied[i] = 1;
        layout.objects.push_back(o);
        layout.masks.push_back(std::move(m));
        ok = true;
        break;
      }
      placed = ok;
    }
    if (!placed)
      for (auto& o : proto) o.radius *= 0.9;
  }
  spec.objects = layout.objects;
  if (!placed) {
    throw PlacementError("could not place " + std::to_string(K) + " objects: " + spec.describe(), spec);
  }

  // background with illumination ramp and a faint pattern
  Raster img(3, H, W);
  const Real ramp_dir = rng.uniform(0.0, 2 * kPi);
  const Real pat_freq = rng.uniform(0.2, 0.6), pat_phase = rng.uniform(0.0, 2 * kPi);
  const Real rc = std::cos(ramp_dir), rs = std::sin(ramp_dir);
  const Real diag = std::hypot(static_cast<Real>(H), static_cast<Real>(W));
  Raster light(1, H, W);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const Real py = static_cast<Real>(y) + 0.5, px = static_cast<Real>(x) + 0.5;
      light(y, x) = 1.0 + cat.lighting * ((px - W / 2.0) * rc + (py - H / 2.0) * rs) / diag * 2.0;
      const Real pattern = cat.background_pattern * std::sin(pat_freq * (px * rs - py * rc) + pat_phase);
      for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = spec.background[c] + pattern;
    }

  // distractors beneath the candidates
  spec.distractors = static_cast<std::size_t>(rng.uniform_int(cat.clutter_min, cat.clutter_max));
  for (std::size_t d = 0; d < spec.distractors; ++d) {
    ObjectPlacement o;
    o.radius = std::sqrt(rng.uniform(0.004, 0.012) * static_cast<Real>(H * W) / kPi);
    o.elongation = rng.uniform(1.0, 2.0);
    o.rotation = rng.uniform(0.0, kPi);
    o.cy = rng.uniform(0.0, static_cast<Real>(H));
    o.cx = rng.uniform(0.0, static_cast<Real>(W));
    Real col[3];
    random_colour(rng, col, 0.0, 1.0);
    const Mask m = rasterize(ShapeFamily::Ellipse, o, H, W);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x)
        if (m(y, x) != 0)
          for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = 0.75 * spec.background[c] + 0.25 * col[c];
  }

  for (std::size_t k = 0; k < K; ++k) paint_texture(img, layout.masks[k], layout.objects[k], cat, rng);

  // occluder: background-coloured band over one side of the designated object
  std::vector<Mask> candidates = layout.masks;
  if (cat.occlusion_max > 0) {
    const Real frac = rng.uniform(0.0, cat.occlusion_max);
    Mask& target = candidates[spec.designated];
    const std::size_t total = count_nonzero(target);
    const auto need = static_cast<std::size_t>(std::floor(frac * static_cast<Real>(total)));
    const int side = static_cast<int>(rng.uniform_int(0, 3));
    std::size_t removed = 0;
    const std::size_t lines = (side < 2) ? H : W;
    for (std::size_t l = 0; l < lines && removed < need; ++l) {
      const std::size_t idx = (side % 2 == 0) ? l : lines - 1 - l;
      const std::size_t span = (side < 2) ? W : H;
      for (std::size_t j = 0; j < span; ++j) {
        const std::size_t y = side < 2 ? idx : j, x = side < 2 ? j : idx;
        if (target(y, x) == 0) continue;
        target(y, x) = 0;
        ++removed;
        for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = spec.background[c];
      }
    }
  }

  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x)
        img.at(c, y, x) = clamp01(img.at(c, y, x) * light(y, x) + cat.pixel_noise * rng.normal());

  Sample s;
  s.image = std::move(img);
  s.candidates = std::move(candidates);
  s.designated = spec.designated;
  s.gt = s.candidates[spec.designated];
  s.category = cat.id;
  s.hard = cat.hard();
  return s;
}

namespace {

std::string sample_id(int round, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "r%d_%06zu", round, index);
  return buf;
}

Sample make_sample(const CategorySpec& cat, const GeneratorConfig& cfg, std::uint64_t seed,
                   int round, std::size_t index) {
  const std::uint64_t s = derive_seed(seed, kStreamScene, index);
  Rng rng(s);
  Sample out = generate_scene(cat, cfg, rng);
  out.id = sample_id(round, index);
  out.round = round;
  out.seed = s;
  return out;
}

}  // namespace

std::vector<Sample> generate_dataset(const std::vector<CategorySpec>& categories,
                                     const std::vector<Real>& weights, const GeneratorConfig& cfg,
                                     std::size_t count, std::uint64_t seed, int round,
                                     std::size_t first) {
  if (weights.size() != categories.size()) {
    throw std::invalid_argument("generate_dataset: " + std::to_string(weights.size()) +
                                " weights for " + std::to_string(categories.size()) + " categories");
  }
  std::vector<int> cats;
  for (std::size_t i = first; i < first + count; ++i) {
    Rng r(derive_seed(seed, kStreamCategory, i));
    cats.push_back(static_cast<int>(sample_category(weights, r)));
  }
  return generate_for_categories(categories, cats, cfg, seed, round, first);
}

std::vector<Sample> generate_for_categories(const std::vector<CategorySpec>& categories,
                                            const std::vector<int>& category_of_sample,
                                            const GeneratorConfig& cfg, std::uint64_t seed,
                                            int round, std::size_t first) {
  std::vector<Sample> out;
  out.reserve(category_of_sample.size());
  for (std::size_t i = 0; i < category_of_sample.size(); ++i) {
    const int c = category_of_sample[i];
    if (c < 0 || static_cast<std::size_t>(c) >= categories.size()) {
      throw std::invalid_argument("category id " + std::to_string(c) + " out of range");
    }
    out.push_back(make_sample(categories[static_cast<std::size_t>(c)], cfg, seed, round, first + i));
  }
  return out;
}

Sample fit(const Sample& s, std::size_t height, std::size_t width) {
  if (s.image.height() == height && s.image.width() == width) return s;
  Sample out = s;
  out.image = resize_bilinear(s.image, height, width);
  for (auto& c : out.candidates) c = binarize(resize_bilinear(c, height, width));
  out.gt = binarize(resize_bilinear(s.gt, height, width));
  return out;
}

ModalityCorruption ModalityCorruption::none() {
  ModalityCorruption c;
  c.semantic_blur = 0;
  c.semantic_drop = 0;
  c.small_object_drop = 0;
  c.generative_jitter = 0;
  c.generative_noise = 0;
  c.concept_shift = 0;
  return c;
}

net::ModalityConfig modality_config() {
  return {kSemanticChannels, kGenerativeChannels, kConceptChannels, kGenerativeFactor};
}

net::ModalityBundle synthesize_modalities(const Sample& s, const ModalityCorruption& cor, Rng& rng) {
  const std::size_t H = s.image.height(), W = s.image.width();
  if (H % kGenerativeFactor || W % kGenerativeFactor) {
    throw std::invalid_argument("synthesize_modalities: size must be divisible by 4");
  }
  const Real extent = static_cast<Real>(std::max(H, W));
  Raster luma(1, H, W);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) luma(y, x) = luminance(s.image, y, x);

  net::ModalityBundle b;
  b.semantic = Raster(kSemanticChannels, H, W);
  // border colour
  Real border[3] = {0, 0, 0};
  std::size_t nb = 0;
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      if (y == 0 || x == 0 || y + 1 == H || x + 1 == W) {
        for (std::size_t c = 0; c < 3; ++c) border[c] += s.image.at(c, y, x);
        ++nb;
      }
  for (auto& v : border) v /= static_cast<Real>(nb);
  auto px = [&](long y, long x) {
    y = std::clamp<long>(y, 0, static_cast<long>(H) - 1);
    x = std::clamp<long>(x, 0, static_cast<long>(W) - 1);
    return luma(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
  };
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const long Y = static_cast<long>(y), X = static_cast<long>(x);
      const Real gx = (px(Y - 1, X + 1) + 2 * px(Y, X + 1) + px(Y + 1, X + 1)) -
                      (px(Y - 1, X - 1) + 2 * px(Y, X - 1) + px(Y + 1, X - 1));
      const Real gy = (px(Y + 1, X - 1) + 2 * px(Y + 1, X) + px(Y + 1, X + 1)) -
                      (px(Y - 1, X - 1) + 2 * px(Y - 1, X) + px(Y - 1, X + 1));
      b.semantic.at(0, y, x) = std::min(1.0, std::hypot(gx, gy) / 2.0);
      Real d = 0;
      for (std::size_t c = 0; c < 3; ++c) d += (s.image.at(c, y, x) - border[c]) * (s.image.at(c, y, x) - border[c]);
      b.semantic.at(1, y, x) = std::min(1.0, 2.0 * std::sqrt(d / 3.0));
      Real m = 0, m2 = 0;
      for (long dy = -1; dy <= 1; ++dy)
        for (long dx = -1; dx <= 1; ++dx) {
          const Real v = px(Y + dy, X + dx);
          m += v;
          m2 += v * v;
        }
      m /= 9;
      b.semantic.at(2, y, x) = std::min(1.0, 10.0 * std::max(0.0, m2 / 9 - m * m));
    }

  // gt channel: blurred, sometimes cut or dropped
  Mask sem_gt = gaussian_blur(s.gt, cor.semantic_blur * extent);
  const Real area = static_cast<Real>(count_nonzero(s.gt)) / static_cast<Real>(H * W);
  if (area < cor.small_object_area && rng.bernoulli(cor.small_object_drop)) {
    sem_gt.fill(0.0);
  } else if (rng.bernoulli(cor.semantic_drop)) {
    std::size_t y0 = H, y1 = 0, x0 = W, x1 = 0;
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x)
        if (s.gt(y, x) != 0) {
          y0 = std::min(y0, y);
          y1 = std::max(y1, y + 1);
          x0 = std::min(x0, x);
          x1 = std::max(x1, x + 1);
        }
    if (y1 > y0) {
      const int side = static_cast<int>(rng.uniform_int(0, 3));
      const std::size_t hy = (y0 + y1) / 2, hx = (x0 + x1) / 2;
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          const bool cut = (side == 0 && y < hy) || (side == 1 && y >= hy) ||
                           (side == 2 && x < hx) || (side == 3 && x >= hx);
          if (cut) sem_gt(y, x) = 0;
        }
    }
  }
  std::copy(sem_gt.storage().begin(), sem_gt.storage().end(), b.semantic.plane(3));

  // generative: coarse layout with jittered boundary cells and noise
  const std::size_t f = kGenerativeFactor, h = H / f, w = W / f;
  Mask coarse = average_pool(s.gt, f);
  const Mask coarse_luma = average_pool(luma, f);
  b.generative = Raster(kGenerativeChannels, h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      Real v = coarse(y, x);
      bool boundary = v > 0 && v < 1;
      for (int dy = -1; dy <= 1 && !boundary; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
          if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) continue;
          if (coarse(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx)) != v) boundary = true;
        }
      if (boundary && cor.generative_jitter > 0) v += rng.uniform(-cor.generative_jitter, cor.generative_jitter);
      if (cor.generative_noise > 0) v += cor.generative_noise * rng.normal();
      b.generative.at(0, y, x) = clamp01(v);
      b.generative.at(1, y, x) = coarse_luma(y, x);
    }

  // concept: smoothed object / background, shifted together
  const Mask smooth = gaussian_blur(s.gt, cor.concept_sigma * extent);
  int dy = 0, dx = 0;
  const int max_shift = static_cast<int>(std::lround(cor.concept_shift * extent));
  if (max_shift > 0) {
    dy = static_cast<int>(rng.uniform_int(-max_shift, max_shift));
    dx = static_cast<int>(rng.uniform_int(-max_shift, max_shift));
  }
  const Mask obj = (dy == 0 && dx == 0) ? smooth : shift(smooth, dy, dx, 0.0);
  b.attention = Raster(kConceptChannels, H, W);
  for (std::size_t i = 0; i < H * W; ++i) {
    b.attention.plane(0)[i] = obj[i];
    b.attention.plane(1)[i] = 1.0 - obj[i];
  }
  return b;
}

net::ModalityBundle apply_selection(net::ModalityBundle b, const ModalitySelection& sel) {
  if (!sel.semantic) b.semantic.fill(0.0);
  if (!sel.generative) b.generative.fill(0.0);
  if (!sel.concept_maps) b.attention.fill(0.0);
  return b;
}

}  // namespace ambiseg::scene

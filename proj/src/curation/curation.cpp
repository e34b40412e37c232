#include "ambiseg/curation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ambiseg::curation {

const char* to_string(Transform t) {
  switch (t) {
    case Transform::Identity: return "identity";
    case Transform::FlipHorizontal: return "hflip";
    case Transform::FlipVertical: return "vflip";
    case Transform::Rescale: return "rescale";
  }
  return "?";
}

Transform transform_from_string(const std::string& s) {
  for (Transform t : {Transform::Identity, Transform::FlipHorizontal, Transform::FlipVertical, Transform::Rescale}) {
    if (s == to_string(t)) return t;
  }
  throw std::invalid_argument("unknown transform '" + s + "' (expected identity, hflip, vflip or rescale)");
}

std::vector<Transform> default_transforms() {
  return {Transform::FlipHorizontal, Transform::FlipVertical, Transform::Rescale};
}

namespace {

Raster rescale(const Raster& r) {
  const auto h = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(kRescaleFactor * r.height())));
  const auto w = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(kRescaleFactor * r.width())));
  return resize_bilinear(resize_bilinear(r, h, w), r.height(), r.width());
}

Raster forward(Transform t, const Raster& r) {
  switch (t) {
    case Transform::Identity: return r;
    case Transform::FlipHorizontal: return flip_horizontal(r);
    case Transform::FlipVertical: return flip_vertical(r);
    case Transform::Rescale: return rescale(r);
  }
  return r;
}

Mask forward_mask(Transform t, const Mask& m) {
  return t == Transform::Rescale ? binarize(rescale(m)) : forward(t, m);
}

Real binary_iou(const Mask& a, const Mask& b) { return metrics::iou_binary(a, b); }

}  // namespace

scene::Sample apply(Transform t, const scene::Sample& s) {
  scene::Sample out = s;
  out.image = forward(t, s.image);
  out.gt = forward_mask(t, s.gt);
  for (auto& c : out.candidates) c = forward_mask(t, c);
  return out;
}

Mask invert(Transform t, const Mask& m) {
  switch (t) {
    case Transform::FlipHorizontal: return flip_horizontal(m);
    case Transform::FlipVertical: return flip_vertical(m);
    default: return m;
  }
}

MaskPredictor image_model(const net::Network& model) {
  if (model.config().input != net::InputKind::Image) {
    throw std::invalid_argument("image_model: network takes modality bundles");
  }
  return [&model](const scene::Sample& s) {
    const auto out = model.predict(s.image);
    return binarize(out.masks[out.best_scored()]);
  };
}

MaskPredictor labeler_model(const net::Network& labeler, const scene::ModalityCorruption& corruption,
                            const scene::ModalitySelection& selection) {
  if (labeler.config().input != net::InputKind::Modalities) {
    throw std::invalid_argument("labeler_model: network takes images");
  }
  return [&labeler, corruption, selection](const scene::Sample& s) {
    Rng rng(derive_seed(s.seed, scene::kStreamModality));
    const auto bundle = scene::apply_selection(scene::synthesize_modalities(s, corruption, rng), selection);
    const auto out = labeler.predict(bundle);
    return binarize(out.masks[out.best_scored()]);
  };
}

MaskPredictor gt_oracle() {
  return [](const scene::Sample& s) { return s.gt; };
}

MaskPredictor constant_mask(Real value) {
  return [value](const scene::Sample& s) { return Mask::mask(s.image.height(), s.image.width(), value); };
}

MaskPredictor left_half() {
  return [](const scene::Sample& s) {
    Mask m = Mask::mask(s.image.height(), s.image.width());
    for (std::size_t y = 0; y < m.height(); ++y)
      for (std::size_t x = 0; x < m.width() / 2; ++x) m(y, x) = 1.0;
    return m;
  };
}

Real consistency_score(const MaskPredictor& model, const scene::Sample& s,
                       const std::vector<Transform>& transforms) {
  if (transforms.empty()) throw std::invalid_argument("consistency_score: empty transform set");
  const Mask base = binarize(model(s));
  Real acc = 0;
  for (Transform t : transforms) {
    const Mask m = invert(t, binarize(model(apply(t, s))));
    if (!m.same_geometry(base)) throw std::invalid_argument("consistency_score: transform changed geometry");
    acc += binary_iou(m, base);
  }
  return acc / static_cast<Real>(transforms.size());
}

std::vector<int> label_components(const Mask& m, std::size_t* count) {
  const std::size_t H = m.height(), W = m.width();
  std::vector<int> lab(H * W, 0);
  std::vector<std::size_t> stack;
  int next = 0;
  for (std::size_t p = 0; p < H * W; ++p) {
    if (m[p] < 0.5 || lab[p] != 0) continue;
    lab[p] = ++next;
    stack.push_back(p);
    while (!stack.empty()) {
      const std::size_t q = stack.back();
      stack.pop_back();
      const std::size_t y = q / W, x = q % W;
      auto visit = [&](std::size_t r) {
        if (m[r] >= 0.5 && lab[r] == 0) {
          lab[r] = next;
          stack.push_back(r);
        }
      };
      if (y > 0) visit(q - W);
      if (y + 1 < H) visit(q + W);
      if (x > 0) visit(q - 1);
      if (x + 1 < W) visit(q + 1);
    }
  }
  if (count) *count = static_cast<std::size_t>(next);
  return lab;
}

ComponentResult component_check(const Mask& m, Real main_fraction, std::size_t max_count) {
  std::size_t n = 0;
  const auto lab = label_components(m, &n);
  std::vector<std::size_t> area(n + 1, 0);
  std::size_t fg = 0;
  for (int l : lab)
    if (l > 0) {
      ++area[static_cast<std::size_t>(l)];
      ++fg;
    }
  ComponentResult r;
  r.total = n;
  for (std::size_t i = 1; i <= n; ++i) {
    r.largest = std::max(r.largest, area[i]);
    if (static_cast<Real>(area[i]) >= main_fraction * static_cast<Real>(fg)) ++r.count;
  }
  r.pass = r.count >= 1 && r.count <= max_count;
  return r;
}

CoverageResult coverage_check(const Mask& pred, const Mask& reference, Real threshold) {
  if (!pred.same_geometry(reference)) throw std::invalid_argument("coverage_check: geometry mismatch");
  std::size_t ref = 0, both = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool r = reference[i] >= 0.5;
    ref += r;
    both += r && pred[i] >= 0.5;
  }
  if (ref == 0) throw std::invalid_argument("coverage_check: empty reference mask");
  CoverageResult c;
  c.fraction = static_cast<Real>(both) / static_cast<Real>(ref);
  c.pass = c.fraction > threshold;
  return c;
}

void FilterConfig::validate() const {
  auto unit = [](Real v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument(std::string("filter config: ") + name + " must be in [0,1]");
  };
  unit(tau, "tau");
  unit(main_fraction, "main_fraction");
  unit(coverage_min, "coverage_min");
  unit(presence_min, "presence_min");
  if (max_components == 0) throw std::invalid_argument("filter config: max_components must be positive");
  if (consistency && transforms.empty()) throw std::invalid_argument("filter config: consistency needs transforms");
}

void to_json(nlohmann::json& j, const FilterConfig& c) {
  std::vector<std::string> ts;
  for (Transform t : c.transforms) ts.emplace_back(to_string(t));
  j = nlohmann::json{{"consistency", c.consistency}, {"components", c.components},
                     {"coverage", c.coverage},       {"presence", c.presence},
                     {"tau", c.tau},                 {"main_fraction", c.main_fraction},
                     {"max_components", c.max_components}, {"coverage_min", c.coverage_min},
                     {"presence_min", c.presence_min},     {"transforms", ts}};
}

void from_json(const nlohmann::json& j, FilterConfig& c) {
  static const char* keys[] = {"consistency", "components",     "coverage",     "presence",     "tau",
                               "main_fraction", "max_components", "coverage_min", "presence_min", "transforms"};
  for (const auto& [k, v] : j.items()) {
    if (std::find(std::begin(keys), std::end(keys), k) == std::end(keys)) {
      throw std::invalid_argument("filter config: unknown key '" + k + "'");
    }
  }
  c = FilterConfig{};
  c.consistency = j.value("consistency", c.consistency);
  c.components = j.value("components", c.components);
  c.coverage = j.value("coverage", c.coverage);
  c.presence = j.value("presence", c.presence);
  c.tau = j.value("tau", c.tau);
  c.main_fraction = j.value("main_fraction", c.main_fraction);
  c.max_components = j.value("max_components", c.max_components);
  c.coverage_min = j.value("coverage_min", c.coverage_min);
  c.presence_min = j.value("presence_min", c.presence_min);
  if (j.contains("transforms")) {
    c.transforms.clear();
    for (const auto& t : j.at("transforms")) c.transforms.push_back(transform_from_string(t.get<std::string>()));
  }
  c.validate();
}

nlohmann::ordered_json to_json(const FilterSummary& s) {
  nlohmann::ordered_json j;
  j["total"] = s.total;
  j["kept"] = s.kept;
  j["rejected"] = s.total - s.kept;
  j["rejection_fraction"] = s.rejection_fraction();
  for (const auto& [stage, n] : s.failed) {
    j["failed"][stage] = {{"count", n},
                          {"fraction", s.total ? static_cast<Real>(n) / static_cast<Real>(s.total) : 0.0}};
  }
  for (const auto& [stage, n] : s.first_reason) j["reason"][stage] = n;
  return j;
}

FilterResult filter_dataset(const MaskPredictor& model, const std::vector<scene::Sample>& samples,
                            const FilterConfig& cfg, const std::vector<Mask>* labels) {
  cfg.validate();
  if (labels && labels->size() != samples.size()) {
    throw std::invalid_argument("filter_dataset: label count does not match sample count");
  }
  const char* stages[] = {"consistency", "components", "coverage", "presence"};
  FilterResult res;
  res.summary.total = samples.size();
  std::size_t failed[4] = {0, 0, 0, 0}, first[4] = {0, 0, 0, 0};
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    FilterVerdict v;
    v.id = s.id;
    bool fail[4] = {false, false, false, false};
    const bool need_mask = cfg.components || cfg.coverage || cfg.presence;
    Mask mask;
    if (need_mask) mask = labels ? binarize((*labels)[i]) : binarize(model(s));
    if (cfg.consistency) {
      v.consistency = consistency_score(model, s, cfg.transforms);
      fail[0] = *v.consistency < cfg.tau;
    }
    if (cfg.components || cfg.presence) {
      const auto c = component_check(mask, cfg.main_fraction, cfg.max_components);
      if (cfg.components) {
        v.components = c.count;
        fail[1] = !c.pass;
      }
      if (cfg.presence) {
        v.presence = static_cast<Real>(c.largest) / static_cast<Real>(mask.pixels());
        fail[3] = *v.presence < cfg.presence_min;
      }
    }
    if (cfg.coverage) {
      const auto c = coverage_check(mask, s.gt, cfg.coverage_min);
      v.coverage = c.fraction;
      fail[2] = !c.pass;
    }
    for (int k = 0; k < 4; ++k) {
      if (!fail[k]) continue;
      ++failed[k];
      if (v.kept) {
        v.kept = false;
        v.reason = stages[k];
        ++first[k];
      }
    }
    if (v.kept) res.kept.push_back(i);
    res.verdicts.push_back(std::move(v));
  }
  res.summary.kept = res.kept.size();
  const bool enabled[4] = {cfg.consistency, cfg.components, cfg.coverage, cfg.presence};
  for (int k = 0; k < 4; ++k) {
    if (!enabled[k]) continue;
    res.summary.failed.emplace_back(stages[k], failed[k]);
    res.summary.first_reason.emplace_back(stages[k], first[k]);
  }
  return res;
}

}  // namespace ambiseg::curation

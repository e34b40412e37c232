#include <cmath>

#include "ambiseg/iterloop.hpp"

namespace ambiseg::loop {

LabelerConfig::LabelerConfig() {
  model.input = net::InputKind::Modalities;
  model.heads = 1;
  model.modalities = scene::modality_config();
  train.use_scores = false;
  train.loss.regularizer_includes_winner = false;  // one head: total is the mask loss alone
}

void LabelerConfig::validate() const {
  model.validate();
  train.validate();
  if (model.input != net::InputKind::Modalities) throw std::invalid_argument("labeler: model input must be modalities");
  if (model.heads != 1) throw std::invalid_argument("labeler: model must have one head");
  if (!(model.modalities == scene::modality_config())) {
    throw std::invalid_argument("labeler: modality channel counts differ from the generator's");
  }
}

net::ModalityBundle bundle_for(const scene::Sample& s, const scene::ModalityCorruption& c,
                               const scene::ModalitySelection& sel, int draw) {
  Rng rng(derive_seed(s.seed, scene::kStreamModality, static_cast<std::uint64_t>(draw)));
  return scene::apply_selection(scene::synthesize_modalities(s, c, rng), sel);
}

LabelerResult train_labeler(const std::vector<scene::Sample>& seed_set, const LabelerConfig& cfg) {
  cfg.validate();
  for (const auto& s : seed_set) {
    if (s.image.height() != cfg.model.height || s.image.width() != cfg.model.width) {
      throw std::invalid_argument("train_labeler: sample " + s.id + " is not at the model resolution");
    }
  }
  LabelerResult res{net::Network(cfg.model), {}};
  std::vector<const Mask*> targets;
  for (const auto& s : seed_set) targets.push_back(&s.gt);
  std::vector<net::ModalityBundle> fixed;
  if (!cfg.redraw_corruption) {
    for (const auto& s : seed_set) fixed.push_back(bundle_for(s, cfg.corruption, cfg.selection));
  }
  BundleSource src = [&](std::size_t i, int epoch) {
    if (!cfg.redraw_corruption) return fixed[i];
    return bundle_for(seed_set[i], cfg.corruption, cfg.selection, epoch + 1);
  };
  res.train = train(res.model, seed_set.size(), src, targets, cfg.train);
  return res;
}

std::vector<Mask> label_dataset(const net::Network& labeler, const std::vector<scene::Sample>& samples,
                                const scene::ModalityCorruption& c, const scene::ModalitySelection& sel) {
  std::vector<net::ModalityBundle> bundles;
  bundles.reserve(samples.size());
  for (const auto& s : samples) bundles.push_back(bundle_for(s, c, sel));
  std::vector<const net::ModalityBundle*> ptrs;
  for (const auto& b : bundles) ptrs.push_back(&b);
  std::vector<Mask> labels;
  for (const auto& out : labeler.predict(ptrs)) labels.push_back(binarize(out.masks[out.best_scored()]));
  return labels;
}

Real decoding_iou(const std::vector<Mask>& labels, const std::vector<scene::Sample>& samples) {
  if (labels.size() != samples.size() || labels.empty()) {
    throw std::invalid_argument("decoding_iou: label and sample counts differ or are zero");
  }
  Real acc = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) acc += metrics::iou_binary(labels[i], samples[i].gt);
  return acc / static_cast<Real>(labels.size());
}

Real image_kappa(const curation::MaskPredictor& model, const scene::Sample& s,
                 const std::vector<curation::Transform>& transforms) {
  if (transforms.empty()) throw std::invalid_argument("image_kappa: empty transform set");
  Real acc = 0;
  for (auto t : transforms) {
    acc += metrics::iou_binary(curation::invert(t, model(curation::apply(t, s))), s.gt);
  }
  return acc / static_cast<Real>(transforms.size());
}

std::vector<curation::Transform> scoring_transforms() {
  std::vector<curation::Transform> ts{curation::Transform::Identity};
  for (auto t : curation::default_transforms()) ts.push_back(t);
  return ts;
}

std::vector<Real> category_scores(const curation::MaskPredictor& model,
                                  const std::vector<scene::Sample>& heldout, std::size_t categories,
                                  const std::vector<curation::Transform>& transforms) {
  std::vector<Real> sum(categories, 0.0);
  std::vector<std::size_t> n(categories, 0);
  for (const auto& s : heldout) {
    if (s.category < 0 || static_cast<std::size_t>(s.category) >= categories) {
      throw std::invalid_argument("category_scores: sample " + s.id + " has an out-of-range category");
    }
    const auto c = static_cast<std::size_t>(s.category);
    sum[c] += image_kappa(model, s, transforms);
    ++n[c];
  }
  for (std::size_t c = 0; c < categories; ++c) {
    if (n[c] == 0) throw std::invalid_argument("category_scores: no held-out samples for category " + std::to_string(c));
    sum[c] /= static_cast<Real>(n[c]);
  }
  return sum;
}

std::vector<Real> update_weights(const std::vector<Real>& kappa, const WeightParams& p) {
  if (kappa.empty()) throw std::invalid_argument("update_weights: no categories");
  const Real C = static_cast<Real>(kappa.size());
  const Real w_min = p.w_min < 0 ? 1.0 / C : p.w_min;
  const Real w_new = p.w_new < 0 ? 4.0 / C : p.w_new;
  std::vector<Real> w;
  for (Real k : kappa) {
    if (!(k >= 0.0 && k <= 1.0)) throw std::invalid_argument("update_weights: score outside [0,1]");
    Real e = std::exp(-p.alpha * (k - p.beta));
    if (p.clamp) e = std::min(1.0, e);
    w.push_back(w_min + w_new * e);
  }
  return w;
}

std::vector<Real> normalize(const std::vector<Real>& w) {
  Real s = 0;
  for (Real v : w) {
    if (!(v >= 0.0)) throw std::invalid_argument("normalize: negative weight");
    s += v;
  }
  if (!(s > 0)) throw std::invalid_argument("normalize: weights sum to zero");
  std::vector<Real> out;
  for (Real v : w) out.push_back(v / s);
  return out;
}

std::vector<std::size_t> allocate(std::size_t total, const std::vector<Real>& weights) {
  const auto p = normalize(weights);
  std::vector<std::size_t> n(p.size());
  std::vector<std::pair<Real, std::size_t>> rem;
  std::size_t used = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Real q = p[i] * static_cast<Real>(total);
    n[i] = static_cast<std::size_t>(std::floor(q));
    used += n[i];
    rem.emplace_back(q - std::floor(q), i);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; used < total; ++k, ++used) ++n[rem[k % rem.size()].second];
  return n;
}

}  // namespace ambiseg::loop

#include <algorithm>
#include <cmath>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <stdexcept>

#include "ambiseg/rng.hpp"
#include "ambiseg/shell.hpp"

using nlohmann::json;

namespace ambiseg {
namespace {

void check_keys(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + ": expected an object");
  for (const auto& [k, v] : j.items()) {
    if (std::find_if(keys.begin(), keys.end(), [&](const char* a) { return k == a; }) != keys.end()) continue;
    std::string allowed;
    for (const char* a : keys) allowed += std::string(allowed.empty() ? "" : ", ") + a;
    throw std::invalid_argument(where + ": unknown key '" + k + "' (allowed: " + allowed + ")");
  }
}

template <class T>
void read(const json& j, const char* key, T& dst, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    dst = it->template get<T>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(where + "." + key + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(where + "." + key + ": " + e.what());
  }
}

const char* focal_name(objective::FocalVariant v) {
  return v == objective::FocalVariant::Symmetric ? "symmetric" : "positive_only";
}

const char* winner_name(objective::WinnerRule r) {
  switch (r) {
    case objective::WinnerRule::ArgmaxIoU: return "argmax_iou";
    case objective::WinnerRule::ArgminIoU: return "argmin_iou";
    case objective::WinnerRule::ArgmaxPredictedScore: return "argmax_score";
  }
  return "?";
}

}  // namespace

namespace objective {

void to_json(json& j, const LossConfig& c) {
  j = json{{"focusing", c.focusing},
           {"lambda_mask", c.lambda_mask},
           {"lambda_score", c.lambda_score},
           {"lambda_reg", c.lambda_reg},
           {"decay", c.decay},
           {"focal", focal_name(c.focal)},
           {"normalize_focal", c.normalize_focal},
           {"winner", winner_name(c.winner)},
           {"regularizer_includes_winner", c.regularizer_includes_winner},
           {"binarized_score_target", c.binarized_score_target},
           {"detach_score_target", c.detach_score_target},
           {"clamp_eps", c.clamp_eps}};
}

void from_json(const json& j, LossConfig& c) {
  const std::string w = "loss";
  check_keys(j, {"focusing", "lambda_mask", "lambda_score", "lambda_reg", "decay", "focal", "normalize_focal", "winner",
                 "regularizer_includes_winner", "binarized_score_target", "detach_score_target", "clamp_eps"},
             w);
  read(j, "focusing", c.focusing, w);
  read(j, "lambda_mask", c.lambda_mask, w);
  read(j, "lambda_score", c.lambda_score, w);
  read(j, "lambda_reg", c.lambda_reg, w);
  read(j, "decay", c.decay, w);
  std::string s;
  read(j, "focal", s, w);
  if (s == "symmetric") c.focal = FocalVariant::Symmetric;
  else if (s == "positive_only") c.focal = FocalVariant::PositiveOnly;
  else if (!s.empty()) throw std::invalid_argument("loss.focal must be 'symmetric' or 'positive_only', got '" + s + "'");
  s.clear();
  read(j, "winner", s, w);
  if (s == "argmax_iou") c.winner = WinnerRule::ArgmaxIoU;
  else if (s == "argmin_iou") c.winner = WinnerRule::ArgminIoU;
  else if (s == "argmax_score") c.winner = WinnerRule::ArgmaxPredictedScore;
  else if (!s.empty()) {
    throw std::invalid_argument("loss.winner must be argmax_iou, argmin_iou or argmax_score, got '" + s + "'");
  }
  read(j, "normalize_focal", c.normalize_focal, w);
  read(j, "regularizer_includes_winner", c.regularizer_includes_winner, w);
  read(j, "binarized_score_target", c.binarized_score_target, w);
  read(j, "detach_score_target", c.detach_score_target, w);
  read(j, "clamp_eps", c.clamp_eps, w);
}

}  // namespace objective

namespace scene {

void to_json(json& j, const GeneratorConfig& c) {
  j = json{{"pixels", c.pixels},
           {"aspect_variety", c.aspect_variety},
           {"p_amb", c.ambiguity.p_amb},
           {"k_max", c.ambiguity.k_max},
           {"max_retries", c.max_retries}};
}

void from_json(const json& j, GeneratorConfig& c) {
  const std::string w = "generator";
  check_keys(j, {"pixels", "aspect_variety", "p_amb", "k_max", "max_retries"}, w);
  read(j, "pixels", c.pixels, w);
  read(j, "aspect_variety", c.aspect_variety, w);
  read(j, "p_amb", c.ambiguity.p_amb, w);
  read(j, "k_max", c.ambiguity.k_max, w);
  read(j, "max_retries", c.max_retries, w);
  if (c.pixels < 64) throw std::invalid_argument("generator.pixels must be at least 64");
  if (!(c.ambiguity.p_amb >= 0 && c.ambiguity.p_amb <= 1)) throw std::invalid_argument("generator.p_amb must be in [0,1]");
  if (c.ambiguity.k_max < 1) throw std::invalid_argument("generator.k_max must be at least 1");
  if (c.max_retries < 1) throw std::invalid_argument("generator.max_retries must be positive");
}

void to_json(json& j, const ModalityCorruption& c) {
  j = json{{"semantic_blur", c.semantic_blur},         {"semantic_drop", c.semantic_drop},
           {"small_object_drop", c.small_object_drop}, {"small_object_area", c.small_object_area},
           {"generative_jitter", c.generative_jitter}, {"generative_noise", c.generative_noise},
           {"concept_sigma", c.concept_sigma},         {"concept_shift", c.concept_shift}};
}

void from_json(const json& j, ModalityCorruption& c) {
  const std::string w = "corruption";
  check_keys(j, {"semantic_blur", "semantic_drop", "small_object_drop", "small_object_area", "generative_jitter",
                 "generative_noise", "concept_sigma", "concept_shift"},
             w);
  read(j, "semantic_blur", c.semantic_blur, w);
  read(j, "semantic_drop", c.semantic_drop, w);
  read(j, "small_object_drop", c.small_object_drop, w);
  read(j, "small_object_area", c.small_object_area, w);
  read(j, "generative_jitter", c.generative_jitter, w);
  read(j, "generative_noise", c.generative_noise, w);
  read(j, "concept_sigma", c.concept_sigma, w);
  read(j, "concept_shift", c.concept_shift, w);
  for (Real p : {c.semantic_drop, c.small_object_drop}) {
    if (!(p >= 0 && p <= 1)) throw std::invalid_argument("corruption: drop probabilities must be in [0,1]");
  }
}

void to_json(json& j, const ModalitySelection& c) {
  j = json{{"semantic", c.semantic}, {"generative", c.generative}, {"concept", c.concept_maps}};
}

void from_json(const json& j, ModalitySelection& c) {
  const std::string w = "labeler.selection";
  check_keys(j, {"semantic", "generative", "concept"}, w);
  read(j, "semantic", c.semantic, w);
  read(j, "generative", c.generative, w);
  read(j, "concept", c.concept_maps, w);
}

}  // namespace scene

namespace loop {

void to_json(json& j, const TrainConfig& c) {
  j = json{{"epochs", c.epochs},
           {"batch", c.batch},
           {"lr", c.adam.lr},
           {"beta1", c.adam.beta1},
           {"beta2", c.adam.beta2},
           {"eps", c.adam.eps},
           {"seed", c.seed},
           {"use_scores", c.use_scores},
           {"loss", c.loss}};
}

void from_json(const json& j, TrainConfig& c) {
  const std::string w = "train";
  check_keys(j, {"epochs", "batch", "lr", "beta1", "beta2", "eps", "seed", "use_scores", "loss"}, w);
  read(j, "epochs", c.epochs, w);
  read(j, "batch", c.batch, w);
  read(j, "lr", c.adam.lr, w);
  read(j, "beta1", c.adam.beta1, w);
  read(j, "beta2", c.adam.beta2, w);
  read(j, "eps", c.adam.eps, w);
  read(j, "seed", c.seed, w);
  read(j, "use_scores", c.use_scores, w);
  if (j.contains("loss")) from_json(j.at("loss"), c.loss);
}

void to_json(json& j, const WeightParams& c) {
  j = json{{"alpha", c.alpha}, {"beta", c.beta}, {"w_min", c.w_min}, {"w_new", c.w_new}, {"clamp", c.clamp}};
}

void from_json(const json& j, WeightParams& c) {
  const std::string w = "loop.weights";
  check_keys(j, {"alpha", "beta", "w_min", "w_new", "clamp"}, w);
  read(j, "alpha", c.alpha, w);
  read(j, "beta", c.beta, w);
  read(j, "w_min", c.w_min, w);
  read(j, "w_new", c.w_new, w);
  read(j, "clamp", c.clamp, w);
}

void to_json(json& j, const LabelerConfig& c) {
  j = json{{"model", c.model},
           {"train", c.train},
           {"corruption", c.corruption},
           {"selection", c.selection},
           {"redraw_corruption", c.redraw_corruption}};
}

void from_json(const json& j, LabelerConfig& c) {
  const std::string w = "labeler";
  check_keys(j, {"model", "train", "corruption", "selection", "redraw_corruption"}, w);
  if (j.contains("model")) net::from_json(j.at("model"), c.model);
  if (j.contains("train")) from_json(j.at("train"), c.train);
  if (j.contains("corruption")) scene::from_json(j.at("corruption"), c.corruption);
  if (j.contains("selection")) scene::from_json(j.at("selection"), c.selection);
  read(j, "redraw_corruption", c.redraw_corruption, w);
}

}  // namespace loop

namespace shell {
namespace {

constexpr std::uint64_t kStudentSeedStream = 0x51;
constexpr std::uint64_t kTrainSeedStream = 0x52;
constexpr std::uint64_t kLabelerModelStream = 0x53;
constexpr std::uint64_t kLabelerTrainStream = 0x54;

// Per-section seeds are derived from the top-level seed, so the file holds one.
json without_seed(json j) {
  j.erase("seed");
  return j;
}

void reject_seed(const json& j, const std::string& where) {
  if (j.contains("seed")) {
    throw std::invalid_argument(where + ": 'seed' is not set per section; use the top-level seed");
  }
}

}  // namespace

std::size_t RunConfig::scaled_samples() const {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<Real>(samples) * scale)));
}

loop::LoopConfig RunConfig::resolved_loop() const {
  loop::LoopConfig l = loop;
  l.seed = seed;
  l.scale = scale;
  l.student.seed = derive_seed(seed, kStudentSeedStream);
  l.student_train.seed = derive_seed(seed, kTrainSeedStream);
  l.labeler.model.seed = derive_seed(seed, kLabelerModelStream);
  l.labeler.train.seed = derive_seed(seed, kLabelerTrainStream);
  l.labeler.corruption = l.corruption;
  return l;
}

net::ModelConfig RunConfig::resolved_model() const { return resolved_loop().student; }
loop::TrainConfig RunConfig::resolved_train() const { return resolved_loop().student_train; }

void RunConfig::validate() const {
  if (precision != kPrecision) {
    throw std::invalid_argument("precision '" + precision + "' is not available; this build computes in " +
                                std::string(kPrecision));
  }
  if (!(scale > 0 && scale <= 1)) throw std::invalid_argument("scale must be in (0, 1]");
  if (samples == 0) throw std::invalid_argument("samples must be positive");
  if (!category_weights.empty()) {
    if (category_weights.size() != loop.categories) {
      throw std::invalid_argument("category_weights has " + std::to_string(category_weights.size()) +
                                  " entries but categories = " + std::to_string(loop.categories));
    }
    Real total = 0;
    for (Real w : category_weights) {
      if (!(w >= 0) || !std::isfinite(w)) throw std::invalid_argument("category_weights must be finite and >= 0");
      total += w;
    }
    if (!(total > 0)) throw std::invalid_argument("category_weights must not all be zero");
  }
  resolved_loop().validate();
}

void to_json(json& j, const RunConfig& c) {
  const auto& l = c.loop;
  json filter = l.filter;
  filter["enabled"] = l.filtering;
  json labeler{{"model", without_seed(l.labeler.model)},
               {"train", without_seed(l.labeler.train)},
               {"selection", l.labeler.selection},
               {"redraw_corruption", l.labeler.redraw_corruption}};
  json train = without_seed(l.student_train);
  train.erase("loss");
  j = json{{"seed", c.seed},
           {"out", c.out},
           {"scale", c.scale},
           {"precision", c.precision},
           {"samples", c.samples},
           {"category_weights", c.category_weights},
           {"mode", metrics::to_string(c.mode)},
           {"categories", l.categories},
           {"hard_categories", l.hard_categories},
           {"model", without_seed(l.student)},
           {"loss", l.student_train.loss},
           {"train", train},
           {"generator", l.generator},
           {"corruption", l.corruption},
           {"curation", filter},
           {"labeler", labeler},
           {"loop",
            {{"rounds", l.rounds},
             {"per_category", l.per_category},
             {"heldout_per_category", l.heldout_per_category},
             {"labeler_seed_set", l.labeler_seed_set},
             {"weights", l.weights},
             {"from_scratch", l.from_scratch},
             {"accumulate", l.accumulate},
             {"gt_labels", l.gt_labels},
             {"write_samples", l.write_samples}}}};
}

void from_json(const json& j, RunConfig& c) {
  const std::string w = "config";
  check_keys(j, {"seed", "out", "scale", "precision", "samples", "category_weights", "mode", "categories",
                 "hard_categories", "model", "loss", "train", "generator", "corruption", "curation", "labeler", "loop"},
             w);
  c = RunConfig{};
  auto& l = c.loop;
  read(j, "seed", c.seed, w);
  read(j, "out", c.out, w);
  read(j, "scale", c.scale, w);
  read(j, "precision", c.precision, w);
  read(j, "samples", c.samples, w);
  read(j, "category_weights", c.category_weights, w);
  std::string mode;
  read(j, "mode", mode, w);
  if (!mode.empty()) c.mode = metrics::selection_mode_from_string(mode);
  read(j, "categories", l.categories, w);
  read(j, "hard_categories", l.hard_categories, w);
  if (j.contains("model")) {
    reject_seed(j.at("model"), "model");
    net::from_json(j.at("model"), l.student);
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    reject_seed(t, "train");
    if (t.contains("loss")) throw std::invalid_argument("train: the loss lives in the top-level 'loss' section");
    loop::from_json(t, l.student_train);
  }
  if (j.contains("loss")) objective::from_json(j.at("loss"), l.student_train.loss);
  if (j.contains("generator")) scene::from_json(j.at("generator"), l.generator);
  if (j.contains("corruption")) scene::from_json(j.at("corruption"), l.corruption);
  if (j.contains("curation")) {
    json f = j.at("curation");
    if (!f.is_object()) throw std::invalid_argument("curation: expected an object");
    if (f.contains("enabled")) {
      read(f, "enabled", l.filtering, "curation");
      f.erase("enabled");
    }
    curation::from_json(f, l.filter);
  }
  if (j.contains("labeler")) {
    const json& lj = j.at("labeler");
    check_keys(lj, {"model", "train", "selection", "redraw_corruption"}, "labeler");
    if (lj.contains("model")) {
      reject_seed(lj.at("model"), "labeler.model");
      net::from_json(lj.at("model"), l.labeler.model);
    }
    if (lj.contains("train")) {
      reject_seed(lj.at("train"), "labeler.train");
      loop::from_json(lj.at("train"), l.labeler.train);
    }
    if (lj.contains("selection")) scene::from_json(lj.at("selection"), l.labeler.selection);
    read(lj, "redraw_corruption", l.labeler.redraw_corruption, "labeler");
  }
  if (j.contains("loop")) {
    const json& r = j.at("loop");
    const std::string lw = "loop";
    check_keys(r, {"rounds", "per_category", "heldout_per_category", "labeler_seed_set", "weights", "from_scratch",
                   "accumulate", "gt_labels", "write_samples"},
               lw);
    read(r, "rounds", l.rounds, lw);
    read(r, "per_category", l.per_category, lw);
    read(r, "heldout_per_category", l.heldout_per_category, lw);
    read(r, "labeler_seed_set", l.labeler_seed_set, lw);
    if (r.contains("weights")) loop::from_json(r.at("weights"), l.weights);
    read(r, "from_scratch", l.from_scratch, lw);
    read(r, "accumulate", l.accumulate, lw);
    read(r, "gt_labels", l.gt_labels, lw);
    read(r, "write_samples", l.write_samples, lw);
  }
}

RunConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c = j.get<RunConfig>();
  c.validate();
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
}

std::string dump_config(const RunConfig& c) { return json(c).dump(2) + "\n"; }

}  // namespace shell
}  // namespace ambiseg

#pragma once

// Run configuration, the command implementations behind the CLI verbs, and
// the finite-difference suite used by `gradcheck`.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ambiseg/iterloop.hpp"
#include "json.hpp"

namespace ambiseg::objective {
void to_json(nlohmann::json& j, const LossConfig& c);
void from_json(const nlohmann::json& j, LossConfig& c);
}  // namespace ambiseg::objective

namespace ambiseg::scene {
void to_json(nlohmann::json& j, const GeneratorConfig& c);
void from_json(const nlohmann::json& j, GeneratorConfig& c);
void to_json(nlohmann::json& j, const ModalityCorruption& c);
void from_json(const nlohmann::json& j, ModalityCorruption& c);
void to_json(nlohmann::json& j, const ModalitySelection& c);
void from_json(const nlohmann::json& j, ModalitySelection& c);
}  // namespace ambiseg::scene

namespace ambiseg::loop {
// TrainConfig carries its loss under "loss"
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const WeightParams& c);
void from_json(const nlohmann::json& j, WeightParams& c);
void to_json(nlohmann::json& j, const LabelerConfig& c);
void from_json(const nlohmann::json& j, LabelerConfig& c);
}  // namespace ambiseg::loop

namespace ambiseg::shell {

inline constexpr const char* kPrecision = "float64";

struct RunConfig {
  std::uint64_t seed = 1;
  std::string out = "out";
  Real scale = 1.0;  // desk runs use <= 1
  std::string precision = kPrecision;
  std::size_t samples = 320;            // generate / train set size before scaling
  std::vector<Real> category_weights;   // generate; empty = uniform
  metrics::SelectionMode mode = metrics::SelectionMode::Selected;
  // categories, generator, corruption, model (student), loss + train,
  // labeler, curation and the round settings
  loop::LoopConfig loop;

  void validate() const;

  /// Loop config with every seed derived from `seed` and `scale` applied.
  loop::LoopConfig resolved_loop() const;
  net::ModelConfig resolved_model() const;
  loop::TrainConfig resolved_train() const;
  std::size_t scaled_samples() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
std::string dump_config(const RunConfig& c);

using Log = std::function<void(const std::string&)>;

struct GenerateResult {
  std::size_t count = 0;
  std::vector<std::size_t> histogram;  // samples per category
  std::string manifest_hash;
};
/// Writes images/, masks/ and manifest.jsonl under cfg.out.
GenerateResult cmd_generate(const RunConfig& cfg, const Log& log = {});

struct TrainSummary {
  loop::TrainResult train;
  metrics::MetricsReport selected, oracle_best;
};
/// Trains the image model on `data_dir` (or a generated set when empty),
/// evaluates it on a generated held-out set and writes student.ckpt,
/// train.json, report.json and report.csv under cfg.out.
TrainSummary cmd_train(const RunConfig& cfg, const std::string& data_dir = "", const Log& log = {});

/// Scores the masks in `pred_dir` against same-named masks in `gt_dir`.
/// Predictions are read as soft 8-bit rasters, ground truths binarized.
metrics::MetricsReport cmd_eval_dirs(const std::string& pred_dir, const std::string& gt_dir,
                                     const std::string& out_dir = "");

/// Scores a checkpoint on a dataset directory under cfg.mode.
metrics::MetricsReport cmd_eval_model(const RunConfig& cfg, const std::string& checkpoint,
                                      const std::string& data_dir, const std::string& out_dir = "");

/// Runs the curation stages over a dataset directory. With a checkpoint the
/// model's predictions are checked and the dataset masks are the reference
/// objects; without one only the mask-only stages (components, presence) can
/// run, on the dataset masks. Writes filter.json and an updated
/// manifest.jsonl under cfg.out.
curation::FilterResult cmd_filter(const RunConfig& cfg, const std::string& data_dir,
                                  const std::string& checkpoint = "", const Log& log = {});

loop::PipelineResult cmd_loop(const RunConfig& cfg, const Log& log = {});

// ---- finite-difference suite -------------------------------------------------

struct GradCheckEntry {
  std::string name;
  int instances = 0;
  Real worst = 0;
  Real tolerance = 0;
  bool pass() const { return worst <= tolerance; }
};

/// Every diffcore primitive and objective loss on `instances` random cases
/// (tolerance 1e-5), then a full model + objective check on a 16x16
/// two-stage config (tolerance 1e-4).
std::vector<GradCheckEntry> gradcheck_suite(std::uint64_t seed, int instances = 50);

}  // namespace ambiseg::shell

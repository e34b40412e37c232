#pragma once

// Training, the labeler that turns modality bundles into labels, per-category
// scoring and the category reweighting loop.

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ambiseg/curation.hpp"
#include "ambiseg/dataset.hpp"
#include "ambiseg/metrics.hpp"
#include "ambiseg/netmodel.hpp"
#include "ambiseg/objective.hpp"
#include "ambiseg/scenegen.hpp"

namespace ambiseg::loop {

// ---- training ----------------------------------------------------------------

struct AdamConfig {
  Real lr = 1e-3;
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real eps = 1e-8;
};

struct TrainConfig {
  int epochs = 30;
  std::size_t batch = 16;
  AdamConfig adam;
  std::uint64_t seed = 1;
  objective::LossConfig loss;
  bool use_scores = true;  // false: mask loss only, score head untouched

  void validate() const;
};

/// Moment estimates carried between train calls when fine-tuning.
struct AdamState {
  std::map<std::string, Tensor> m, v;
  long step = 0;
};

struct TrainResult {
  std::vector<Real> epoch_loss;  // mean per-sample total objective
  long steps = 0;
};

struct ImageExample {
  const Raster* image = nullptr;
  const Mask* target = nullptr;
};

/// Bundles come from a callback so corruption can be redrawn per epoch.
using BundleSource = std::function<net::ModalityBundle(std::size_t index, int epoch)>;

struct NonFiniteLoss : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Mini-batch Adam on the total objective. The decay clock t is
/// `first_epoch + e` for epoch e; batch order is drawn from cfg.seed.
TrainResult train(net::Network& model, const std::vector<ImageExample>& data, const TrainConfig& cfg,
                  AdamState* state = nullptr, int first_epoch = 0);
TrainResult train(net::Network& model, std::size_t count, const BundleSource& bundles,
                  const std::vector<const Mask*>& targets, const TrainConfig& cfg,
                  AdamState* state = nullptr, int first_epoch = 0);

// ---- labeler -----------------------------------------------------------------

struct LabelerConfig {
  net::ModelConfig model;  // input = Modalities, heads = 1 enforced
  TrainConfig train;
  scene::ModalityCorruption corruption;
  scene::ModalitySelection selection;
  bool redraw_corruption = true;  // fresh corruption draw every epoch

  LabelerConfig();
  void validate() const;
};

/// Bundle for a sample; draw 0 is the one used for labeling and evaluation.
net::ModalityBundle bundle_for(const scene::Sample& s, const scene::ModalityCorruption& c,
                               const scene::ModalitySelection& sel, int draw = 0);

struct LabelerResult {
  net::Network model;
  TrainResult train;
};
LabelerResult train_labeler(const std::vector<scene::Sample>& seed_set, const LabelerConfig& cfg);

/// Binary labels (soft output thresholded at 0.5).
std::vector<Mask> label_dataset(const net::Network& labeler, const std::vector<scene::Sample>& samples,
                                const scene::ModalityCorruption& c, const scene::ModalitySelection& sel = {});

/// Mean binary IoU of labels against generator gt.
Real decoding_iou(const std::vector<Mask>& labels, const std::vector<scene::Sample>& samples);

// ---- scoring and weights -------------------------------------------------------

/// Per-image kappa against gt: mean IoU over the transforms of the
/// inverse-mapped prediction on the transformed sample.
Real image_kappa(const curation::MaskPredictor& model, const scene::Sample& s,
                 const std::vector<curation::Transform>& transforms);

std::vector<curation::Transform> scoring_transforms();  // identity + default set

/// Mean kappa per category over the held-out samples of that category.
std::vector<Real> category_scores(const curation::MaskPredictor& model,
                                  const std::vector<scene::Sample>& heldout, std::size_t categories,
                                  const std::vector<curation::Transform>& transforms = scoring_transforms());

struct WeightParams {
  Real alpha = 8.0;
  Real beta = 0.5;
  Real w_min = -1;  // negative: 1/|C|
  Real w_new = -1;  // negative: 4/|C|
  bool clamp = true;
};

std::vector<Real> update_weights(const std::vector<Real>& kappa, const WeightParams& p = {});
/// Weights divided by their sum.
std::vector<Real> normalize(const std::vector<Real>& w);

/// Largest-remainder split of `total` samples over normalized weights.
std::vector<std::size_t> allocate(std::size_t total, const std::vector<Real>& weights);

// ---- rounds --------------------------------------------------------------------

struct LoopConfig {
  std::size_t categories = 32;
  std::vector<int> hard_categories;
  int rounds = 3;
  std::size_t per_category = 100;  // round-1 budget before scaling
  Real scale = 1.0;
  std::size_t heldout_per_category = 20;
  std::size_t labeler_seed_set = 500;
  std::uint64_t seed = 1;
  scene::GeneratorConfig generator;
  scene::ModalityCorruption corruption;
  net::ModelConfig student;
  TrainConfig student_train;
  LabelerConfig labeler;
  curation::FilterConfig filter;
  bool filtering = true;
  WeightParams weights;
  bool from_scratch = false;     // retrain the student each round instead of continuing
  bool accumulate = true;        // train on all kept data so far
  bool gt_labels = false;        // diagnostic upper bound: student sees generator gt
  bool write_samples = true;     // images/ and masks/ under each round directory

  void validate() const;
};

struct RoundState {
  int round = 0;
  std::vector<Real> weights;     // used to draw this round's samples
  std::vector<Real> scores;      // kappa-bar after training
  std::vector<Real> next_weights;
  std::vector<std::size_t> allocation;
  std::vector<std::string> kept, rejected;
  std::vector<data::ManifestRecord> manifest;
  curation::FilterSummary filter;
  TrainResult train;
  Real label_iou = 0;            // labels vs generator gt, this round
  std::vector<Real> category_iou;  // held-out selected-branch IoU per category
  metrics::MetricsReport selected, oracle_best;

  Real mean_score() const;
};

nlohmann::ordered_json to_json(const RoundState& s);

/// Everything a round needs that persists across rounds.
struct LoopContext {
  LoopConfig cfg;
  std::vector<scene::CategorySpec> categories;
  std::vector<scene::Sample> heldout;
  std::optional<net::Network> labeler;
  std::optional<net::Network> student;
  AdamState adam;
  int epochs_done = 0;
  std::vector<scene::Sample> pool;  // kept samples so far
  std::vector<Mask> pool_labels;
  std::string out_dir;              // empty: no artifacts
  std::function<void(const std::string&)> log;

  explicit LoopContext(LoopConfig c);
};

/// Category specs of a run, drawn from cfg.seed.
std::vector<scene::CategorySpec> loop_categories(const LoopConfig& cfg);

/// Builds categories, the frozen held-out set and the labeler.
void prepare(LoopContext& ctx);

RoundState run_round(LoopContext& ctx, int round, const std::vector<Real>& weights);

struct PipelineResult {
  std::vector<RoundState> rounds;
  metrics::MetricsReport selected, oracle_best;
  Real labeler_iou = 0;
};

PipelineResult run_pipeline(const LoopConfig& cfg, const std::string& out_dir = "",
                            std::function<void(const std::string&)> log = {});

/// Held-out evaluation of an image model.
std::pair<metrics::MetricsReport, metrics::MetricsReport> evaluate_model(
    const net::Network& model, const std::vector<scene::Sample>& samples, const std::string& dataset);

}  // namespace ambiseg::loop

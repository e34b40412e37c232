#pragma once

// Rule-based quality filter for generated samples: prediction consistency
// under transforms, mask cohesion, coverage of the designated object, and a
// minimum-presence check.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ambiseg/metrics.hpp"
#include "ambiseg/netmodel.hpp"
#include "ambiseg/scenegen.hpp"
#include "json.hpp"

namespace ambiseg::curation {

enum class Transform { Identity, FlipHorizontal, FlipVertical, Rescale };

const char* to_string(Transform t);
Transform transform_from_string(const std::string& s);

/// Default consistency set: both flips and a 0.75x down-then-up resample.
std::vector<Transform> default_transforms();

/// Applies T to a sample's image and masks. Rescale degrades the image and
/// masks in place and keeps the geometry, so its mask inverse is the identity.
scene::Sample apply(Transform t, const scene::Sample& s);
/// Maps a mask predicted on T(sample) back to the original frame.
Mask invert(Transform t, const Mask& m);

inline constexpr Real kRescaleFactor = 0.75;

/// Binary mask predicted for a sample. Implementations must be deterministic.
using MaskPredictor = std::function<Mask(const scene::Sample&)>;

/// Score-selected branch of an image model, thresholded at 0.5.
MaskPredictor image_model(const net::Network& model);
/// Labeler over the sample's synthesized modalities. The modality rng is
/// seeded from the sample seed so transformed copies see the same draws.
MaskPredictor labeler_model(const net::Network& labeler, const scene::ModalityCorruption& corruption,
                            const scene::ModalitySelection& selection = {});
/// Stubs.
MaskPredictor gt_oracle();
MaskPredictor constant_mask(Real value);
MaskPredictor left_half();

/// Mean binary IoU between the base prediction and each inverse-mapped
/// transformed prediction.
Real consistency_score(const MaskPredictor& model, const scene::Sample& s,
                       const std::vector<Transform>& transforms);

struct ComponentResult {
  std::size_t count = 0;    // main components
  std::size_t total = 0;    // all components
  std::size_t largest = 0;  // pixels
  bool pass = false;
};

/// 4-connected components of the foreground; a component is main when its
/// area is at least `main_fraction` of the foreground.
ComponentResult component_check(const Mask& m, Real main_fraction = 0.005, std::size_t max_count = 5);

/// Component label image (0 = background, 1..n), 4-connectivity.
std::vector<int> label_components(const Mask& m, std::size_t* count = nullptr);

struct CoverageResult {
  Real fraction = 0;
  bool pass = false;
};
CoverageResult coverage_check(const Mask& pred, const Mask& reference, Real threshold = 0.70);

struct FilterConfig {
  bool consistency = true;
  bool components = true;
  bool coverage = true;
  bool presence = true;
  Real tau = 0.8;
  Real main_fraction = 0.005;
  std::size_t max_components = 5;
  Real coverage_min = 0.70;
  Real presence_min = 0.01;  // largest component, fraction of the image
  std::vector<Transform> transforms = default_transforms();

  void validate() const;
};

void to_json(nlohmann::json& j, const FilterConfig& c);
void from_json(const nlohmann::json& j, FilterConfig& c);

struct FilterVerdict {
  std::string id;
  bool kept = true;
  std::optional<Real> consistency;
  std::optional<std::size_t> components;
  std::optional<Real> coverage;
  std::optional<Real> presence;
  std::string reason;  // first failing stage, empty when kept
};

struct FilterSummary {
  std::size_t total = 0, kept = 0;
  std::vector<std::pair<std::string, std::size_t>> failed;     // per stage, any failure
  std::vector<std::pair<std::string, std::size_t>> first_reason;  // per stage, as reported
  Real rejection_fraction() const {
    return total == 0 ? 0.0 : static_cast<Real>(total - kept) / static_cast<Real>(total);
  }
};

nlohmann::ordered_json to_json(const FilterSummary& s);

struct FilterResult {
  std::vector<std::size_t> kept;  // indices into the input
  std::vector<FilterVerdict> verdicts;
  FilterSummary summary;
};

/// Stages in order: consistency, components, coverage, presence. The checked
/// mask is `labels[i]` when given, otherwise the model's prediction; coverage
/// is measured against the sample's designated object.
FilterResult filter_dataset(const MaskPredictor& model, const std::vector<scene::Sample>& samples,
                            const FilterConfig& cfg, const std::vector<Mask>* labels = nullptr);

}  // namespace ambiseg::curation

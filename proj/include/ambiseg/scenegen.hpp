#pragma once

// Procedural scenes with one or more plausible salient objects, ground-truth
// masks, and proxy modality bundles for the labeler.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ambiseg/netmodel.hpp"
#include "ambiseg/raster.hpp"
#include "ambiseg/rng.hpp"

namespace ambiseg::scene {

enum class ShapeFamily { Ellipse, Rectangle, PolygonBlob, Ring, Composite };
enum class TextureFamily { Flat, Gradient, Stripes, Speckle };

const char* to_string(ShapeFamily s);
const char* to_string(TextureFamily t);

struct CategorySpec {
  int id = 0;
  ShapeFamily shape = ShapeFamily::Ellipse;
  TextureFamily texture = TextureFamily::Flat;
  // variation axes
  Real size_min = 0.05, size_max = 0.35;  // fraction of image area
  int clutter_min = 0, clutter_max = 8;
  Real background_similarity = 0.2;  // 0 = strong contrast, 1 = object matches background
  Real occlusion_max = 0.0;          // fraction of the designated object hidden
  Real elongation_max = 1.5;         // major / minor axis
  Real rotation_range = 3.14159265358979;
  Real hue_bias = 0.0;               // shifts object colour draws
  Real texture_scale = 4.0;          // stripe period / speckle density, pixels
  Real lighting = 0.1;               // amplitude of a linear illumination ramp
  Real pixel_noise = 0.02;
  Real background_pattern = 0.05;

  bool hard() const { return background_similarity >= 0.8; }
  void validate() const;
};

/// `count` categories over the shape x texture x size-band grid (first
/// `count` cells), variation axes drawn from `seed`. Listed ids are made hard.
std::vector<CategorySpec> make_categories(std::size_t count, const std::vector<int>& hard_ids,
                                          std::uint64_t seed);

struct AmbiguitySpec {
  Real p_amb = 0.0;
  std::size_t k_max = 2;
};

struct ObjectPlacement {
  Real cy = 0, cx = 0;  // pixel units
  Real radius = 0;      // equal-area radius
  Real elongation = 1, rotation = 0;
  Real colour[3] = {0, 0, 0};
  Real blob_amp[3] = {0, 0, 0};
  Real blob_phase[3] = {0, 0, 0};
};

struct SceneSpec {
  int category = 0;
  std::size_t height = 0, width = 0;
  std::vector<ObjectPlacement> objects;  // the K candidates
  std::size_t designated = 0;
  std::size_t distractors = 0;
  Real background[3] = {0, 0, 0};
  std::uint64_t seed = 0;

  std::string describe() const;
};

struct PlacementError : std::runtime_error {
  PlacementError(const std::string& what, SceneSpec s) : std::runtime_error(what), spec(std::move(s)) {}
  SceneSpec spec;
};

struct Sample {
  std::string id;
  Raster image;  // 3 x H x W in [0,1]
  Mask gt;
  std::vector<Mask> candidates;
  std::size_t designated = 0;
  int category = 0;
  int round = 0;
  std::uint64_t seed = 0;
  bool hard = false;

  std::size_t k() const { return candidates.size(); }
};

/// Pixel dimensions for a budget of `pixels` at aspect w:h in {1:1, 4:3, 3:4},
/// snapped to multiples of 8.
std::pair<std::size_t, std::size_t> aspect_size(std::size_t pixels, int aspect_index);

struct GeneratorConfig {
  std::size_t pixels = 64 * 64;
  bool aspect_variety = true;
  AmbiguitySpec ambiguity;
  int max_retries = 200;
};

std::size_t sample_category(const std::vector<Real>& weights, Rng& rng);

Sample generate_scene(const CategorySpec& category, const GeneratorConfig& cfg, Rng& rng);

/// Streams used with derive_seed.
inline constexpr std::uint64_t kStreamCategory = 1;
inline constexpr std::uint64_t kStreamScene = 2;
inline constexpr std::uint64_t kStreamModality = 3;

/// Samples [first, first + count) of the dataset defined by (seed, weights).
/// Each sample's randomness derives from (seed, index) alone.
std::vector<Sample> generate_dataset(const std::vector<CategorySpec>& categories,
                                     const std::vector<Real>& weights, const GeneratorConfig& cfg,
                                     std::size_t count, std::uint64_t seed, int round,
                                     std::size_t first = 0);

/// Same, with an explicit category per sample.
std::vector<Sample> generate_for_categories(const std::vector<CategorySpec>& categories,
                                            const std::vector<int>& category_of_sample,
                                            const GeneratorConfig& cfg, std::uint64_t seed,
                                            int round, std::size_t first = 0);

/// Resample to a fixed size: bilinear image, masks resampled then binarized.
Sample fit(const Sample& s, std::size_t height, std::size_t width);

struct ModalityCorruption {
  Real semantic_blur = 0.08;     // sigma of the gt channel, fraction of image size
  Real semantic_drop = 0.5;      // chance of cutting a window out of the gt channel
  Real small_object_drop = 0.8;  // chance of removing a small designated object entirely
  Real small_object_area = 0.15;
  Real generative_jitter = 0.35; // per-cell perturbation of the coarse layout
  Real generative_noise = 0.15;
  Real concept_sigma = 0.05;     // fixed smoothing, not a corruption
  Real concept_shift = 0.12;     // max offset, fraction of image size

  /// No drops, jitter, noise or shift; the concept smoothing remains.
  static ModalityCorruption none();
};

inline constexpr std::size_t kSemanticChannels = 4;
inline constexpr std::size_t kGenerativeChannels = 2;
inline constexpr std::size_t kConceptChannels = 2;
inline constexpr std::size_t kGenerativeFactor = 4;

/// Proxy modalities at the sample's resolution (generative at 1/4).
net::ModalityBundle synthesize_modalities(const Sample& s, const ModalityCorruption& c, Rng& rng);

/// Which modalities a labeler sees; disabled ones are zeroed.
struct ModalitySelection {
  bool semantic = true, generative = true, concept_maps = true;
};
net::ModalityBundle apply_selection(net::ModalityBundle b, const ModalitySelection& sel);

net::ModalityConfig modality_config();

}  // namespace ambiseg::scene

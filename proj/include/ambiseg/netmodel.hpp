#pragma once

// Multi-mask segmentation network: strided conv encoder, 1x1 reassembly to a
// common fusion width, top-down fusion with residual conv units, an N-channel
// mask head and an N-score head on the deepest fused map. In the labeler role
// the input is a modality bundle passed through fuse_modalities first.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ambiseg/diffcore.hpp"
#include "ambiseg/multimask.hpp"
#include "json.hpp"

namespace ambiseg::net {

enum class InputKind { Image, Modalities };

struct ModalityConfig {
  std::size_t semantic_channels = 4;
  std::size_t generative_channels = 2;
  std::size_t concept_channels = 2;
  std::size_t generative_factor = 4;  // generative maps are H/f x W/f

  friend bool operator==(const ModalityConfig&, const ModalityConfig&) = default;
};

struct ModelConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  InputKind input = InputKind::Image;
  std::size_t in_channels = 3;  // image channels; ignored for modality input
  std::vector<std::size_t> widths{16, 32, 64, 128};
  std::size_t fusion_width = 32;
  std::size_t heads = 3;
  std::uint64_t seed = 1;
  ModalityConfig modalities;
  Real bn_momentum = 0.1;
  Real bn_eps = 1e-5;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Proxy inputs for the labeler: semantic (full res), generative (reduced
/// res), concept (full res, object + background).
struct ModalityBundle {
  Raster semantic;
  Raster generative;
  Raster attention;  // concept maps
};

using Parameters = std::map<std::string, Tensor>;

enum class Mode { Train, Eval };

/// Input variable names.
inline const std::string kImageVar = "in.image";
inline const std::string kSemanticVar = "in.semantic";
inline const std::string kGenerativeVar = "in.generative";
inline const std::string kConceptVar = "in.concept";

struct BatchNormSite {
  diff::Expr input;    // pre-normalization activations
  std::string prefix;  // parameter prefix, e.g. "mod.sem.bn"
};

/// Graph for a fixed batch size and mode.
struct Graph {
  std::size_t batch = 0;
  Mode mode = Mode::Eval;
  diff::Expr masks;   // B x N x H x W, in [1e-6, 1 - 1e-6]
  diff::Expr scores;  // B x N x 1 x 1
  diff::Expr fused;   // B x F x H x W (modality input only)
  std::vector<BatchNormSite> batch_norms;
};

class Network {
 public:
  explicit Network(ModelConfig cfg);
  Network(ModelConfig cfg, Parameters params, Parameters buffers);

  const ModelConfig& config() const { return cfg_; }
  Parameters& params() { return params_; }
  const Parameters& params() const { return params_; }
  /// Non-trainable state: batch-norm running statistics.
  Parameters& buffers() { return buffers_; }
  const Parameters& buffers() const { return buffers_; }
  std::size_t parameter_count() const;

  const Graph& graph(std::size_t batch, Mode mode) const;

  /// Parameters and buffers as bindings (inputs left unbound).
  diff::Bindings state_bindings() const;

  diff::Bindings image_bindings(const std::vector<const Raster*>& images) const;
  diff::Bindings bundle_bindings(const std::vector<const ModalityBundle*>& bundles) const;

  /// Folds this batch's statistics into the running statistics.
  void update_running_stats(const Graph& g, diff::Evaluator& ev);

  std::vector<MultiMaskOutput> predict(const std::vector<const Raster*>& images) const;
  std::vector<MultiMaskOutput> predict(const std::vector<const ModalityBundle*>& bundles) const;
  MultiMaskOutput predict(const Raster& image) const;
  MultiMaskOutput predict(const ModalityBundle& bundle) const;

  /// Eval-mode fused features for one bundle, 1 x F x H x W.
  Tensor fuse(const ModalityBundle& bundle) const;

 private:
  std::vector<MultiMaskOutput> run(const diff::Bindings& inputs, std::size_t batch) const;

  ModelConfig cfg_;
  Parameters params_;
  Parameters buffers_;
  mutable std::map<std::pair<std::size_t, int>, Graph> cache_;
};

/// Fresh parameters and buffers for a config, He-normal from cfg.seed.
/// The fusion path's final convolution starts at zero.
std::pair<Parameters, Parameters> init_parameters(const ModelConfig& cfg);

/// Shapes of every trainable parameter.
std::map<std::string, Shape> parameter_shapes(const ModelConfig& cfg);

/// Fusion block over already-constructed branch inputs. `sites` collects
/// normalization inputs when non-null.
diff::Expr fuse_modalities(const ModelConfig& cfg, const diff::Expr& semantic,
                           const diff::Expr& generative, const diff::Expr& attention, Mode mode,
                           std::vector<BatchNormSite>* sites = nullptr);

/// Full forward graph from an input feature map (image, or fused features).
Graph build_graph(const ModelConfig& cfg, std::size_t batch, Mode mode);

/// Checkpoint container: magic, version, config JSON, named tensors.
void save_checkpoint(const Network& net, const std::string& path);
Network load_checkpoint(const std::string& path);

}  // namespace ambiseg::net

#pragma once

// Salient-object evaluation metrics: max F-beta, MAE, S-measure, E-measure,
// binary IoU, and dataset aggregation with score-selected or oracle best-of-N
// head choice.

#include <string>
#include <vector>

#include "ambiseg/multimask.hpp"

namespace ambiseg::metrics {

inline constexpr Real kEps = 1e-8;
inline constexpr Real kBetaSquared = 0.3;
inline constexpr int kThresholds = 256;

Real mae(const Mask& pred, const Mask& gt);

/// F-beta at each threshold k/255, k = 0..255.
std::vector<Real> f_measure_curve(const Mask& pred, const Mask& gt);
Real f_measure_max(const Mask& pred, const Mask& gt);

Real s_measure(const Mask& pred, const Mask& gt, Real alpha = 0.5);

enum class EMeasureMode { MeanOverThresholds, MaxOverThresholds, Adaptive };
Real e_measure(const Mask& pred, const Mask& gt,
               EMeasureMode mode = EMeasureMode::MeanOverThresholds);
/// Enhanced-alignment score of one already binarized prediction.
Real e_measure_binary(const Mask& bin, const Mask& gt);

Real iou_binary(const Mask& pred, const Mask& gt, Real threshold = 0.5);

enum class SelectionMode { Selected, OracleBest };
const char* to_string(SelectionMode m);
SelectionMode selection_mode_from_string(const std::string& s);

struct SampleRecord {
  std::string id;
  std::size_t head = 0;
  Real f_max = 0, mae = 0, s_measure = 0, e_measure = 0, iou = 0;
};

struct MetricsReport {
  std::string dataset;
  std::size_t n = 0;
  Real f_max = 0, mae = 0, s_measure = 0, e_measure = 0, iou = 0;
  SelectionMode mode = SelectionMode::Selected;
  std::vector<SampleRecord> samples;
};

/// Head used for a sample under the given mode.
std::size_t choose_head(const MultiMaskOutput& out, const Mask& gt, SelectionMode mode);

SampleRecord evaluate_sample(const Mask& pred, const Mask& gt);

MetricsReport evaluate_dataset(const std::vector<MultiMaskOutput>& predictions,
                               const std::vector<Mask>& ground_truths, SelectionMode mode,
                               std::string dataset = "dataset",
                               const std::vector<std::string>& ids = {});

std::string to_json(const MetricsReport& r, bool with_samples = false);
std::string csv_header();
std::string to_csv_row(const MetricsReport& r);

}  // namespace ambiseg::metrics

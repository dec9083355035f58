#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "kneeplan/augment.hpp"
#include "kneeplan/metrics_eval.hpp"
#include "kneeplan/model_shgn.hpp"
#include "kneeplan/planner_geometry.hpp"
#include "kneeplan/types.hpp"

namespace kneeplan {

/// Converts the final hourglass output for batch item `index` into
/// heatmap-resolution maps (sigmoid applied to segmentation logits).
NetworkPrediction to_prediction(const NetworkOutput& output, int index, int scale = 4);

/// Runs the network on one image (normalized to the input size internally).
struct RawInference {
  NetworkPrediction prediction;
  NormalizeTransform transform;
};
RawInference run_network(StackedHourglass& net, const GrayImage& image);

/// Everything predicted for one image, at original resolution.
struct ImagePrediction {
  std::array<Mask, kNumBones> masks;
  Point2 p_blum;
  Point2 p_tmc;
  std::optional<PlanningResult> plan;
  std::optional<std::string> planning_error;
};

ImagePrediction predict_image(StackedHourglass& net, const GrayImage& image,
                              std::optional<Point2> reference = std::nullopt);

/// Prediction assembled from ground truth: GT masks and landmarks, and an
/// ROI rendered from the GT cortex points at heatmap resolution.
ImagePrediction ground_truth_prediction(const Sample& sample);

/// Reference plan built directly from the annotated cortex points.
PlanningResult reference_plan(const Sample& sample);

ImageMetrics evaluate_prediction(const ImagePrediction& pred, const Sample& gt);

/// Inference + metrics over a split. Throws std::invalid_argument when empty.
MetricReport validate(StackedHourglass& net, const std::vector<Sample>& samples,
                      int resamples = kDefaultBootstrapResamples, uint64_t seed = 0);

}  // namespace kneeplan

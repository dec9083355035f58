#pragma once

#include <vector>

#include <opencv2/core.hpp>

#include "kneeplan/types.hpp"

namespace kneeplan {

using Heatmap = cv::Mat1f;

enum class HeatmapTask { kLandmarks, kRoi, kSegmentation };

/// Channel stack at heatmap resolution. `scale` is the integer factor
/// between network input resolution and heatmap resolution.
struct HeatmapStack {
  std::vector<Heatmap> maps;
  int scale = 4;
  HeatmapTask task = HeatmapTask::kLandmarks;
};

/// Gaussian std at input resolution, in pixels.
inline constexpr double kLandmarkSigmaPx = 6.0;
inline constexpr double kRoiThreshold = 0.5;

// Heatmap cell (j, i) covers the input pixels [j*scale, (j+1)*scale) and is
// anchored at their center, so input x maps to (x + 0.5) / scale - 0.5.

inline Point2 input_to_heatmap(const Point2& p, int scale) {
  return {(p.x + 0.5) / scale - 0.5, (p.y + 0.5) / scale - 0.5};
}

inline Point2 heatmap_to_input(const Point2& q, int scale) {
  return {(q.x + 0.5) * scale - 0.5, (q.y + 0.5) * scale - 0.5};
}

/// Unnormalized Gaussian (peak 1) centered on `point` given in input
/// coordinates. sigma at heatmap resolution is sigma_px / scale.
/// Throws std::invalid_argument when the point lies outside the input canvas.
Heatmap encode_landmark(const Point2& point, cv::Size shape, int scale,
                        double sigma_px = kLandmarkSigmaPx);

/// Pseudo-landmark centers (heatmap coordinates) spaced evenly along the
/// segment with spacing at most sigma_hm, both endpoints included.
std::vector<Point2> line_pseudo_landmarks(const Point2& p_prox, const Point2& p_dist, int scale,
                                          double sigma_px = kLandmarkSigmaPx);

/// Pixelwise maximum of the Gaussians at the pseudo landmarks.
/// Throws std::invalid_argument for coincident endpoints.
Heatmap encode_line_roi(const Point2& p_prox, const Point2& p_dist, cv::Size shape, int scale,
                        double sigma_px = kLandmarkSigmaPx);

struct DecodedLandmark {
  Point2 point;        // input coordinates
  float score = 0.0F;  // heatmap value at the maximum
  bool degenerate = false;  // map had no unique structure (all values equal)
};

/// Argmax decode; ties resolve to the first maximum in row-major order.
DecodedLandmark decode_landmark(const Heatmap& heatmap, int scale);

/// mask = [heatmap >= tau]. tau must lie in (0, 1).
Mask threshold_roi(const Heatmap& heatmap, double tau = kRoiThreshold);

}  // namespace kneeplan

#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kneeplan/augment.hpp"
#include "kneeplan/heatmap_codec.hpp"
#include "kneeplan/types.hpp"

namespace kneeplan {

/// Line {x : normal . x = offset} with a unit normal.
struct Line2D {
  Point2 normal{1.0, 0.0};
  double offset = 0.0;

  /// Line through two distinct points. Throws std::invalid_argument otherwise.
  static Line2D through(const Point2& a, const Point2& b);
  /// Line through `p` with the given (not necessarily unit) direction.
  static Line2D with_direction(const Point2& p, const Point2& direction);

  Point2 direction() const { return {-normal.y, normal.x}; }
  double signed_distance(const Point2& p) const { return normal.dot(p) - offset; }
};

/// Radius of the anatomically acceptable area around a reference drill site.
inline constexpr double kSchoettleAreaRadiusMm = 2.5;

struct PlanningResult {
  Line2D lm1;  // posterior cortex extension
  Line2D lm2;  // perpendicular through p_blum
  Line2D lm3;  // perpendicular through p_tmc
  Point2 p_blum;
  Point2 p_tmc;
  Point2 p_sp;
  double radius_px = 0.0;
  std::optional<double> radius_mm;
  std::optional<double> reference_error_mm;
  std::optional<bool> inside_schoettle_area;
};

/// Pixel-edge midpoints of the mask outline. An outline edge separates a
/// mask pixel from a background 4-neighbor; the canvas border is not an
/// outline, since anatomy cut by the field of view continues beyond it.
/// Only edges whose mask pixel is set in `roi` are kept when `roi` is given.
std::vector<Point2> outline_points(const Mask& mask, const Mask* roi = nullptr);

/// Orthogonal (total) least squares: principal axis through the centroid.
/// Throws PlanningError("insufficient contour support") for fewer than two
/// distinct points.
Line2D fit_line_orthogonal(std::span<const Point2> points);

/// Cortex line LM1 from the femur outline restricted to the ROI mask.
Line2D fit_cortex_line(const Mask& femur_mask, const Mask& roi_mask);

/// Line through `p` running along `line.normal`, i.e. perpendicular to `line`.
Line2D perpendicular_through(const Line2D& line, const Point2& p);

/// Centroid of the set pixels; throws PlanningError("empty femur mask").
Point2 mask_centroid(const Mask& mask);

/// Inner circle of LM1 and the perpendiculars through p_blum and p_tmc. The
/// center is taken on the side of LM1 containing `side_hint`. Throws
/// PlanningError("parallel-line gap degenerate") when the perpendiculars are
/// closer than `min_gap_px`.
PlanningResult schoettle_point(const Line2D& lm1, const Point2& p_blum, const Point2& p_tmc,
                               const Point2& side_hint, double min_gap_px = 1.0);

/// Fills radius_mm, reference_error_mm and inside_schoettle_area.
void attach_measurements(PlanningResult& result, std::optional<double> mm_per_px,
                         std::optional<Point2> reference);

/// Planner inputs at original resolution.
struct PlanInputs {
  Point2 p_blum;
  Point2 p_tmc;
  Mask femur_mask;
  Mask roi_mask;
  double min_gap_px = 1.0;
  std::optional<double> mm_per_px;
  std::optional<Point2> reference;
};

PlanningResult plan(const PlanInputs& inputs);

/// Network predictions for one image at heatmap resolution. Segmentation
/// maps hold probabilities (sigmoid already applied).
struct NetworkPrediction {
  std::array<Heatmap, kNumBones> seg_prob;
  std::array<Heatmap, 2> landmarks;  // p_blum, p_tmc
  Heatmap roi;
  int scale = 4;
};

/// Bilinearly samples a heatmap-resolution map at every pixel of the
/// original image (through the inverse normalization) and thresholds it.
Mask resample_to_original(const Heatmap& map, const NormalizeTransform& transform, int scale,
                          double threshold);

/// Nearest-cell lookup variant, used for the thresholded ROI.
Mask lookup_to_original(const Mask& map, const NormalizeTransform& transform, int scale);

/// Decodes landmarks, thresholds the ROI at 0.5, fits LM1 on the full
/// resolution femur outline and builds the plan in original coordinates.
PlanningResult plan(const NetworkPrediction& prediction, const NormalizeTransform& transform,
                    const Mask& femur_mask_fullres, std::optional<double> mm_per_px,
                    std::optional<Point2> reference = std::nullopt);

std::string plan_to_json(const PlanningResult& result);
PlanningResult plan_from_json(const std::string& text);

}  // namespace kneeplan

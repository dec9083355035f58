#include "kneeplan/planner_geometry.hpp"

#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>
#include <opencv2/imgproc.hpp>

namespace kneeplan {

Line2D Line2D::through(const Point2& a, const Point2& b) {
  if (a == b) throw std::invalid_argument("Line2D::through: coincident points");
  return with_direction(a, b - a);
}

Line2D Line2D::with_direction(const Point2& p, const Point2& direction) {
  const double len = direction.norm();
  if (!(len > 0.0)) throw std::invalid_argument("Line2D::with_direction: zero direction");
  const Point2 n{direction.y / len, -direction.x / len};
  return {n, n.dot(p)};
}

std::vector<Point2> outline_points(const Mask& mask, const Mask* roi) {
  if (roi && roi->size() != mask.size()) throw std::invalid_argument("outline_points: ROI shape mismatch");
  static constexpr int kDx[4] = {1, -1, 0, 0};
  static constexpr int kDy[4] = {0, 0, 1, -1};
  std::vector<Point2> points;
  for (int i = 0; i < mask.rows; ++i) {
    for (int j = 0; j < mask.cols; ++j) {
      if (!mask(i, j) || (roi && !(*roi)(i, j))) continue;
      for (int k = 0; k < 4; ++k) {
        const int ni = i + kDy[k];
        const int nj = j + kDx[k];
        if (ni < 0 || nj < 0 || ni >= mask.rows || nj >= mask.cols) continue;
        if (!mask(ni, nj)) points.push_back({j + 0.5 * kDx[k], i + 0.5 * kDy[k]});
      }
    }
  }
  return points;
}

Line2D fit_line_orthogonal(std::span<const Point2> points) {
  if (points.size() < 2) throw PlanningError("insufficient contour support", "fewer than two points");
  Point2 mean{};
  for (const auto& p : points) mean = mean + p;
  mean = mean / static_cast<double>(points.size());
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const auto& p : points) {
    const Point2 d = p - mean;
    sxx += d.x * d.x;
    sxy += d.x * d.y;
    syy += d.y * d.y;
  }
  if (sxx + syy <= 1e-18 * static_cast<double>(points.size()))
    throw PlanningError("insufficient contour support", "all points coincide");
  const double theta = 0.5 * std::atan2(2.0 * sxy, sxx - syy);
  return Line2D::with_direction(mean, {std::cos(theta), std::sin(theta)});
}

Line2D fit_cortex_line(const Mask& femur_mask, const Mask& roi_mask) {
  if (femur_mask.size() != roi_mask.size())
    throw std::invalid_argument("fit_cortex_line: mask shapes differ");
  const auto points = outline_points(femur_mask, &roi_mask);
  return fit_line_orthogonal(points);
}

Line2D perpendicular_through(const Line2D& line, const Point2& p) {
  return Line2D::with_direction(p, line.normal);
}

Point2 mask_centroid(const Mask& mask) {
  double sx = 0.0, sy = 0.0;
  std::size_t n = 0;
  for (int i = 0; i < mask.rows; ++i)
    for (int j = 0; j < mask.cols; ++j)
      if (mask(i, j)) {
        sx += j;
        sy += i;
        ++n;
      }
  if (n == 0) throw PlanningError("empty femur mask", "no femur pixels to orient the plan");
  return {sx / static_cast<double>(n), sy / static_cast<double>(n)};
}

PlanningResult schoettle_point(const Line2D& lm1, const Point2& p_blum, const Point2& p_tmc,
                               const Point2& side_hint, double min_gap_px) {
  const Point2 d = lm1.direction();
  const double s_blum = d.dot(p_blum);
  const double s_tmc = d.dot(p_tmc);
  const double gap = std::abs(s_blum - s_tmc);
  if (!(gap >= min_gap_px))
    throw PlanningError("parallel-line gap degenerate",
                        "perpendiculars are " + std::to_string(gap) + " px apart");
  PlanningResult r;
  r.lm1 = lm1;
  r.lm2 = perpendicular_through(lm1, p_blum);
  r.lm3 = perpendicular_through(lm1, p_tmc);
  r.p_blum = p_blum;
  r.p_tmc = p_tmc;
  r.radius_px = gap / 2.0;
  const double side = lm1.signed_distance(side_hint) >= 0.0 ? 1.0 : -1.0;
  const Point2 foot = lm1.normal * lm1.offset + d * ((s_blum + s_tmc) / 2.0);
  r.p_sp = foot + lm1.normal * (side * r.radius_px);
  return r;
}

void attach_measurements(PlanningResult& result, std::optional<double> mm_per_px,
                         std::optional<Point2> reference) {
  result.radius_mm.reset();
  result.reference_error_mm.reset();
  result.inside_schoettle_area.reset();
  if (!mm_per_px) return;
  result.radius_mm = result.radius_px * *mm_per_px;
  if (reference) {
    result.reference_error_mm = distance(result.p_sp, *reference) * *mm_per_px;
    result.inside_schoettle_area = *result.reference_error_mm <= kSchoettleAreaRadiusMm;
  }
}

PlanningResult plan(const PlanInputs& in) {
  const Line2D lm1 = fit_cortex_line(in.femur_mask, in.roi_mask);
  PlanningResult r = schoettle_point(lm1, in.p_blum, in.p_tmc, mask_centroid(in.femur_mask), in.min_gap_px);
  attach_measurements(r, in.mm_per_px, in.reference);
  return r;
}

namespace {

// Heatmap coordinates of every original-resolution pixel.
std::pair<cv::Mat1f, cv::Mat1f> heatmap_coordinates(const NormalizeTransform& t, int scale) {
  cv::Mat1f mx(t.original), my(t.original);
  for (int i = 0; i < t.original.height; ++i)
    for (int j = 0; j < t.original.width; ++j) {
      const Point2 q = input_to_heatmap(t.forward({static_cast<double>(j), static_cast<double>(i)}), scale);
      mx(i, j) = static_cast<float>(q.x);
      my(i, j) = static_cast<float>(q.y);
    }
  return {mx, my};
}

}  // namespace

Mask resample_to_original(const Heatmap& map, const NormalizeTransform& transform, int scale,
                          double threshold) {
  const auto [mx, my] = heatmap_coordinates(transform, scale);
  cv::Mat1f sampled;
  cv::remap(map, sampled, mx, my, cv::INTER_LINEAR, cv::BORDER_REPLICATE);
  Mask out(sampled.size());
  for (int i = 0; i < sampled.rows; ++i)
    for (int j = 0; j < sampled.cols; ++j) out(i, j) = sampled(i, j) >= threshold ? 1 : 0;
  return out;
}

Mask lookup_to_original(const Mask& map, const NormalizeTransform& transform, int scale) {
  const auto [mx, my] = heatmap_coordinates(transform, scale);
  Mask out(transform.original);
  for (int i = 0; i < out.rows; ++i)
    for (int j = 0; j < out.cols; ++j) {
      const int c = std::clamp(static_cast<int>(std::lround(mx(i, j))), 0, map.cols - 1);
      const int r = std::clamp(static_cast<int>(std::lround(my(i, j))), 0, map.rows - 1);
      out(i, j) = map(r, c);
    }
  return out;
}

PlanningResult plan(const NetworkPrediction& prediction, const NormalizeTransform& transform,
                    const Mask& femur_mask_fullres, std::optional<double> mm_per_px,
                    std::optional<Point2> reference) {
  PlanInputs in;
  in.p_blum = transform.inverse(decode_landmark(prediction.landmarks[0], prediction.scale).point);
  in.p_tmc = transform.inverse(decode_landmark(prediction.landmarks[1], prediction.scale).point);
  in.femur_mask = femur_mask_fullres;
  in.roi_mask = lookup_to_original(threshold_roi(prediction.roi, kRoiThreshold), transform, prediction.scale);
  in.min_gap_px = prediction.scale / transform.scale;
  in.mm_per_px = mm_per_px;
  in.reference = reference;
  return plan(in);
}

namespace {

using nlohmann::json;

json point_json(const Point2& p) { return json::array({p.x, p.y}); }
Point2 point_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

json line_json(const Line2D& l) { return {{"normal", point_json(l.normal)}, {"offset", l.offset}}; }
Line2D line_from(const json& j) { return {point_from(j.at("normal")), j.at("offset").get<double>()}; }

template <typename T>
json optional_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

template <typename T>
std::optional<T> optional_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

}  // namespace

std::string plan_to_json(const PlanningResult& r) {
  json j = {{"lm1", line_json(r.lm1)},
            {"lm2", line_json(r.lm2)},
            {"lm3", line_json(r.lm3)},
            {"p_blum", point_json(r.p_blum)},
            {"p_tmc", point_json(r.p_tmc)},
            {"p_sp", point_json(r.p_sp)},
            {"radius_px", r.radius_px},
            {"radius_mm", optional_json(r.radius_mm)},
            {"reference_error_mm", optional_json(r.reference_error_mm)},
            {"inside_schoettle_area", optional_json(r.inside_schoettle_area)}};
  return j.dump(2);
}

PlanningResult plan_from_json(const std::string& text) {
  const json j = json::parse(text);
  PlanningResult r;
  r.lm1 = line_from(j.at("lm1"));
  r.lm2 = line_from(j.at("lm2"));
  r.lm3 = line_from(j.at("lm3"));
  r.p_blum = point_from(j.at("p_blum"));
  r.p_tmc = point_from(j.at("p_tmc"));
  r.p_sp = point_from(j.at("p_sp"));
  r.radius_px = j.at("radius_px").get<double>();
  r.radius_mm = optional_from<double>(j, "radius_mm");
  r.reference_error_mm = optional_from<double>(j, "reference_error_mm");
  r.inside_schoettle_area = optional_from<bool>(j, "inside_schoettle_area");
  return r;
}

}  // namespace kneeplan

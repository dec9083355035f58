#include "kneeplan/heatmap_codec.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace kneeplan {

namespace {

void check_scale(int scale) {
  if (scale < 1) throw std::invalid_argument("heatmap scale must be >= 1");
}

void render_gaussian_max(Heatmap& map, const Point2& center, double sigma) {
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int i = 0; i < map.rows; ++i) {
    const double dy = i - center.y;
    float* row = map[i];
    for (int j = 0; j < map.cols; ++j) {
      const double dx = j - center.x;
      const auto v = static_cast<float>(std::exp(-(dx * dx + dy * dy) * inv));
      row[j] = std::max(row[j], v);
    }
  }
}

}  // namespace

Heatmap encode_landmark(const Point2& point, cv::Size shape, int scale, double sigma_px) {
  check_scale(scale);
  const double w_in = static_cast<double>(shape.width) * scale;
  const double h_in = static_cast<double>(shape.height) * scale;
  if (!(point.x >= 0.0 && point.y >= 0.0 && point.x <= w_in - 1.0 && point.y <= h_in - 1.0))
    throw std::invalid_argument("encode_landmark: point outside input canvas");
  Heatmap map = Heatmap::zeros(shape);
  render_gaussian_max(map, input_to_heatmap(point, scale), sigma_px / scale);
  return map;
}

std::vector<Point2> line_pseudo_landmarks(const Point2& p_prox, const Point2& p_dist, int scale,
                                          double sigma_px) {
  check_scale(scale);
  if (p_prox == p_dist) throw std::invalid_argument("line ROI: coincident endpoints");
  const Point2 a = input_to_heatmap(p_prox, scale);
  const Point2 b = input_to_heatmap(p_dist, scale);
  const double spacing = sigma_px / scale;
  const double length = distance(a, b);
  const int intervals = std::max(1, static_cast<int>(std::ceil(length / spacing - 1e-12)));
  std::vector<Point2> centers;
  centers.reserve(intervals + 1);
  for (int k = 0; k <= intervals; ++k) {
    const double t = static_cast<double>(k) / intervals;
    centers.push_back(a + (b - a) * t);
  }
  return centers;
}

Heatmap encode_line_roi(const Point2& p_prox, const Point2& p_dist, cv::Size shape, int scale,
                        double sigma_px) {
  Heatmap map = Heatmap::zeros(shape);
  for (const auto& c : line_pseudo_landmarks(p_prox, p_dist, scale, sigma_px))
    render_gaussian_max(map, c, sigma_px / scale);
  return map;
}

DecodedLandmark decode_landmark(const Heatmap& heatmap, int scale) {
  check_scale(scale);
  if (heatmap.empty()) throw std::invalid_argument("decode_landmark: empty heatmap");
  int best_i = 0;
  int best_j = 0;
  float best = heatmap(0, 0);
  float lowest = best;
  for (int i = 0; i < heatmap.rows; ++i) {
    const float* row = heatmap[i];
    for (int j = 0; j < heatmap.cols; ++j) {
      if (row[j] > best) {
        best = row[j];
        best_i = i;
        best_j = j;
      }
      lowest = std::min(lowest, row[j]);
    }
  }
  DecodedLandmark out;
  out.point = heatmap_to_input({static_cast<double>(best_j), static_cast<double>(best_i)}, scale);
  out.score = best;
  out.degenerate = (best == lowest);
  return out;
}

Mask threshold_roi(const Heatmap& heatmap, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("threshold_roi: tau must be in (0,1)");
  Mask mask(heatmap.size());
  for (int i = 0; i < heatmap.rows; ++i)
    for (int j = 0; j < heatmap.cols; ++j) mask(i, j) = heatmap(i, j) >= tau ? 1 : 0;
  return mask;
}

}  // namespace kneeplan

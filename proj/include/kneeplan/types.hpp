#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include <opencv2/core.hpp>

namespace kneeplan {

/// 2D point in image coordinates: x = column (rightward), y = row (downward),
/// origin at the center of the top-left pixel. Sub-pixel values are allowed.
struct Point2 {
  double x = 0.0;
  double y = 0.0;

  constexpr Point2 operator+(const Point2& o) const { return {x + o.x, y + o.y}; }
  constexpr Point2 operator-(const Point2& o) const { return {x - o.x, y - o.y}; }
  constexpr Point2 operator*(double s) const { return {x * s, y * s}; }
  constexpr Point2 operator/(double s) const { return {x / s, y / s}; }
  constexpr bool operator==(const Point2&) const = default;

  double dot(const Point2& o) const { return x * o.x + y * o.y; }
  double cross(const Point2& o) const { return x * o.y - y * o.x; }
  double norm() const { return std::hypot(x, y); }
};

inline double distance(const Point2& a, const Point2& b) { return (a - b).norm(); }

/// Single-channel intensity raster in [0,1].
struct GrayImage {
  cv::Mat1f pixels;
  std::optional<double> mm_per_px;
  std::string source_id;

  int height() const { return pixels.rows; }
  int width() const { return pixels.cols; }
};

/// Binary mask, one byte per pixel holding 0 or 1.
using Mask = cv::Mat1b;

enum class Bone { kFemur = 0, kPatella = 1, kTibia = 2, kFibula = 3 };
inline constexpr int kNumBones = 4;
inline constexpr std::array<std::string_view, kNumBones> kBoneNames = {"femur", "patella", "tibia",
                                                                       "fibula"};

struct AnnotationSet {
  Point2 p_blum;
  Point2 p_tmc;
  Point2 p_prox;
  Point2 p_dist;
  std::array<Mask, kNumBones> masks;

  const Mask& mask(Bone b) const { return masks[static_cast<int>(b)]; }
  Mask& mask(Bone b) { return masks[static_cast<int>(b)]; }
};

enum class SplitTag { kTrain, kVal, kTest };

std::string_view to_string(SplitTag tag);
SplitTag split_tag_from_string(std::string_view s);

struct Sample {
  GrayImage image;
  AnnotationSet annotation;
  SplitTag split = SplitTag::kTrain;
};

// Error kinds. All derive from std::runtime_error so callers can catch broadly.

class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised by the planner. `kind()` is a stable name usable in reports.
class PlanningError : public std::runtime_error {
 public:
  PlanningError(std::string kind, const std::string& detail)
      : std::runtime_error(kind + ": " + detail), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

}  // namespace kneeplan

#pragma once

// Helpers for comparing masks that went through different resampling paths.

#include <opencv2/imgproc.hpp>

#include "kneeplan/metrics_eval.hpp"
#include "kneeplan/types.hpp"

namespace kneeplan::testing {

/// Pixels whose preimage under `m` lies on the source canvas, shrunk by
/// `margin` so that border clipping of either raster cannot matter.
inline Mask valid_region(const cv::Matx23d& m, cv::Size size, int margin = 2) {
  const Mask ones(size, 1);
  Mask valid;
  cv::warpAffine(ones, valid, cv::Mat(m), size, cv::INTER_NEAREST, cv::BORDER_CONSTANT, 0);
  if (margin > 0) cv::erode(valid, valid, cv::Mat(), {-1, -1}, margin);
  return valid;
}

inline double iou_within(const Mask& a, const Mask& b, const Mask& valid) {
  return iou(a.mul(valid), b.mul(valid));
}

/// True when every pixel on which `a` and `b` disagree is within one pixel
/// (8-neighbourhood) of the outline of `b`.
inline bool disagreement_on_outline(const Mask& a, const Mask& b, const Mask& valid) {
  Mask grown, shrunk;
  cv::dilate(b, grown, cv::Mat());
  cv::erode(b, shrunk, cv::Mat());
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) {
      if (!valid(i, j) || (a(i, j) != 0) == (b(i, j) != 0)) continue;
      if (grown(i, j) == shrunk(i, j)) return false;
    }
  return true;
}

}  // namespace kneeplan::testing

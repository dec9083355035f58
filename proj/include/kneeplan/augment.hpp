#pragma once

#include <cstdint>

#include <opencv2/core.hpp>

#include "kneeplan/types.hpp"

namespace kneeplan {

/// Augmentation ranges and probabilities (exposed in the training config).
struct AugmentConfig {
  double p_flip = 0.5;
  double p_rotate = 0.5;
  double p_scale = 0.5;
  double p_contrast = 0.5;
  double rotation_deg = 15.0;  // angle ~ U(-rotation_deg, +rotation_deg)
  double scale_min = 0.9;
  double scale_max = 1.1;
  double contrast_gain_min = 0.75;
  double contrast_gain_max = 1.25;
  double contrast_bias_min = -0.1;
  double contrast_bias_max = 0.1;
  int max_retries = 10;
};

/// One concrete draw of the augmentation parameters.
struct AugmentDraw {
  bool flip = false;
  double rotation_deg = 0.0;
  double scale = 1.0;
  double gain = 1.0;
  double bias = 0.0;
};

/// Spatial part of a draw as a forward affine map on pixel coordinates:
/// flip (x -> W-1-x), then rotation and isotropic scaling about the canvas
/// center. Maps source coordinates to output coordinates.
cv::Matx23d spatial_transform(const AugmentDraw& draw, cv::Size size);

Point2 apply_affine(const cv::Matx23d& m, const Point2& p);
cv::Matx23d invert_affine(const cv::Matx23d& m);

/// Applies a fixed draw: one composed spatial resampling (bilinear image,
/// nearest masks, zero fill), geometry mapped by the same affine, then
/// i -> clip(gain * i + bias, 0, 1).
Sample apply_augmentation(const Sample& sample, const AugmentDraw& draw);

struct AugmentResult {
  Sample sample;
  AugmentDraw draw;
  bool skipped = false;  // every retry pushed geometry off-canvas
};

/// Draws each augmentation independently with its probability, retrying when
/// a landmark or line point would leave the canvas. Deterministic in rng_seed.
AugmentResult augment_sample(const Sample& sample, uint64_t rng_seed, const AugmentConfig& config = {});

/// Record of the pad-and-resize that brings an image to the network input.
/// Forward: x' = (x + pad_left) * scale, y' = (y + pad_top) * scale.
struct NormalizeTransform {
  int pad_left = 0;
  int pad_top = 0;
  double scale = 1.0;
  cv::Size original;
  int output_size = 256;

  Point2 forward(const Point2& p) const { return {(p.x + pad_left) * scale, (p.y + pad_top) * scale}; }
  Point2 inverse(const Point2& q) const { return {q.x / scale - pad_left, q.y / scale - pad_top}; }
  cv::Matx23d forward_matrix() const;
  bool is_identity() const { return pad_left == 0 && pad_top == 0 && scale == 1.0; }
};

NormalizeTransform normalize_transform_for(cv::Size original, int output_size = 256);

struct NormalizedSample {
  Sample sample;
  NormalizeTransform transform;
};

/// Zero-pads the short axis to a square (extra pixel on the trailing side)
/// and resamples to output_size x output_size: bilinear for the image,
/// nearest for masks; all geometry is mapped with the same record.
NormalizedSample normalize_to_input(const Sample& sample, int output_size = 256);

/// Image-only variant used at inference time.
std::pair<GrayImage, NormalizeTransform> normalize_image(const GrayImage& image, int output_size = 256);

}  // namespace kneeplan

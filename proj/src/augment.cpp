#include "kneeplan/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <opencv2/imgproc.hpp>

namespace kneeplan {

namespace {

bool on_canvas(const Point2& p, cv::Size size) {
  return p.x >= 0.0 && p.y >= 0.0 && p.x <= size.width - 1.0 && p.y <= size.height - 1.0;
}

cv::Mat warp(const cv::Mat& src, const cv::Matx23d& forward, cv::Size out, int interpolation) {
  cv::Mat dst;
  cv::warpAffine(src, dst, cv::Mat(forward), out, interpolation, cv::BORDER_CONSTANT, cv::Scalar(0));
  return dst;
}

Sample warp_sample(const Sample& sample, const cv::Matx23d& forward, cv::Size out) {
  Sample result = sample;
  result.image.pixels = warp(sample.image.pixels, forward, out, cv::INTER_LINEAR);
  for (int b = 0; b < kNumBones; ++b)
    result.annotation.masks[b] = warp(sample.annotation.masks[b], forward, out, cv::INTER_NEAREST);
  auto& a = result.annotation;
  a.p_blum = apply_affine(forward, a.p_blum);
  a.p_tmc = apply_affine(forward, a.p_tmc);
  a.p_prox = apply_affine(forward, a.p_prox);
  a.p_dist = apply_affine(forward, a.p_dist);
  return result;
}

}  // namespace

Point2 apply_affine(const cv::Matx23d& m, const Point2& p) {
  return {m(0, 0) * p.x + m(0, 1) * p.y + m(0, 2), m(1, 0) * p.x + m(1, 1) * p.y + m(1, 2)};
}

cv::Matx23d invert_affine(const cv::Matx23d& m) {
  cv::Matx23d inv;
  cv::invertAffineTransform(m, inv);
  return inv;
}

cv::Matx23d spatial_transform(const AugmentDraw& draw, cv::Size size) {
  const double cx = (size.width - 1) / 2.0;
  const double cy = (size.height - 1) / 2.0;
  const cv::Matx33d flip = draw.flip ? cv::Matx33d(-1, 0, size.width - 1, 0, 1, 0, 0, 0, 1)
                                     : cv::Matx33d::eye();
  const double t = draw.rotation_deg * std::numbers::pi / 180.0;
  const double c = std::cos(t) * draw.scale;
  const double s = std::sin(t) * draw.scale;
  // p' = center + scale * R(t) (p - center)
  const cv::Matx33d rot_scale(c, -s, cx - c * cx + s * cy, s, c, cy - s * cx - c * cy, 0, 0, 1);
  const cv::Matx33d m = rot_scale * flip;
  return {m(0, 0), m(0, 1), m(0, 2), m(1, 0), m(1, 1), m(1, 2)};
}

Sample apply_augmentation(const Sample& sample, const AugmentDraw& draw) {
  const cv::Size size = sample.image.pixels.size();
  Sample result = warp_sample(sample, spatial_transform(draw, size), size);
  if (draw.gain != 1.0 || draw.bias != 0.0) {
    cv::Mat1f& px = result.image.pixels;
    px.forEach([&](float& v, const int*) {
      v = static_cast<float>(std::clamp(draw.gain * v + draw.bias, 0.0, 1.0));
    });
  }
  return result;
}

AugmentResult augment_sample(const Sample& sample, uint64_t rng_seed, const AugmentConfig& config) {
  std::mt19937_64 rng(rng_seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  auto uniform = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  const cv::Size size = sample.image.pixels.size();
  const auto& a = sample.annotation;

  for (int attempt = 0; attempt <= config.max_retries; ++attempt) {
    AugmentDraw draw;
    draw.flip = coin(rng) < config.p_flip;
    if (coin(rng) < config.p_rotate) draw.rotation_deg = uniform(-config.rotation_deg, config.rotation_deg);
    if (coin(rng) < config.p_scale) draw.scale = uniform(config.scale_min, config.scale_max);
    if (coin(rng) < config.p_contrast) {
      draw.gain = uniform(config.contrast_gain_min, config.contrast_gain_max);
      draw.bias = uniform(config.contrast_bias_min, config.contrast_bias_max);
    }
    const cv::Matx23d m = spatial_transform(draw, size);
    const Point2 geometry[] = {a.p_blum, a.p_tmc, a.p_prox, a.p_dist};
    const bool fits = std::all_of(std::begin(geometry), std::end(geometry), [&](const Point2& p) {
      return on_canvas(apply_affine(m, p), size);
    });
    if (fits) return {apply_augmentation(sample, draw), draw, false};
  }
  return {sample, AugmentDraw{}, true};
}

cv::Matx23d NormalizeTransform::forward_matrix() const {
  return {scale, 0.0, scale * pad_left, 0.0, scale, scale * pad_top};
}

NormalizeTransform normalize_transform_for(cv::Size original, int output_size) {
  NormalizeTransform t;
  const int side = std::max(original.width, original.height);
  t.pad_left = (side - original.width) / 2;
  t.pad_top = (side - original.height) / 2;
  t.scale = static_cast<double>(output_size) / side;
  t.original = original;
  t.output_size = output_size;
  return t;
}

NormalizedSample normalize_to_input(const Sample& sample, int output_size) {
  const NormalizeTransform t = normalize_transform_for(sample.image.pixels.size(), output_size);
  if (t.is_identity()) return {sample, t};
  Sample s = warp_sample(sample, t.forward_matrix(), {output_size, output_size});
  if (s.image.mm_per_px) s.image.mm_per_px = *s.image.mm_per_px / t.scale;
  return {std::move(s), t};
}

std::pair<GrayImage, NormalizeTransform> normalize_image(const GrayImage& image, int output_size) {
  const NormalizeTransform t = normalize_transform_for(image.pixels.size(), output_size);
  GrayImage out = image;
  if (!t.is_identity()) {
    out.pixels = warp(image.pixels, t.forward_matrix(), {output_size, output_size}, cv::INTER_LINEAR);
    if (out.mm_per_px) out.mm_per_px = *out.mm_per_px / t.scale;
  }
  return {std::move(out), t};
}

}  // namespace kneeplan

#include <gtest/gtest.h>

#include <cmath>

#include "kneeplan/heatmap_codec.hpp"

using namespace kneeplan;

namespace {

constexpr int kScale = 4;
const cv::Size kShape(64, 64);

// Input-resolution coordinate of heatmap node q.
double node(int q) { return heatmap_to_input({static_cast<double>(q), 0.0}, kScale).x; }

}  // namespace

TEST(HeatmapCoordinates, MappingsAreInverse) {
  for (double x : {-0.5, 0.0, 1.5, 13.25, 255.0}) {
    const Point2 p{x, 2 * x};
    const Point2 back = heatmap_to_input(input_to_heatmap(p, kScale), kScale);
    EXPECT_NEAR(back.x, p.x, 1e-12);
    EXPECT_NEAR(back.y, p.y, 1e-12);
  }
  EXPECT_DOUBLE_EQ(node(0), 1.5);
  EXPECT_DOUBLE_EQ(node(63), 253.5);
}

TEST(EncodeLandmark, PeakIsOneAtGridNode) {
  const Heatmap h = encode_landmark({node(20), node(30)}, kShape, kScale);
  double max_value = 0.0;
  cv::Point loc;
  cv::minMaxLoc(h, nullptr, &max_value, nullptr, &loc);
  EXPECT_FLOAT_EQ(static_cast<float>(max_value), 1.0F);
  EXPECT_EQ(loc, cv::Point(20, 30));
}

TEST(EncodeLandmark, ValueAtOneAndThreeSigma) {
  // sigma at heatmap resolution is 6 / 4 = 1.5 cells; place the center
  // 1.5 and 4.5 cells from a node along x.
  const double sigma_hm = kLandmarkSigmaPx / kScale;
  const Heatmap one = encode_landmark({node(20) - sigma_hm * kScale, node(30)}, kShape, kScale);
  EXPECT_NEAR(one(30, 20), std::exp(-0.5), 1e-6);
  EXPECT_NEAR(one(30, 20), 0.60653066, 1e-6);
  const Heatmap three = encode_landmark({node(20) - 3 * sigma_hm * kScale, node(30)}, kShape, kScale);
  EXPECT_NEAR(three(30, 20), std::exp(-4.5), 1e-6);
  EXPECT_NEAR(three(30, 20), 0.011109, 1e-6);
}

TEST(EncodeLandmark, OutsideCanvasThrows) {
  EXPECT_THROW(encode_landmark({-1.0, 10.0}, kShape, kScale), std::invalid_argument);
  EXPECT_THROW(encode_landmark({10.0, 256.0}, kShape, kScale), std::invalid_argument);
  EXPECT_NO_THROW(encode_landmark({0.0, 255.0}, kShape, kScale));
}

TEST(DecodeLandmark, ExhaustiveGridRoundTrip) {
  for (int i = 0; i < kShape.height; ++i) {
    for (int j = 0; j < kShape.width; ++j) {
      const Point2 p{node(j), node(i)};
      const DecodedLandmark d = decode_landmark(encode_landmark(p, kShape, kScale), kScale);
      ASSERT_DOUBLE_EQ(d.point.x, p.x) << "node " << j << "," << i;
      ASSERT_DOUBLE_EQ(d.point.y, p.y) << "node " << j << "," << i;
      ASSERT_FALSE(d.degenerate);
    }
  }
}

TEST(DecodeLandmark, OffGridPointWithinHalfCell) {
  const Point2 p{101.3, 57.9};
  const DecodedLandmark d = decode_landmark(encode_landmark(p, kShape, kScale), kScale);
  EXPECT_LE(std::abs(d.point.x - p.x), kScale / 2.0);
  EXPECT_LE(std::abs(d.point.y - p.y), kScale / 2.0);
}

TEST(DecodeLandmark, ConstantMapIsDegenerate) {
  const Heatmap flat(kShape, 0.25F);
  const DecodedLandmark d = decode_landmark(flat, kScale);
  EXPECT_TRUE(d.degenerate);
}

TEST(DecodeLandmark, TieResolvesToFirstRowMajor) {
  Heatmap h(kShape, 0.0F);
  h(5, 3) = 1.0F;  // row 5, column 3
  h(2, 7) = 1.0F;  // row 2, column 7
  const DecodedLandmark d = decode_landmark(h, kScale);
  EXPECT_DOUBLE_EQ(d.point.x, node(7));
  EXPECT_DOUBLE_EQ(d.point.y, node(2));
}

TEST(LineRoi, ShortSegmentUsesBothEndpoints) {
  const Point2 a{node(10), node(10)};
  const Point2 b{node(11), node(10)};
  const auto centers = line_pseudo_landmarks(a, b, kScale);
  ASSERT_EQ(centers.size(), 2U);
  const Heatmap roi = encode_line_roi(a, b, kShape, kScale);
  EXPECT_FLOAT_EQ(roi(10, 10), 1.0F);
  EXPECT_FLOAT_EQ(roi(10, 11), 1.0F);
}

TEST(LineRoi, SegmentCoveredAboveHalfSpacingBound) {
  const Point2 a{30.0, 20.0};
  const Point2 b{200.0, 170.0};
  const Heatmap roi = encode_line_roi(a, b, kShape, kScale);
  // Dense samples along the segment, evaluated from the pseudo-landmarks.
  const auto centers = line_pseudo_landmarks(a, b, kScale);
  const double sigma_hm = kLandmarkSigmaPx / kScale;
  for (int k = 0; k <= 1000; ++k) {
    const Point2 p = a + (b - a) * (k / 1000.0);
    const Point2 q = input_to_heatmap(p, kScale);
    double best = 0.0;
    for (const auto& c : centers) {
      const double d2 = (q - c).dot(q - c);
      best = std::max(best, std::exp(-d2 / (2 * sigma_hm * sigma_hm)));
    }
    ASSERT_GE(best, std::exp(-0.125) - 1e-12);
  }
  double max_value = 0.0;
  cv::minMaxLoc(roi, nullptr, &max_value);
  EXPECT_LE(max_value, 1.0);
  EXPECT_GE(max_value, std::exp(-0.125));
}

TEST(LineRoi, PeakOneAtNodeAlignedPseudoLandmarks) {
  const Point2 a{node(10), node(20)};
  const Point2 b{node(40), node(20)};
  const Heatmap roi = encode_line_roi(a, b, kShape, kScale);
  EXPECT_FLOAT_EQ(roi(20, 10), 1.0F);
  EXPECT_FLOAT_EQ(roi(20, 40), 1.0F);
  double max_value = 0.0;
  cv::minMaxLoc(roi, nullptr, &max_value);
  EXPECT_FLOAT_EQ(static_cast<float>(max_value), 1.0F);
}

TEST(LineRoi, CoincidentEndpointsThrow) {
  EXPECT_THROW(encode_line_roi({10, 10}, {10, 10}, kShape, kScale), std::invalid_argument);
}

TEST(ThresholdRoi, SingleGaussianDiscRadius) {
  const Heatmap h = encode_landmark({node(32), node(32)}, kShape, kScale);
  const Mask m = threshold_roi(h, 0.5);
  const double sigma_hm = kLandmarkSigmaPx / kScale;
  const double radius = sigma_hm * std::sqrt(2.0 * std::log(2.0));
  // Count lattice nodes inside discs of radius r - 1 and r + 1.
  int inner = 0;
  int outer = 0;
  for (int i = -8; i <= 8; ++i)
    for (int j = -8; j <= 8; ++j) {
      const double d = std::hypot(i, j);
      inner += d <= radius - 1.0 ? 1 : 0;
      outer += d <= radius + 1.0 ? 1 : 0;
    }
  const int count = cv::countNonZero(m);
  EXPECT_GE(count, inner);
  EXPECT_LE(count, outer);
  EXPECT_EQ(m(32, 32), 1);
}

TEST(ThresholdRoi, ConstantMaps) {
  EXPECT_EQ(cv::countNonZero(threshold_roi(Heatmap(kShape, 0.0F))), 0);
  EXPECT_EQ(cv::countNonZero(threshold_roi(Heatmap(kShape, 1.0F))), kShape.area());
  EXPECT_THROW(threshold_roi(Heatmap(kShape, 0.0F), 0.0), std::invalid_argument);
  EXPECT_THROW(threshold_roi(Heatmap(kShape, 0.0F), 1.0), std::invalid_argument);
}

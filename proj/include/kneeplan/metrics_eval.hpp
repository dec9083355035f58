#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "kneeplan/planner_geometry.hpp"
#include "kneeplan/types.hpp"

namespace kneeplan {

// Segmentation metrics ------------------------------------------------------

/// |pred & gt| / |pred | gt|; 1 when both masks are empty.
double iou(const Mask& pred, const Mask& gt);

/// Pixel centers of mask pixels with at least one background 4-neighbor
/// (pixels beyond the canvas count as background), in row-major order.
std::vector<cv::Point> boundary_pixels(const Mask& mask);

/// Exact squared Euclidean distance from every pixel to the nearest set
/// pixel of `seeds` (separable lower-envelope transform).
cv::Mat1d squared_distance_transform(const Mask& seeds);

/// Symmetric ASD: mean of the two directed mean boundary distances, in mm.
/// Throws std::invalid_argument("undefined surface") for an empty mask.
double average_surface_distance(const Mask& pred, const Mask& gt, double mm_per_px = 1.0);

/// Maximum of the two directed maximum boundary distances, in mm.
double hausdorff(const Mask& pred, const Mask& gt, double mm_per_px = 1.0);

// Localization metrics ------------------------------------------------------

double landmark_ed(const Point2& pred, const Point2& gt, double mm_per_px = 1.0);

/// Mean absolute distance of the two reference points to the predicted line.
double line_alignment(const Line2D& pred_line, const Point2& p_prox, const Point2& p_dist,
                      double mm_per_px = 1.0);

struct AxisError {
  double along = 0.0;  // component along LM1 (longitudinal), signed, mm
  double perp = 0.0;   // component across LM1 (anteroposterior), signed, mm
};

/// Decomposes pred - ref along a (normalized internally) LM1 direction and
/// its left-hand normal.
AxisError project_error_axes(const Point2& pred, const Point2& ref, Point2 lm1_direction,
                             double mm_per_px = 1.0);

// Statistics ----------------------------------------------------------------

struct MedianCI {
  double median = 0.0;
  double low = 0.0;
  double high = 0.0;
};

inline constexpr int kDefaultBootstrapResamples = 10000;

/// Sample median with an 80% percentile-bootstrap interval of the median
/// (10th/90th percentiles of the resampled medians), clamped so that
/// low <= median <= high. Deterministic in `seed`.
MedianCI median_ci80(const std::vector<double>& values, int resamples = kDefaultBootstrapResamples,
                     uint64_t seed = 0);

double median(std::vector<double> values);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1), 0 for n < 2
  std::size_t n = 0;
};

MeanStd mean_std(const std::vector<double>& values);

// Inter-rater table ---------------------------------------------------------

/// One rater's Schoettle points over an ordered image set.
struct RaterPlans {
  std::string name;
  std::vector<std::string> image_ids;
  std::vector<Point2> points;
};

struct RaterTableRow {
  std::string first;
  std::string second;
  MedianCI all;
  std::size_t n_all = 0;
  std::optional<MedianCI> suitable;
  std::size_t n_suitable = 0;
};

/// Pairwise ED table: every expert pair, the automatic planner against each
/// expert, and the automatic planner against the per-image expert centroid.
/// `mm_per_px` is per image, aligned with the image ids. Throws
/// std::invalid_argument for misaligned image sets or fewer than two raters.
std::vector<RaterTableRow> pairwise_rater_table(const std::vector<RaterPlans>& experts,
                                                const std::optional<RaterPlans>& automatic,
                                                const std::vector<double>& mm_per_px,
                                                const std::optional<std::set<std::string>>& suitable = std::nullopt,
                                                int resamples = kDefaultBootstrapResamples,
                                                uint64_t seed = 0);

RaterPlans expert_centroid(const std::vector<RaterPlans>& experts);

// Report --------------------------------------------------------------------

/// Per-image results. Optional fields are absent when undefined (empty
/// prediction, failed planning).
struct ImageMetrics {
  std::string id;
  double mm_per_px = 1.0;
  bool calibrated = false;  // mm_per_px came from a calibration, not the 1.0 fallback
  std::array<double, kNumBones> iou{};
  std::array<std::optional<double>, kNumBones> asd_mm;
  std::array<std::optional<double>, kNumBones> hausdorff_mm;
  double ed_blum_mm = 0.0;
  double ed_tmc_mm = 0.0;
  std::optional<double> line_alignment_mm;
  std::optional<double> schoettle_ed_mm;
  std::optional<AxisError> schoettle_axes;
  std::optional<std::string> planning_error;
};

struct BoneSummary {
  MeanStd iou;
  MeanStd asd_mm;
  MeanStd hausdorff_mm;
  std::size_t undefined_surface = 0;  // images where ASD/HD were undefined
};

struct MetricReport {
  std::string units = "mm";  // "px" when no image carried a spacing
  std::array<BoneSummary, kNumBones> bones;
  MedianCI ed_blum;
  MedianCI ed_tmc;
  std::optional<MedianCI> line_alignment;
  std::optional<MedianCI> schoettle_ed;
  std::vector<AxisError> schoettle_axes;
  std::size_t images = 0;
  std::size_t planning_failures = 0;
  std::vector<RaterTableRow> rater_table;
  std::vector<ImageMetrics> per_image;
};

MetricReport summarize(const std::vector<ImageMetrics>& images, int resamples = kDefaultBootstrapResamples,
                       uint64_t seed = 0);

std::string report_to_json(const MetricReport& report);

/// Aligned text tables in the layout of the segmentation and inter-rater
/// tables of the evaluation protocol.
std::string report_to_text(const MetricReport& report);

}  // namespace kneeplan

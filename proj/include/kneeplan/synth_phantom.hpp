#pragma once

#include <cstdint>
#include <optional>

#include "kneeplan/types.hpp"

namespace kneeplan {

/// Parameters of a synthetic lateral-knee phantom.
///
/// The anatomy is laid out in a canonical frame (shaft vertical, posterior
/// towards +x, distal towards +y) centered on the canvas center and then
/// rotated by `femur_shaft_angle_deg` about that center:
///   femur   shaft rectangle with a straight posterior edge, plus two
///           overlapping condyle discs
///   patella ellipse anterior to the condyles
///   tibia   rounded rectangle below the joint gap; `overlap_fraction`
///           pushes it up into the condyles
///   fibula  thin rounded rectangle partially behind the tibia; its overlap
///           with the tibia also grows with `overlap_fraction`
/// The optional calibration sphere is a uniform disc in the anterior-proximal
/// corner.
struct PhantomSpec {
  uint64_t seed = 0;
  int height = 256;
  int width = 256;
  double femur_shaft_angle_deg = 0.0;
  double condyle_radius = 40.0;
  double overlap_fraction = 0.3;
  double noise_std = 0.02;
  std::optional<double> sphere_diameter_px;

  /// Throws std::invalid_argument on an invariant violation, including
  /// anatomy that does not fit on the canvas.
  void validate() const;
};

/// Analytic ground truth of a phantom, in image coordinates.
struct PhantomGeometry {
  Point2 p_blum;
  Point2 p_tmc;
  Point2 p_prox;
  Point2 p_dist;
  Point2 condyle_center;     // center of the main condyle disc
  Point2 cortex_direction;   // unit vector along the posterior shaft edge, distal
  Point2 posterior_normal;   // unit normal of the shaft edge, pointing posterior
  double cortex_offset = 0;  // posterior_normal . x on the shaft edge
  Point2 blumensaat_anterior;  // anterior end of the rendered Blumensaat chord
  std::optional<Point2> sphere_center;
};

PhantomGeometry phantom_geometry(const PhantomSpec& spec);

/// Renders the phantom. Deterministic in `spec`; the seed only drives the
/// additive noise, so with noise_std == 0 the output ignores the seed.
Sample generate_phantom(const PhantomSpec& spec);

struct AnalyticSchoettle {
  Point2 point;
  double radius = 0.0;
};

/// Closed-form inner-circle center of the phantom's cortex line and the two
/// perpendiculars through p_blum and p_tmc.
AnalyticSchoettle analytic_schoettle(const PhantomSpec& spec);

/// Spec with anatomy drawn from `seed` (angle, condyle size, overlap) on a
/// canvas of the given size, used to build training corpora.
PhantomSpec random_phantom_spec(uint64_t seed, int height = 256, int width = 256);

/// Spec of phantom `index` in the corpus generated from `corpus_seed`.
PhantomSpec corpus_phantom_spec(uint64_t corpus_seed, int index, int size = 256);

}  // namespace kneeplan

#include "kneeplan/synth_phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "kneeplan/dataset_io.hpp"

namespace kneeplan {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

// Canonical layout, in units of the condyle radius R unless noted.
constexpr double kCondyleCenterV = 0.6;
constexpr double kShaftBulge = 0.25;  // condyle extends this far past the shaft edge
constexpr double kShaftWidth = 1.4;
constexpr double kSecondCondyleU = -0.2;
constexpr double kSecondCondyleV = 0.75;
constexpr double kSecondCondyleR = 0.9;
constexpr double kBlumRadius = 0.7;
constexpr double kBlumAngleDeg = 35.0;
constexpr double kBlumChordAngleDeg = 150.0;
constexpr double kDistGap = 0.35;        // p_dist sits this far proximal of p_tmc
constexpr double kProxFraction = 0.45;  // of min(H, W), measured from the canvas center
constexpr double kPatellaU = -1.5, kPatellaV = 0.3, kPatellaA = 0.32, kPatellaB = 0.75;
constexpr double kTibiaU0 = -1.15, kTibiaU1 = 0.95, kTibiaCorner = 0.25;
constexpr double kJointGap = 0.06, kTibiaOverlapTravel = 0.6;
constexpr double kFibulaWidth = 0.3, kFibulaDrop = 0.45, kFibulaOverlapTravel = 0.3;
constexpr double kSphereOffset = 0.33;  // of min(H, W), anterior and proximal

// Intensities (additive, X-ray-like superimposition).
constexpr double kBackground = 0.08;
constexpr double kFemurI = 0.36, kPatellaI = 0.34, kTibiaI = 0.38, kFibulaI = 0.3;
constexpr double kChordI = 0.12, kSphereI = 0.9;

struct Frame {
  Point2 origin;
  double c, s;

  Point2 to_image(double u, double v) const { return {origin.x + c * u - s * v, origin.y + s * u + c * v}; }
  Point2 to_image(const Point2& q) const { return to_image(q.x, q.y); }
  Point2 rotate(const Point2& d) const { return {c * d.x - s * d.y, s * d.x + c * d.y}; }
  Point2 to_canonical(double x, double y) const {
    const double dx = x - origin.x;
    const double dy = y - origin.y;
    return {c * dx + s * dy, -s * dx + c * dy};
  }
};

Frame frame_of(const PhantomSpec& spec) {
  return {{(spec.width - 1) / 2.0, (spec.height - 1) / 2.0},
          std::cos(spec.femur_shaft_angle_deg * kDeg),
          std::sin(spec.femur_shaft_angle_deg * kDeg)};
}

struct Canonical {
  double R;
  Point2 condyle_a;
  Point2 condyle_b;
  double shaft_post;
  Point2 p_blum, p_tmc, p_prox, p_dist, chord_end;
  double tibia_top;
  double fibula_u0;
  std::optional<Point2> sphere;
  double sphere_radius = 0.0;
};

Canonical canonical_layout(const PhantomSpec& spec) {
  Canonical g;
  const double R = spec.condyle_radius;
  const double S = std::min(spec.height, spec.width);
  g.R = R;
  g.condyle_a = {0.0, kCondyleCenterV * R};
  g.condyle_b = {kSecondCondyleU * R, kSecondCondyleV * R};
  g.shaft_post = (1.0 - kShaftBulge) * R;

  // Upper intersection of the main condyle circle with the shaft edge, moved
  // one pixel anterior so that it lies inside the femur.
  const double du = g.shaft_post - g.condyle_a.x;
  const double v_tmc = g.condyle_a.y - std::sqrt(R * R - du * du);
  g.p_tmc = {g.shaft_post - 1.0, v_tmc};
  g.p_blum = g.condyle_a + Point2{std::cos(kBlumAngleDeg * kDeg), std::sin(kBlumAngleDeg * kDeg)} *
                               (kBlumRadius * R);
  g.chord_end = g.condyle_a + Point2{std::cos(kBlumChordAngleDeg * kDeg),
                                     std::sin(kBlumChordAngleDeg * kDeg)} *
                                  (kBlumRadius * R);
  g.p_dist = {g.shaft_post, v_tmc - kDistGap * R};
  g.p_prox = {g.shaft_post, -kProxFraction * S};

  g.tibia_top = g.condyle_a.y + R + kJointGap * R - spec.overlap_fraction * kTibiaOverlapTravel * R;
  g.fibula_u0 = kTibiaU1 * R - spec.overlap_fraction * kFibulaOverlapTravel * R;
  if (spec.sphere_diameter_px) {
    g.sphere = Point2{-kSphereOffset * S, -kSphereOffset * S};
    g.sphere_radius = *spec.sphere_diameter_px / 2.0;
  }
  return g;
}

bool in_disc(const Point2& q, const Point2& c, double r) {
  const Point2 d = q - c;
  return d.dot(d) <= r * r;
}

/// Axis-aligned rectangle [u0,u1] x [v0, +inf) with rounded top corners.
bool in_rounded_column(const Point2& q, double u0, double u1, double v0, double corner) {
  if (q.x < u0 || q.x > u1 || q.y < v0) return false;
  if (q.y >= v0 + corner) return true;
  const double cx = std::clamp(q.x, u0 + corner, u1 - corner);
  return in_disc(q, {cx, v0 + corner}, corner);
}

bool in_femur(const Canonical& g, const Point2& q) {
  const bool shaft = q.x <= g.shaft_post && q.x >= g.shaft_post - kShaftWidth * g.R && q.y <= g.condyle_a.y;
  return shaft || in_disc(q, g.condyle_a, g.R) || in_disc(q, g.condyle_b, kSecondCondyleR * g.R);
}

bool in_patella(const Canonical& g, const Point2& q) {
  const double a = kPatellaA * g.R;
  const double b = kPatellaB * g.R;
  const double du = (q.x - kPatellaU * g.R) / a;
  const double dv = (q.y - kPatellaV * g.R) / b;
  return du * du + dv * dv <= 1.0;
}

bool in_tibia(const Canonical& g, const Point2& q) {
  return in_rounded_column(q, kTibiaU0 * g.R, kTibiaU1 * g.R, g.tibia_top, kTibiaCorner * g.R);
}

bool in_fibula(const Canonical& g, const Point2& q) {
  const double w = kFibulaWidth * g.R;
  return in_rounded_column(q, g.fibula_u0, g.fibula_u0 + w, g.tibia_top + kFibulaDrop * g.R, w / 2.0);
}

double segment_distance(const Point2& q, const Point2& a, const Point2& b) {
  const Point2 ab = b - a;
  const double t = std::clamp((q - a).dot(ab) / ab.dot(ab), 0.0, 1.0);
  return distance(q, a + ab * t);
}

bool inside_canvas(const Point2& p, const PhantomSpec& spec) {
  return p.x >= 0.0 && p.y >= 0.0 && p.x <= spec.width - 1.0 && p.y <= spec.height - 1.0;
}

}  // namespace

void PhantomSpec::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("PhantomSpec: " + what); };
  if (height < 128 || width < 128) fail("canvas must be at least 128x128");
  if (!(condyle_radius > 0.0)) fail("condyle_radius must be positive");
  if (!(overlap_fraction >= 0.0 && overlap_fraction <= 1.0)) fail("overlap_fraction must lie in [0,1]");
  if (!(noise_std >= 0.0)) fail("noise_std must be non-negative");
  if (sphere_diameter_px && !(*sphere_diameter_px > 0.0)) fail("sphere_diameter_px must be positive");

  const Canonical g = canonical_layout(*this);
  const Frame f = frame_of(*this);
  for (const Point2& q : {g.p_blum, g.p_tmc, g.p_prox, g.p_dist}) {
    if (!inside_canvas(f.to_image(q), *this)) fail("anatomy does not fit on the canvas");
  }
  if (g.sphere) {
    const Point2 c = f.to_image(*g.sphere);
    const double r = g.sphere_radius;
    if (c.x - r < 0 || c.y - r < 0 || c.x + r > width - 1.0 || c.y + r > height - 1.0)
      fail("calibration sphere does not fit on the canvas");
  }
}

PhantomGeometry phantom_geometry(const PhantomSpec& spec) {
  spec.validate();
  const Canonical g = canonical_layout(spec);
  const Frame f = frame_of(spec);
  PhantomGeometry out;
  out.p_blum = f.to_image(g.p_blum);
  out.p_tmc = f.to_image(g.p_tmc);
  out.p_prox = f.to_image(g.p_prox);
  out.p_dist = f.to_image(g.p_dist);
  out.condyle_center = f.to_image(g.condyle_a);
  out.cortex_direction = f.rotate({0.0, 1.0});
  out.posterior_normal = f.rotate({1.0, 0.0});
  out.cortex_offset = out.posterior_normal.dot(f.to_image(g.shaft_post, 0.0));
  out.blumensaat_anterior = f.to_image(g.chord_end);
  if (g.sphere) out.sphere_center = f.to_image(*g.sphere);
  return out;
}

Sample generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  const Canonical g = canonical_layout(spec);
  const Frame f = frame_of(spec);
  const int h = spec.height;
  const int w = spec.width;

  Sample sample;
  sample.image.pixels = cv::Mat1f(h, w);
  sample.image.source_id = "phantom_" + std::to_string(spec.seed);
  for (auto& m : sample.annotation.masks) m = Mask::zeros(h, w);
  auto& masks = sample.annotation.masks;

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double chord_half_width = 1.0;

  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const Point2 q = f.to_canonical(j, i);
      const bool femur = in_femur(g, q);
      const bool patella = in_patella(g, q);
      const bool tibia = in_tibia(g, q);
      const bool fibula = in_fibula(g, q);
      masks[0](i, j) = femur;
      masks[1](i, j) = patella;
      masks[2](i, j) = tibia;
      masks[3](i, j) = fibula;

      double value = kBackground + kFemurI * femur + kPatellaI * patella + kTibiaI * tibia +
                     kFibulaI * fibula;
      if (segment_distance(q, g.p_blum, g.chord_end) <= chord_half_width) value += kChordI;
      if (g.sphere && in_disc(q, *g.sphere, g.sphere_radius)) value = kSphereI;
      if (spec.noise_std > 0.0) value += spec.noise_std * noise(rng);
      sample.image.pixels(i, j) = static_cast<float>(std::clamp(value, 0.0, 1.0));
    }
  }

  auto& a = sample.annotation;
  a.p_blum = f.to_image(g.p_blum);
  a.p_tmc = f.to_image(g.p_tmc);
  a.p_prox = f.to_image(g.p_prox);
  a.p_dist = f.to_image(g.p_dist);
  if (spec.sphere_diameter_px) sample.image.mm_per_px = calibrate_spacing(*spec.sphere_diameter_px);
  return sample;
}

AnalyticSchoettle analytic_schoettle(const PhantomSpec& spec) {
  spec.validate();
  const Canonical g = canonical_layout(spec);
  const Frame f = frame_of(spec);
  // In the canonical frame the cortex line is u = shaft_post, the two
  // perpendiculars are v = const, and the femur lies at u < shaft_post.
  const double radius = std::abs(g.p_blum.y - g.p_tmc.y) / 2.0;
  const Point2 center{g.shaft_post - radius, (g.p_blum.y + g.p_tmc.y) / 2.0};
  return {f.to_image(center), radius};
}

PhantomSpec random_phantom_spec(uint64_t seed, int height, int width) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> angle(-10.0, 10.0);
  std::uniform_real_distribution<double> radius_factor(0.14, 0.17);
  std::uniform_real_distribution<double> overlap(0.2, 0.45);
  PhantomSpec spec;
  spec.seed = seed;
  spec.height = height;
  spec.width = width;
  spec.femur_shaft_angle_deg = angle(rng);
  spec.condyle_radius = radius_factor(rng) * std::min(height, width);
  spec.overlap_fraction = overlap(rng);
  spec.noise_std = 0.02;
  spec.sphere_diameter_px = 0.12 * std::min(height, width);
  return spec;
}

PhantomSpec corpus_phantom_spec(uint64_t corpus_seed, int index, int size) {
  if (index < 0) throw std::invalid_argument("corpus_phantom_spec: negative index");
  return random_phantom_spec(corpus_seed * 1000003ULL + static_cast<uint64_t>(index), size, size);
}

}  // namespace kneeplan

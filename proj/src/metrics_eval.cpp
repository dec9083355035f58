#include "kneeplan/metrics_eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace kneeplan {

double iou(const Mask& pred, const Mask& gt) {
  if (pred.size() != gt.size()) throw std::invalid_argument("iou: shape mismatch");
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (int i = 0; i < pred.rows; ++i)
    for (int j = 0; j < pred.cols; ++j) {
      const bool a = pred(i, j) != 0;
      const bool b = gt(i, j) != 0;
      inter += a && b;
      uni += a || b;
    }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<cv::Point> boundary_pixels(const Mask& mask) {
  std::vector<cv::Point> out;
  auto bg = [&](int i, int j) { return i < 0 || j < 0 || i >= mask.rows || j >= mask.cols || !mask(i, j); };
  for (int i = 0; i < mask.rows; ++i)
    for (int j = 0; j < mask.cols; ++j)
      if (mask(i, j) && (bg(i - 1, j) || bg(i + 1, j) || bg(i, j - 1) || bg(i, j + 1)))
        out.emplace_back(j, i);
  return out;
}

namespace {

constexpr double kInf = 1e20;

// 1D squared distance transform of sampled function f (lower envelope of
// parabolas). Only finite samples enter the envelope; values stay exact
// integers for integer inputs below 2^53.
void edt_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v, std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  auto intersect = [&f](int q, int p) {
    return ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * (q - p));
  };
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] >= kInf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    double s = intersect(q, v[k]);
    while (k > 0 && s <= z[k]) {
      --k;
      s = intersect(q, v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  if (k < 0) {
    std::fill(d.begin(), d.end(), kInf);
    return;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double dq = q - v[k];
    d[q] = dq * dq + f[v[k]];
  }
}

}  // namespace

cv::Mat1d squared_distance_transform(const Mask& seeds) {
  const int rows = seeds.rows;
  const int cols = seeds.cols;
  cv::Mat1d out(rows, cols);
  const int n = std::max(rows, cols);
  std::vector<double> f(n), d(n), z(n + 1);
  std::vector<int> v(n);

  for (int j = 0; j < cols; ++j) {
    f.resize(rows);
    d.resize(rows);
    for (int i = 0; i < rows; ++i) f[i] = seeds(i, j) ? 0.0 : kInf;
    edt_1d(f, d, v, z);
    for (int i = 0; i < rows; ++i) out(i, j) = d[i];
  }
  for (int i = 0; i < rows; ++i) {
    f.resize(cols);
    d.resize(cols);
    for (int j = 0; j < cols; ++j) f[j] = out(i, j);
    edt_1d(f, d, v, z);
    for (int j = 0; j < cols; ++j) out(i, j) = d[j];
  }
  return out;
}

namespace {

struct Directed {
  double sum = 0.0;
  double max = 0.0;
  std::size_t n = 0;
};

Mask points_to_mask(const std::vector<cv::Point>& pts, cv::Size size) {
  Mask m = Mask::zeros(size);
  for (const auto& p : pts) m(p.y, p.x) = 1;
  return m;
}

Directed directed_distances(const std::vector<cv::Point>& from, const cv::Mat1d& to_sq) {
  Directed r;
  for (const auto& p : from) {
    const double dist = std::sqrt(to_sq(p.y, p.x));
    r.sum += dist;
    r.max = std::max(r.max, dist);
    ++r.n;
  }
  return r;
}

std::pair<Directed, Directed> surface_distances(const Mask& pred, const Mask& gt) {
  if (pred.size() != gt.size()) throw std::invalid_argument("surface distance: shape mismatch");
  const auto bp = boundary_pixels(pred);
  const auto bg = boundary_pixels(gt);
  if (bp.empty() || bg.empty()) throw std::invalid_argument("undefined surface: empty mask");
  const auto dt_gt = squared_distance_transform(points_to_mask(bg, gt.size()));
  const auto dt_pred = squared_distance_transform(points_to_mask(bp, pred.size()));
  return {directed_distances(bp, dt_gt), directed_distances(bg, dt_pred)};
}

}  // namespace

double average_surface_distance(const Mask& pred, const Mask& gt, double mm_per_px) {
  const auto [a, b] = surface_distances(pred, gt);
  const double mean_a = a.sum / static_cast<double>(a.n);
  const double mean_b = b.sum / static_cast<double>(b.n);
  return 0.5 * (mean_a + mean_b) * mm_per_px;
}

double hausdorff(const Mask& pred, const Mask& gt, double mm_per_px) {
  const auto [a, b] = surface_distances(pred, gt);
  return std::max(a.max, b.max) * mm_per_px;
}

double landmark_ed(const Point2& pred, const Point2& gt, double mm_per_px) {
  return distance(pred, gt) * mm_per_px;
}

double line_alignment(const Line2D& pred_line, const Point2& p_prox, const Point2& p_dist, double mm_per_px) {
  return 0.5 * (std::abs(pred_line.signed_distance(p_prox)) + std::abs(pred_line.signed_distance(p_dist))) *
         mm_per_px;
}

AxisError project_error_axes(const Point2& pred, const Point2& ref, Point2 lm1_direction, double mm_per_px) {
  const double len = lm1_direction.norm();
  if (!(len > 0.0)) throw std::invalid_argument("project_error_axes: zero direction");
  lm1_direction = lm1_direction / len;
  const Point2 normal{-lm1_direction.y, lm1_direction.x};
  const Point2 e = pred - ref;
  return {e.dot(lm1_direction) * mm_per_px, e.dot(normal) * mm_per_px};
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median: empty list");
  const std::size_t n = values.size();
  const auto mid = values.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(values.begin(), mid, values.end());
  if (n % 2 == 1) return *mid;
  const double upper = *mid;
  const double lower = *std::max_element(values.begin(), mid);
  return 0.5 * (lower + upper);
}

namespace {

// Linear interpolation between order statistics, h = (n - 1) p.
double quantile_sorted(const std::vector<double>& sorted, double p) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

MedianCI median_ci80(const std::vector<double>& values, int resamples, uint64_t seed) {
  if (values.empty()) throw std::invalid_argument("median_ci80: empty list");
  if (resamples < 1) throw std::invalid_argument("median_ci80: resamples must be positive");
  MedianCI out;
  out.median = median(values);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
  std::vector<double> medians(static_cast<std::size_t>(resamples));
  std::vector<double> draw(values.size());
  for (auto& m : medians) {
    for (auto& d : draw) d = values[pick(rng)];
    m = median(draw);
  }
  std::sort(medians.begin(), medians.end());
  out.low = std::min(quantile_sorted(medians, 0.10), out.median);
  out.high = std::max(quantile_sorted(medians, 0.90), out.median);
  return out;
}

MeanStd mean_std(const std::vector<double>& values) {
  MeanStd r;
  r.n = values.size();
  if (values.empty()) return r;
  r.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(r.n);
  if (r.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - r.mean) * (v - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(r.n - 1));
  }
  return r;
}

RaterPlans expert_centroid(const std::vector<RaterPlans>& experts) {
  if (experts.empty()) throw std::invalid_argument("expert_centroid: no experts");
  RaterPlans c;
  c.name = "Expert centroid";
  c.image_ids = experts.front().image_ids;
  c.points.assign(c.image_ids.size(), Point2{});
  for (const auto& e : experts) {
    if (e.image_ids != c.image_ids || e.points.size() != c.image_ids.size())
      throw std::invalid_argument("expert_centroid: misaligned image sets");
    for (std::size_t k = 0; k < e.points.size(); ++k) c.points[k] = c.points[k] + e.points[k];
  }
  for (auto& p : c.points) p = p / static_cast<double>(experts.size());
  return c;
}

std::vector<RaterTableRow> pairwise_rater_table(const std::vector<RaterPlans>& experts,
                                                const std::optional<RaterPlans>& automatic,
                                                const std::vector<double>& mm_per_px,
                                                const std::optional<std::set<std::string>>& suitable,
                                                int resamples, uint64_t seed) {
  const std::size_t raters = experts.size() + (automatic ? 1 : 0);
  if (raters < 2) throw std::invalid_argument("pairwise_rater_table: need at least two raters");
  const auto& ids = experts.empty() ? automatic->image_ids : experts.front().image_ids;
  auto check = [&](const RaterPlans& r) {
    if (r.image_ids != ids || r.points.size() != ids.size())
      throw std::invalid_argument("pairwise_rater_table: misaligned image sets (" + r.name + ")");
  };
  for (const auto& e : experts) check(e);
  if (automatic) check(*automatic);
  if (mm_per_px.size() != ids.size()) throw std::invalid_argument("pairwise_rater_table: spacing count mismatch");

  auto row = [&](const RaterPlans& a, const RaterPlans& b) {
    RaterTableRow r;
    r.first = a.name;
    r.second = b.name;
    std::vector<double> all, subset;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const double ed = landmark_ed(a.points[k], b.points[k], mm_per_px[k]);
      all.push_back(ed);
      if (suitable && suitable->count(ids[k])) subset.push_back(ed);
    }
    r.n_all = all.size();
    if (!all.empty()) r.all = median_ci80(all, resamples, seed);
    r.n_suitable = subset.size();
    if (!subset.empty()) r.suitable = median_ci80(subset, resamples, seed);
    return r;
  };

  std::vector<RaterTableRow> rows;
  for (std::size_t i = 0; i < experts.size(); ++i)
    for (std::size_t j = i + 1; j < experts.size(); ++j) rows.push_back(row(experts[i], experts[j]));
  if (automatic) {
    for (const auto& e : experts) rows.push_back(row(*automatic, e));
    if (!experts.empty()) rows.push_back(row(*automatic, expert_centroid(experts)));
  }
  return rows;
}

MetricReport summarize(const std::vector<ImageMetrics>& images, int resamples, uint64_t seed) {
  if (images.empty()) throw std::invalid_argument("summarize: no images");
  MetricReport r;
  r.images = images.size();
  r.per_image = images;
  const bool any_spacing = std::any_of(images.begin(), images.end(), [](const auto& m) { return m.calibrated; });
  r.units = any_spacing ? "mm" : "px";

  for (int b = 0; b < kNumBones; ++b) {
    std::vector<double> ious, asds, hds;
    std::size_t undefined = 0;
    for (const auto& m : images) {
      ious.push_back(m.iou[b]);
      if (m.asd_mm[b] && m.hausdorff_mm[b]) {
        asds.push_back(*m.asd_mm[b]);
        hds.push_back(*m.hausdorff_mm[b]);
      } else {
        ++undefined;
      }
    }
    r.bones[b] = {mean_std(ious), mean_std(asds), mean_std(hds), undefined};
  }

  std::vector<double> blum, tmc, line, sp;
  for (const auto& m : images) {
    blum.push_back(m.ed_blum_mm);
    tmc.push_back(m.ed_tmc_mm);
    if (m.line_alignment_mm) line.push_back(*m.line_alignment_mm);
    if (m.schoettle_ed_mm) sp.push_back(*m.schoettle_ed_mm);
    if (m.schoettle_axes) r.schoettle_axes.push_back(*m.schoettle_axes);
    if (m.planning_error) ++r.planning_failures;
  }
  r.ed_blum = median_ci80(blum, resamples, seed);
  r.ed_tmc = median_ci80(tmc, resamples, seed);
  if (!line.empty()) r.line_alignment = median_ci80(line, resamples, seed);
  if (!sp.empty()) r.schoettle_ed = median_ci80(sp, resamples, seed);
  return r;
}

namespace {

using nlohmann::json;

json ci_json(const MedianCI& c) { return {{"median", c.median}, {"ci80_low", c.low}, {"ci80_high", c.high}}; }
json ms_json(const MeanStd& m) { return {{"mean", m.mean}, {"std", m.std}, {"n", m.n}}; }

template <typename T>
json opt(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

std::string fmt(double v, int precision = 2) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << v;
  return s.str();
}

std::string ci_text(const MedianCI& c) { return fmt(c.median) + ", [" + fmt(c.low) + ", " + fmt(c.high) + "]"; }

}  // namespace

std::string report_to_json(const MetricReport& r) {
  json j;
  j["units"] = r.units;
  j["images"] = r.images;
  j["planning_failures"] = r.planning_failures;
  json bones = json::object();
  for (int b = 0; b < kNumBones; ++b) {
    const auto& s = r.bones[b];
    bones[std::string(kBoneNames[b])] = {{"iou", ms_json(s.iou)},
                                         {"asd", ms_json(s.asd_mm)},
                                         {"hausdorff", ms_json(s.hausdorff_mm)},
                                         {"undefined_surface", s.undefined_surface}};
  }
  j["segmentation"] = bones;
  j["landmarks"] = {{"p_blum", ci_json(r.ed_blum)}, {"p_tmc", ci_json(r.ed_tmc)}};
  j["line_alignment"] = r.line_alignment ? ci_json(*r.line_alignment) : json(nullptr);
  j["schoettle_ed"] = r.schoettle_ed ? ci_json(*r.schoettle_ed) : json(nullptr);
  json axes = json::array();
  for (const auto& a : r.schoettle_axes) axes.push_back({{"along", a.along}, {"perp", a.perp}});
  j["schoettle_axis_errors"] = axes;
  json table = json::array();
  for (const auto& row : r.rater_table) {
    table.push_back({{"first", row.first},
                     {"second", row.second},
                     {"all", ci_json(row.all)},
                     {"n_all", row.n_all},
                     {"suitable", row.suitable ? ci_json(*row.suitable) : json(nullptr)},
                     {"n_suitable", row.n_suitable}});
  }
  j["rater_table"] = table;
  json per_image = json::array();
  for (const auto& m : r.per_image) {
    json bones_img = json::object();
    for (int b = 0; b < kNumBones; ++b)
      bones_img[std::string(kBoneNames[b])] = {
          {"iou", m.iou[b]}, {"asd", opt(m.asd_mm[b])}, {"hausdorff", opt(m.hausdorff_mm[b])}};
    per_image.push_back({{"id", m.id},
                         {"mm_per_px", m.mm_per_px},
                         {"segmentation", bones_img},
                         {"ed_p_blum", m.ed_blum_mm},
                         {"ed_p_tmc", m.ed_tmc_mm},
                         {"line_alignment", opt(m.line_alignment_mm)},
                         {"schoettle_ed", opt(m.schoettle_ed_mm)},
                         {"planning_error", opt(m.planning_error)}});
  }
  j["per_image"] = per_image;
  return j.dump(2);
}

std::string report_to_text(const MetricReport& r) {
  std::ostringstream out;
  const std::string u = r.units;
  out << "Segmentation performance on " << r.images << " images\n";
  out << std::left << std::setw(10) << "Anatomy" << std::setw(22) << "mean IOU (mean+-std)" << std::setw(26)
      << ("ASD (mean+-std) (" + u + ")") << ("Hausdorff (mean+-std) (" + u + ")") << "\n";
  for (int b = 0; b < kNumBones; ++b) {
    const auto& s = r.bones[b];
    std::string name(kBoneNames[b]);
    name[0] = static_cast<char>(std::toupper(name[0]));
    out << std::left << std::setw(10) << name << std::setw(22) << (fmt(s.iou.mean) + " +- " + fmt(s.iou.std))
        << std::setw(26) << (fmt(s.asd_mm.mean) + " +- " + fmt(s.asd_mm.std))
        << (fmt(s.hausdorff_mm.mean) + " +- " + fmt(s.hausdorff_mm.std)) << "\n";
  }
  out << "\nLocalization (median, CI80) (" << u << ")\n";
  out << std::left << std::setw(18) << "p_blum" << ci_text(r.ed_blum) << "\n";
  out << std::left << std::setw(18) << "p_tmc" << ci_text(r.ed_tmc) << "\n";
  if (r.line_alignment) out << std::left << std::setw(18) << "cortex line" << ci_text(*r.line_alignment) << "\n";
  if (r.schoettle_ed) out << std::left << std::setw(18) << "Schoettle Point" << ci_text(*r.schoettle_ed) << "\n";
  if (r.planning_failures) out << "planning failures: " << r.planning_failures << "\n";

  if (!r.rater_table.empty()) {
    out << "\nInter-rater variability, median ED (CI80) (" << u << ")\n";
    out << std::left << std::setw(18) << "First rater" << std::setw(18) << "Second rater" << std::setw(26)
        << "Schoettle Point (all)" << "Schoettle Point (suitable)" << "\n";
    for (const auto& row : r.rater_table) {
      out << std::left << std::setw(18) << row.first << std::setw(18) << row.second << std::setw(26)
          << (ci_text(row.all) + " (" + std::to_string(row.n_all) + ")")
          << (row.suitable ? ci_text(*row.suitable) + " (" + std::to_string(row.n_suitable) + ")" : "-") << "\n";
    }
  }
  return out.str();
}

}  // namespace kneeplan

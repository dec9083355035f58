#include "kneeplan/inference.hpp"

#include <stdexcept>

#include "kneeplan/heatmap_codec.hpp"
#include "kneeplan/tensor_util.hpp"

namespace kneeplan {

NetworkPrediction to_prediction(const NetworkOutput& output, int index, int scale) {
  if (output.empty()) throw std::invalid_argument("to_prediction: empty network output");
  const StackOutput& last = output.back();
  NetworkPrediction p;
  p.scale = scale;
  const auto seg = torch::sigmoid(last.seg_logits[index]).detach();
  for (int b = 0; b < kNumBones; ++b) p.seg_prob[b] = tensor_to_mat(seg[b]);
  const auto lm = last.lm_maps[index].detach();
  for (int k = 0; k < 2; ++k) p.landmarks[k] = tensor_to_mat(lm[k]);
  p.roi = tensor_to_mat(last.roi_map[index][0].detach());
  return p;
}

RawInference run_network(StackedHourglass& net, const GrayImage& image) {
  torch::NoGradGuard guard;
  net->eval();
  auto [normalized, transform] = normalize_image(image, net->config().input_size);
  const auto batch = mat_to_tensor(normalized.pixels).unsqueeze(0).unsqueeze(0);
  const auto out = net->forward(batch);
  return {to_prediction(out, 0, net->config().input_size / out.back().seg_logits.size(2)), transform};
}

namespace {

void run_planner(ImagePrediction& out, const NetworkPrediction& pred, const NormalizeTransform& t,
                 std::optional<double> mm_per_px, std::optional<Point2> reference) {
  try {
    out.plan = plan(pred, t, out.masks[static_cast<int>(Bone::kFemur)], mm_per_px, reference);
  } catch (const PlanningError& e) {
    out.planning_error = e.what();
  }
}

}  // namespace

ImagePrediction predict_image(StackedHourglass& net, const GrayImage& image, std::optional<Point2> reference) {
  const RawInference raw = run_network(net, image);
  const auto& pred = raw.prediction;
  ImagePrediction out;
  for (int b = 0; b < kNumBones; ++b) out.masks[b] = resample_to_original(pred.seg_prob[b], raw.transform, pred.scale, 0.5);
  out.p_blum = raw.transform.inverse(decode_landmark(pred.landmarks[0], pred.scale).point);
  out.p_tmc = raw.transform.inverse(decode_landmark(pred.landmarks[1], pred.scale).point);
  run_planner(out, pred, raw.transform, image.mm_per_px, reference);
  return out;
}

ImagePrediction ground_truth_prediction(const Sample& sample) {
  const auto& a = sample.annotation;
  ImagePrediction out;
  out.masks = a.masks;
  out.p_blum = a.p_blum;
  out.p_tmc = a.p_tmc;
  const NormalizeTransform t = normalize_transform_for(sample.image.pixels.size());
  const int scale = 4;
  const cv::Size hm(t.output_size / scale, t.output_size / scale);
  const Heatmap roi = encode_line_roi(t.forward(a.p_prox), t.forward(a.p_dist), hm, scale);
  PlanInputs in;
  in.p_blum = a.p_blum;
  in.p_tmc = a.p_tmc;
  in.femur_mask = a.mask(Bone::kFemur);
  in.roi_mask = lookup_to_original(threshold_roi(roi), t, scale);
  in.min_gap_px = scale / t.scale;
  in.mm_per_px = sample.image.mm_per_px;
  try {
    out.plan = plan(in);
  } catch (const PlanningError& e) {
    out.planning_error = e.what();
  }
  return out;
}

PlanningResult reference_plan(const Sample& sample) {
  const auto& a = sample.annotation;
  PlanningResult r = schoettle_point(Line2D::through(a.p_prox, a.p_dist), a.p_blum, a.p_tmc,
                                     mask_centroid(a.mask(Bone::kFemur)), 0.0);
  attach_measurements(r, sample.image.mm_per_px, std::nullopt);
  return r;
}

ImageMetrics evaluate_prediction(const ImagePrediction& pred, const Sample& gt) {
  const auto& a = gt.annotation;
  ImageMetrics m;
  m.id = gt.image.source_id;
  m.mm_per_px = gt.image.mm_per_px.value_or(1.0);
  m.calibrated = gt.image.mm_per_px.has_value();
  for (int b = 0; b < kNumBones; ++b) {
    m.iou[b] = iou(pred.masks[b], a.masks[b]);
    if (cv::countNonZero(pred.masks[b]) > 0 && cv::countNonZero(a.masks[b]) > 0) {
      m.asd_mm[b] = average_surface_distance(pred.masks[b], a.masks[b], m.mm_per_px);
      m.hausdorff_mm[b] = hausdorff(pred.masks[b], a.masks[b], m.mm_per_px);
    }
  }
  m.ed_blum_mm = landmark_ed(pred.p_blum, a.p_blum, m.mm_per_px);
  m.ed_tmc_mm = landmark_ed(pred.p_tmc, a.p_tmc, m.mm_per_px);
  if (pred.plan) {
    const PlanningResult ref = reference_plan(gt);
    m.line_alignment_mm = line_alignment(pred.plan->lm1, a.p_prox, a.p_dist, m.mm_per_px);
    m.schoettle_ed_mm = landmark_ed(pred.plan->p_sp, ref.p_sp, m.mm_per_px);
    m.schoettle_axes = project_error_axes(pred.plan->p_sp, ref.p_sp, ref.lm1.direction(), m.mm_per_px);
  } else {
    m.planning_error = pred.planning_error.value_or("planning failed");
  }
  return m;
}

MetricReport validate(StackedHourglass& net, const std::vector<Sample>& samples, int resamples, uint64_t seed) {
  if (samples.empty()) throw std::invalid_argument("validate: empty split");
  std::vector<ImageMetrics> metrics;
  metrics.reserve(samples.size());
  for (const auto& s : samples) metrics.push_back(evaluate_prediction(predict_image(net, s.image), s));
  return summarize(metrics, resamples, seed);
}

}  // namespace kneeplan

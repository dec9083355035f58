// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero when any selected criterion fails.
//
//   acceptance                    all criteria
//   acceptance --criteria 1,2,8   a subset

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

#include "kneeplan/heatmap_codec.hpp"
#include "kneeplan/inference.hpp"
#include "kneeplan/losses_weighting.hpp"
#include "kneeplan/metrics_eval.hpp"
#include "kneeplan/model_shgn.hpp"
#include "kneeplan/planner_geometry.hpp"
#include "kneeplan/synth_phantom.hpp"
#include "kneeplan/trainer.hpp"
#include "metric_oracles.hpp"

using namespace kneeplan;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    notes.push_back(std::string(ok ? "ok " : "FAILED ") + what);
  }
};

std::string fmt(double v, int precision = 3) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

// 1. Loss gradients, beta = 0 reduction and overlap scaling.

double max_relative_fd_error(const std::function<torch::Tensor(const torch::Tensor&)>& f, const torch::Tensor& x0) {
  auto x = x0.clone().requires_grad_(true);
  f(x).backward();
  const auto analytic = x.grad().flatten();
  auto flat = x0.clone().flatten();
  constexpr double kStep = 1e-4;
  double worst = 0.0;
  for (int64_t k = 0; k < flat.numel(); ++k) {
    auto plus = flat.clone();
    auto minus = flat.clone();
    plus[k] += kStep;
    minus[k] -= kStep;
    const double numeric = (f(plus.view(x0.sizes())).item<double>() - f(minus.view(x0.sizes())).item<double>()) / (2 * kStep);
    const double a = analytic[k].item<double>();
    worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-12}));
  }
  return worst;
}

Outcome criterion_losses() {
  Outcome out;
  torch::manual_seed(1);
  const auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  const auto logits = torch::randn({2, 4, 8, 8}, opts);
  const auto labels = (torch::rand({2, 4, 8, 8}, opts) < 0.4).to(torch::kFloat64);
  const auto target_map = torch::rand({2, 4, 8, 8}, opts);

  const double seg_fd = max_relative_fd_error([&](const torch::Tensor& z) { return seg_loss(z, labels, 0.6); }, logits);
  const double hm_fd = max_relative_fd_error([&](const torch::Tensor& z) { return heatmap_loss(z, target_map); }, logits);
  out.check(seg_fd <= 1e-4, "segmentation loss gradient, max relative FD error " + fmt(seg_fd));
  out.check(hm_fd <= 1e-4, "heatmap loss gradient, max relative FD error " + fmt(hm_fd));

  const double bce = torch::binary_cross_entropy_with_logits(logits, labels, {}, {}, torch::Reduction::Sum).item<double>() /
                     (2.0 * 8 * 8);
  const double beta0 = seg_loss(logits, labels, 0.0).item<double>();
  out.check(std::abs(beta0 - bce) <= 1e-9, "beta = 0 equals multi-label BCE, |diff| " + fmt(std::abs(beta0 - bce)));

  // Same pixel evaluated with and without a second label: only the overlap
  // factor differs for the shared channel.
  const auto z = torch::randn({1, 4, 1, 1}, opts);
  auto single = torch::zeros({1, 4, 1, 1}, opts);
  single[0][0] = 1.0;
  auto doubled = single.clone();
  doubled[0][1] = 1.0;
  const double beta = 0.6;
  const double ratio_all = seg_loss(z, doubled, beta).item<double>() / seg_loss(z, doubled, 0.0).item<double>();
  const double ratio_plain = seg_loss(z, single, beta).item<double>() / seg_loss(z, single, 0.0).item<double>();
  out.check(std::abs(ratio_all - (1.0 + beta)) <= 1e-12 && std::abs(ratio_plain - 1.0) <= 1e-12,
            "overlap pixel scaled by " + fmt(ratio_all, 12) + ", single-label pixel by " + fmt(ratio_plain, 12));
  return out;
}

// 2. GradNorm.

Outcome criterion_gradnorm() {
  Outcome out;
  TaskWeightMatrix weights(4, 3);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.01, 3.0);
  double worst = 0.0;
  for (int step = 0; step < 500; ++step) {
    auto norms = torch::empty({4, 3}, torch::kFloat64);
    auto losses = torch::empty({4, 3}, torch::kFloat64);
    for (int l = 0; l < 4; ++l)
      for (int t = 0; t < 3; ++t) {
        norms[l][t] = u(rng);
        losses[l][t] = u(rng);
      }
    weights.step_from_norms(norms, losses);
    const auto sums = weights.weights().sum(1);
    worst = std::max(worst, (sums - 3.0).abs().max().item<double>());
  }
  out.check(worst <= 1e-6, "row sums equal 3 after 500 steps, max deviation " + fmt(worst));

  // Dyadic inputs keep every intermediate exact; arbitrary ones round.
  const GradNormTerms exact = gradnorm_terms({0.75, 0.75, 0.75}, {0.25, 0.25, 0.25}, 1.0);
  const GradNormTerms rounded = gradnorm_terms({0.7, 0.7, 0.7}, {0.4, 0.4, 0.4}, 1.0);
  out.check(exact.objective == 0.0 && rounded.objective <= 1e-12,
            "objective at the equal-gradient fixed point " + fmt(exact.objective) + " (exact inputs), " +
                fmt(rounded.objective) + " (rounded inputs)");

  const GradNormTerms example = gradnorm_terms({1.0, 3.0}, {0.5, 0.5}, 1.0);
  out.check(example.objective == 2.0 && example.targets[0] == 2.0 && example.targets[1] == 2.0,
            "G = (1, 3) gives target " + fmt(example.targets[0]) + " and objective " + fmt(example.objective));
  return out;
}

// 3. Architecture.

Outcome criterion_architecture() {
  Outcome out;
  NetworkConfig config;
  config.num_stacks = 4;
  auto net = build_network(config, 0);
  const auto input = torch::rand({2, 1, 256, 256});
  const NetworkOutput output = net->forward(input);
  out.check(output.size() == 4, std::to_string(output.size()) + " output sets");
  bool shapes = true;
  torch::Tensor total = torch::zeros({});
  for (const auto& s : output) {
    shapes = shapes && s.seg_logits.sizes() == torch::IntArrayRef({2, 4, 64, 64}) &&
             s.lm_maps.sizes() == torch::IntArrayRef({2, 2, 64, 64}) &&
             s.roi_map.sizes() == torch::IntArrayRef({2, 1, 64, 64});
    total = total + s.seg_logits.square().mean() + s.lm_maps.square().mean() + s.roi_map.square().mean();
  }
  out.check(shapes, "shapes (2,4,64,64) / (2,2,64,64) / (2,1,64,64) in every stack");
  total.backward();
  int missing = 0;
  std::size_t count = 0;
  for (const auto& p : net->parameters()) {
    ++count;
    if (!p.grad().defined() || p.grad().abs().sum().item<double>() == 0.0) ++missing;
  }
  out.check(missing == 0, std::to_string(count - missing) + "/" + std::to_string(count) + " parameters receive gradient");
  return out;
}

// 4. Geometry.

Point2 rotate_about(const Point2& p, const Point2& center, double deg) {
  const double a = deg * std::numbers::pi / 180.0;
  const Point2 d = p - center;
  return {center.x + std::cos(a) * d.x - std::sin(a) * d.y, center.y + std::sin(a) * d.x + std::cos(a) * d.y};
}

Sample translate_sample(const Sample& s, int dx, int dy) {
  Sample out = s;
  const cv::Mat shift = (cv::Mat_<double>(2, 3) << 1, 0, dx, 0, 1, dy);
  for (int b = 0; b < kNumBones; ++b) {
    Mask moved;
    cv::warpAffine(s.annotation.masks[b], moved, shift, s.annotation.masks[b].size(), cv::INTER_NEAREST);
    out.annotation.masks[b] = moved;
  }
  const Point2 d{static_cast<double>(dx), static_cast<double>(dy)};
  auto& a = out.annotation;
  a.p_blum = a.p_blum + d;
  a.p_tmc = a.p_tmc + d;
  a.p_prox = a.p_prox + d;
  a.p_dist = a.p_dist + d;
  return out;
}

Outcome criterion_geometry() {
  Outcome out;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> coord(-100.0, 100.0);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  double worst_equidistance = 0.0;
  double worst_half_gap = 0.0;
  int configs = 0;
  while (configs < 1000) {
    const double a = angle(rng);
    const Line2D lm1 = Line2D::with_direction({coord(rng), coord(rng)}, {std::cos(a), std::sin(a)});
    const Point2 p_blum{coord(rng), coord(rng)};
    const Point2 p_tmc{coord(rng), coord(rng)};
    const Point2 hint{coord(rng), coord(rng)};
    const double gap = std::abs(lm1.direction().dot(p_blum - p_tmc));
    if (gap < 1.0 || std::abs(lm1.signed_distance(hint)) < 1e-6) continue;
    const PlanningResult r = schoettle_point(lm1, p_blum, p_tmc, hint, 1.0);
    for (const Line2D* line : {&r.lm1, &r.lm2, &r.lm3})
      worst_equidistance = std::max(worst_equidistance, std::abs(std::abs(line->signed_distance(r.p_sp)) - r.radius_px));
    worst_half_gap = std::max(worst_half_gap, std::abs(r.radius_px - gap / 2.0));
    ++configs;
  }
  out.check(worst_equidistance <= 1e-9 && worst_half_gap <= 1e-9,
            "1000 random configurations: equidistance error " + fmt(worst_equidistance) + ", half-gap error " +
                fmt(worst_half_gap));

  // Rigid motions of rasterized phantoms: a random change of the shaft angle and
  // an integer translation of the rasters.
  const Point2 center{127.5, 127.5};
  double worst_motion = 0.0;
  int motion_fail = 0;
  const int motions = 50;
  for (uint64_t seed = 0; seed < motions; ++seed) {
    std::mt19937_64 draw(seed + 1000);
    std::uniform_real_distribution<double> delta(-5.0, 5.0);
    std::uniform_int_distribution<int> shift(-8, 8);
    PhantomSpec spec = random_phantom_spec(seed);
    const ImagePrediction base = ground_truth_prediction(generate_phantom(spec));
    const double d = delta(draw);
    const int dx = shift(draw);
    const int dy = shift(draw);
    spec.femur_shaft_angle_deg += d;
    const ImagePrediction moved = ground_truth_prediction(translate_sample(generate_phantom(spec), dx, dy));
    if (!base.plan || !moved.plan) {
      ++motion_fail;
      continue;
    }
    const Point2 expected = rotate_about(base.plan->p_sp, center, d) + Point2{static_cast<double>(dx), static_cast<double>(dy)};
    const double e = distance(moved.plan->p_sp, expected);
    worst_motion = std::max(worst_motion, e);
    if (e > 0.5) ++motion_fail;
  }
  out.check(motion_fail == 0, std::to_string(motions - motion_fail) + "/" + std::to_string(motions) +
                                  " rigid motions within 0.5 px, worst " + fmt(worst_motion) + " px");

  double worst_gt = 0.0;
  int gt_fail = 0;
  const int phantoms = 200;
  for (uint64_t seed = 0; seed < phantoms; ++seed) {
    const PhantomSpec spec = random_phantom_spec(seed);
    const ImagePrediction pred = ground_truth_prediction(generate_phantom(spec));
    if (!pred.plan) {
      ++gt_fail;
      continue;
    }
    const double e = distance(pred.plan->p_sp, analytic_schoettle(spec).point);
    worst_gt = std::max(worst_gt, e);
    if (e > 0.5) ++gt_fail;
  }
  out.check(gt_fail == 0, std::to_string(phantoms - gt_fail) + "/" + std::to_string(phantoms) +
                              " ground-truth phantoms within 0.5 px of the analytic point, worst " + fmt(worst_gt) + " px");
  return out;
}

// 5. Metrics.

Outcome criterion_metrics() {
  Outcome out;
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> density(0.05, 0.7);
  int checked = 0;
  int mismatches = 0;
  int ordering = 0;
  while (checked < 100) {
    const Mask a = testing::random_mask(rng, 32, density(rng));
    const Mask b = testing::random_mask(rng, 32, density(rng));
    if (cv::countNonZero(a) == 0 || cv::countNonZero(b) == 0) continue;
    const testing::BruteSurface ref = testing::brute_surface(a, b);
    const double asd = average_surface_distance(a, b);
    const double hd = hausdorff(a, b);
    if (iou(a, b) != testing::brute_iou(a, b) || asd != ref.asd || hd != ref.hausdorff) ++mismatches;
    if (hd < asd) ++ordering;
    ++checked;
  }
  out.check(mismatches == 0, "IOU/ASD/Hausdorff equal brute force on " + std::to_string(checked - mismatches) + "/100 mask pairs");
  out.check(ordering == 0, "Hausdorff >= ASD on all pairs");
  const double ed = landmark_ed({0.0, 0.0}, {3.0, 4.0}, 1.0);
  out.check(ed == 5.0, "3-4-5 example gives " + fmt(ed) + " mm");
  return out;
}

// 6. Heatmap codec.

Outcome criterion_codec() {
  Outcome out;
  constexpr int kScale = 4;
  const cv::Size shape(64, 64);
  double worst = 0.0;
  double worst_peak = 0.0;
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 64; ++j) {
      const Point2 p = heatmap_to_input({static_cast<double>(j), static_cast<double>(i)}, kScale);
      const Heatmap h = encode_landmark(p, shape, kScale);
      worst_peak = std::max(worst_peak, std::abs(h(i, j) - 1.0));
      worst = std::max(worst, distance(decode_landmark(h, kScale).point, p));
    }
  out.check(worst == 0.0, "round trip over all 4096 grid nodes, worst error " + fmt(worst) + " px");
  out.check(worst_peak <= 1e-6, "peak value 1, worst deviation " + fmt(worst_peak));

  const double sigma_hm = kLandmarkSigmaPx / kScale;
  const Point2 center_hm{20.0, 30.0 - sigma_hm};
  const Heatmap h = encode_landmark(heatmap_to_input(center_hm, kScale), shape, kScale);
  const double at_sigma = h(30, 20);
  out.check(std::abs(at_sigma - std::exp(-0.5)) <= 1e-6, "value one sigma from the center " + fmt(at_sigma, 7));
  return out;
}

// 7. Scaled end-to-end run.

Outcome criterion_end_to_end(int epochs, uint64_t corpus_seed) {
  Outcome out;
  std::vector<Sample> train;
  std::vector<PhantomSpec> specs;
  for (int i = 0; i < 8; ++i) {
    specs.push_back(corpus_phantom_spec(corpus_seed, i));
    Sample s = generate_phantom(specs.back());
    s.image.source_id = "phantom_" + std::to_string(i);
    train.push_back(std::move(s));
  }
  TrainConfig config;
  config.epochs = epochs;
  config.augment = false;
  Trainer trainer(config);
  const auto start = std::chrono::steady_clock::now();
  trainer.on_step([&](const StepRecord& r) {
    if (r.step % 20 == 0) std::cerr << "  e2e epoch " << r.epoch << " step " << r.step << " total loss " << r.total << "\n";
  });
  TrainResult result = trainer.train(train);
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 60.0;

  result.network->eval();
  double ed_blum = 0.0, ed_tmc = 0.0, femur = 0.0;
  int within = 0;
  std::ostringstream sp;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const ImagePrediction pred = predict_image(result.network, train[i].image);
    ed_blum += distance(pred.p_blum, train[i].annotation.p_blum) / 8.0;
    ed_tmc += distance(pred.p_tmc, train[i].annotation.p_tmc) / 8.0;
    femur += iou(pred.masks[static_cast<int>(Bone::kFemur)], train[i].annotation.mask(Bone::kFemur)) / 8.0;
    if (pred.plan) {
      const double e = distance(pred.plan->p_sp, analytic_schoettle(specs[i]).point);
      sp << (i ? " " : "") << fmt(e, 2);
      if (e <= 3.0) ++within;
    } else {
      sp << (i ? " " : "") << "none";
    }
  }
  out.notes.push_back("trained " + std::to_string(epochs) + " epochs in " + fmt(minutes) + " min");
  out.check(ed_blum <= 2.0 && ed_tmc <= 2.0, "mean landmark ED p_blum " + fmt(ed_blum) + " px, p_tmc " + fmt(ed_tmc) + " px");
  out.check(femur >= 0.95, "mean femur IOU " + fmt(femur));
  out.check(within >= 7, std::to_string(within) + "/8 Schoettle points within 3 px (errors " + sp.str() + ")");
  return out;
}

// 8. Protocol.

Outcome criterion_protocol(const std::string& config_path) {
  Outcome out;
  const TrainConfig c;
  const bool defaults = c.epochs == 250 && c.batch_size == 2 && c.lr_net == 0.00025 && c.lr_weights == 0.025 &&
                        c.lr_halving_period == 60 && c.gradnorm_alpha == 1.0 && c.seg_beta == 0.6 &&
                        c.network.input_size == 256 && c.augment && c.augmentation.p_flip == 0.5 &&
                        c.augmentation.p_rotate == 0.5 && c.augmentation.p_scale == 0.5 && c.augmentation.p_contrast == 0.5;
  out.check(defaults, "default configuration matches the published protocol");
  bool shipped = false;
  try {
    shipped = format_train_config(load_train_config(config_path)) == format_train_config(c);
  } catch (const std::exception& e) {
    out.notes.push_back(e.what());
  }
  out.check(shipped, "shipped " + config_path + " equals the defaults");
  const double l0 = learning_rate_at(c, 0), l60 = learning_rate_at(c, 60), l120 = learning_rate_at(c, 120);
  out.check(l0 == 0.00025 && l60 == 0.000125 && l120 == 0.0000625,
            "learning rate at epochs 0/60/120: " + fmt(l0, 6) + " / " + fmt(l60, 6) + " / " + fmt(l120, 6));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> selected;
  int epochs = 50;
  uint64_t corpus_seed = 7;
  std::string config_path = KNEEPLAN_SOURCE_DIR "/configs/default.cfg";
  app.add_option("--criteria", selected, "Criteria to run (default: all)")->delimiter(',')->check(CLI::Range(1, 8));
  app.add_option("--epochs", epochs, "Epochs for the end-to-end run (at most 50)")->check(CLI::Range(1, 50));
  app.add_option("--corpus-seed", corpus_seed, "Seed of the 8-phantom training corpus");
  app.add_option("--config", config_path, "Shipped training configuration");
  CLI11_PARSE(app, argc, argv);

  torch::set_num_threads(std::max(1, static_cast<int>(std::thread::hardware_concurrency())));
  const std::map<int, std::pair<std::string, std::function<Outcome()>>> criteria = {
      {1, {"loss correctness", criterion_losses}},
      {2, {"GradNorm invariants", criterion_gradnorm}},
      {3, {"architecture contract", criterion_architecture}},
      {4, {"geometry oracle", criterion_geometry}},
      {5, {"metric oracles", criterion_metrics}},
      {6, {"heatmap codec", criterion_codec}},
      {7, {"scaled end-to-end experiment", [&] { return criterion_end_to_end(epochs, corpus_seed); }}},
      {8, {"protocol fidelity", [&] { return criterion_protocol(config_path); }}},
  };
  const std::set<int> run = selected.empty() ? std::set<int>{1, 2, 3, 4, 5, 6, 7, 8}
                                             : std::set<int>(selected.begin(), selected.end());
  bool all = true;
  for (const int id : run) {
    const auto& [title, fn] = criteria.at(id);
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    all = all && o.pass;
    std::cout << "CRITERION " << id << " " << (o.pass ? "PASS" : "FAIL") << ": " << title << "\n";
    for (const auto& note : o.notes) std::cout << "    " << note << "\n";
    std::cout.flush();
  }
  return all ? 0 : 1;
}

// kneeplan: synthetic data, training, planning and evaluation from one binary.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "kneeplan/dataset_io.hpp"
#include "kneeplan/inference.hpp"
#include "kneeplan/metrics_eval.hpp"
#include "kneeplan/model_shgn.hpp"
#include "kneeplan/planner_geometry.hpp"
#include "kneeplan/synth_phantom.hpp"
#include "kneeplan/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace kneeplan;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

// ---------------------------------------------------------------- synth

struct SynthOptions {
  int count = 10;
  fs::path out;
  uint64_t seed = 0;
  int size = 256;
  double train_fraction = 0.8;
  int val_count = 0;
};

int cmd_synth(const SynthOptions& o) {
  if (o.count < 1) throw UsageError("synth: --count must be at least 1");
  if (o.train_fraction < 0.0 || o.train_fraction > 1.0) throw UsageError("synth: --train-fraction must be in [0,1]");
  fs::create_directories(o.out);

  std::vector<std::string> ids;
  for (int i = 0; i < o.count; ++i) {
    std::ostringstream id;
    id << "phantom_" << std::setw(4) << std::setfill('0') << i;
    const PhantomSpec spec = corpus_phantom_spec(o.seed, i, o.size);
    Sample s = generate_phantom(spec);
    s.image.source_id = id.str();
    save_sample(s, o.out / id.str());
    ids.push_back(id.str());
  }

  std::vector<std::string> order = ids;
  std::mt19937_64 rng(o.seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n = order.size();
  const auto n_train = std::min<std::size_t>(n, static_cast<std::size_t>(std::llround(o.train_fraction * static_cast<double>(n))));
  const auto n_val = std::min<std::size_t>(n - n_train, static_cast<std::size_t>(std::max(0, o.val_count)));
  SplitMap split;
  split["train"].assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  split["val"].assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                      order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  split["test"].assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  for (auto& [_, list] : split) std::sort(list.begin(), list.end());
  write_split_file(o.out, split);
  std::cout << "wrote " << n << " phantoms to " << o.out << " (train " << split["train"].size() << ", val "
            << split["val"].size() << ", test " << split["test"].size() << ")\n";
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainOptions {
  fs::path dataset;
  fs::path config;
  fs::path out = "runs/train";
  std::optional<int> epochs;
  std::optional<uint64_t> seed;
  bool no_augment = false;
  int log_every = 10;
};

int cmd_train(const TrainOptions& o) {
  if (!fs::exists(o.dataset / kSplitFile)) throw UsageError("train: no dataset at " + o.dataset.string());
  TrainConfig config = o.config.empty() ? TrainConfig{} : load_train_config(o.config);
  if (o.epochs) config.epochs = *o.epochs;
  if (o.seed) config.seed = *o.seed;
  if (o.no_augment) config.augment = false;
  config.validate();

  const auto samples = load_dataset(o.dataset);
  const auto train = select_split(samples, SplitTag::kTrain);
  const auto val = select_split(samples, SplitTag::kVal);
  if (train.empty()) throw UsageError("train: the train split is empty");

  Trainer trainer(config, o.out);
  trainer.on_step([&](const StepRecord& r) {
    if (o.log_every > 0 && r.step % o.log_every == 0)
      std::cout << "epoch " << r.epoch << " step " << r.step << " total " << r.total << std::endl;
  });
  const TrainResult result = trainer.train(train, val);
  for (const auto& v : result.validation)
    std::cout << "validation epoch " << v.epoch << " mean landmark ED " << v.mean_landmark_ed << " femur IOU "
              << v.femur_iou << "\n";
  std::cout << "checkpoints in " << o.out << "\n";
  return 0;
}

// ---------------------------------------------------------------- plan

cv::Point to_cv(const Point2& p) { return {static_cast<int>(std::lround(p.x)), static_cast<int>(std::lround(p.y))}; }

void draw_line(cv::Mat3b& canvas, const Line2D& line, const cv::Scalar& color) {
  const double reach = std::hypot(canvas.cols, canvas.rows);
  const Point2 center{canvas.cols / 2.0, canvas.rows / 2.0};
  const Point2 foot = center - line.normal * line.signed_distance(center);
  const Point2 d = line.direction();
  cv::line(canvas, to_cv(foot - d * reach), to_cv(foot + d * reach), color, 1, cv::LINE_AA);
}

cv::Mat3b render_overlay(const GrayImage& image, const ImagePrediction& pred) {
  cv::Mat1b gray;
  image.pixels.convertTo(gray, CV_8U, 255.0);
  cv::Mat3b canvas;
  cv::cvtColor(gray, canvas, cv::COLOR_GRAY2BGR);
  const cv::Scalar bone_colors[kNumBones] = {{0, 200, 0}, {200, 120, 0}, {0, 140, 255}, {200, 0, 200}};
  for (int b = 0; b < kNumBones; ++b) {
    std::vector<std::vector<cv::Point>> contours;
    cv::findContours(pred.masks[b].clone(), contours, cv::RETR_EXTERNAL, cv::CHAIN_APPROX_NONE);
    cv::drawContours(canvas, contours, -1, bone_colors[b], 1, cv::LINE_AA);
  }
  if (pred.plan) {
    const auto& p = *pred.plan;
    draw_line(canvas, p.lm1, {255, 255, 0});
    draw_line(canvas, p.lm2, {0, 255, 255});
    draw_line(canvas, p.lm3, {0, 255, 255});
    cv::circle(canvas, to_cv(p.p_sp), static_cast<int>(std::lround(p.radius_px)), {255, 0, 255}, 1, cv::LINE_AA);
    cv::drawMarker(canvas, to_cv(p.p_sp), {0, 0, 255}, cv::MARKER_CROSS, 7);
  }
  cv::drawMarker(canvas, to_cv(pred.p_blum), {0, 255, 0}, cv::MARKER_TILTED_CROSS, 7);
  cv::drawMarker(canvas, to_cv(pred.p_tmc), {0, 255, 0}, cv::MARKER_TILTED_CROSS, 7);
  return canvas;
}

struct PlanOptions {
  fs::path checkpoint;
  fs::path image;
  fs::path annotation;
  fs::path out = "runs/plan";
};

int cmd_plan(const PlanOptions& o) {
  if (!fs::exists(o.checkpoint)) throw UsageError("plan: checkpoint not found: " + o.checkpoint.string());
  if (!fs::exists(o.image)) throw UsageError("plan: image not found: " + o.image.string());
  StackedHourglass net = load_checkpoint(o.checkpoint.string());

  GrayImage image;
  std::optional<Point2> reference;
  if (fs::is_directory(o.image)) {
    const Sample s = load_sample(o.image);
    image = s.image;
    reference = reference_plan(s).p_sp;
  } else {
    image = load_image(o.image);
  }
  if (!o.annotation.empty()) {
    const Sample s = load_sample(o.annotation);
    if (s.image.pixels.size() != image.pixels.size()) throw UsageError("plan: annotation does not match the image size");
    if (!image.mm_per_px) image.mm_per_px = s.image.mm_per_px;
    reference = reference_plan(s).p_sp;
  }

  const ImagePrediction pred = predict_image(net, image, reference);
  fs::create_directories(o.out);
  cv::imwrite((o.out / "overlay.png").string(), render_overlay(image, pred));
  if (!pred.plan) {
    std::cerr << "planning failed: " << pred.planning_error.value_or("unknown") << "\n";
    return 3;
  }
  write_text(o.out / "plan.json", plan_to_json(*pred.plan));
  std::cout << "schoettle point (" << pred.plan->p_sp.x << ", " << pred.plan->p_sp.y << ") radius "
            << pred.plan->radius_px << " px\n";
  return 0;
}

// ---------------------------------------------------------------- evaluate

// Rater file: {"name": "...", "points": {"<image id>": [x, y], ...}}
RaterPlans read_rater_file(const fs::path& path, const std::vector<std::string>& ids) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
  RaterPlans r;
  r.name = j.value("name", path.stem().string());
  const json& points = j.at("points");
  for (const auto& id : ids) {
    if (!points.contains(id)) throw UsageError(path.string() + ": no point for image " + id);
    r.image_ids.push_back(id);
    r.points.push_back({points.at(id)[0].get<double>(), points.at(id)[1].get<double>()});
  }
  return r;
}

struct EvaluateOptions {
  fs::path checkpoint;
  fs::path dataset;
  std::vector<fs::path> raters;
  fs::path suitable;
  fs::path out = "runs/evaluate";
  bool gt_as_prediction = false;
  int resamples = kDefaultBootstrapResamples;
  uint64_t seed = 0;
};

int cmd_evaluate(const EvaluateOptions& o) {
  if (!fs::exists(o.dataset / kSplitFile)) throw UsageError("evaluate: no dataset at " + o.dataset.string());
  if (!o.gt_as_prediction && !fs::exists(o.checkpoint))
    throw UsageError("evaluate: checkpoint not found (or pass --gt-as-prediction)");
  const auto test = select_split(load_dataset(o.dataset), SplitTag::kTest);
  if (test.empty()) throw UsageError("evaluate: the test split is empty");

  StackedHourglass net{nullptr};
  if (!o.gt_as_prediction) net = load_checkpoint(o.checkpoint.string());

  std::vector<ImageMetrics> metrics;
  std::vector<std::string> planned_ids;
  std::vector<Point2> planned_points;
  for (const auto& s : test) {
    const ImagePrediction pred = o.gt_as_prediction ? ground_truth_prediction(s) : predict_image(net, s.image);
    metrics.push_back(evaluate_prediction(pred, s));
    if (pred.plan) {
      planned_ids.push_back(s.image.source_id);
      planned_points.push_back(pred.plan->p_sp);
    }
  }
  MetricReport report = summarize(metrics, o.resamples, o.seed);

  if (!o.raters.empty()) {
    if (o.raters.size() < 2) throw UsageError("evaluate: at least two rater files are required");
    // Only images with an automatic plan enter the table so all rows share one image set.
    std::vector<RaterPlans> experts;
    for (const auto& path : o.raters) experts.push_back(read_rater_file(path, planned_ids));
    std::vector<double> spacing;
    for (const auto& id : planned_ids) {
      const auto it = std::find_if(test.begin(), test.end(), [&](const Sample& s) { return s.image.source_id == id; });
      spacing.push_back(it->image.mm_per_px.value_or(1.0));
    }
    std::optional<std::set<std::string>> suitable;
    if (!o.suitable.empty()) {
      const json j = json::parse(read_text(o.suitable));
      suitable = j.get<std::set<std::string>>();
    }
    report.rater_table = pairwise_rater_table(experts, RaterPlans{"Automatic", planned_ids, planned_points}, spacing,
                                              suitable, o.resamples, o.seed);
  }

  fs::create_directories(o.out);
  write_text(o.out / "metrics.json", report_to_json(report));
  write_text(o.out / "metrics.txt", report_to_text(report));
  std::cout << report_to_text(report);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knee radiograph segmentation, landmark localization and Schoettle Point planning"};
  app.require_subcommand(1);

  SynthOptions synth;
  auto* c_synth = app.add_subcommand("synth", "Generate synthetic phantom samples and a split file");
  c_synth->add_option("--count,-n", synth.count, "Number of phantoms")->capture_default_str();
  c_synth->add_option("--out", synth.out, "Output dataset directory")->required();
  c_synth->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();
  c_synth->add_option("--size", synth.size, "Square image size in pixels")->capture_default_str();
  c_synth->add_option("--train-fraction", synth.train_fraction, "Fraction of samples in the train split")
      ->capture_default_str();
  c_synth->add_option("--val-count", synth.val_count, "Samples moved from test to val")->capture_default_str();

  TrainOptions train;
  auto* c_train = app.add_subcommand("train", "Train the network");
  c_train->add_option("--dataset", train.dataset, "Dataset directory with split.json")->required();
  c_train->add_option("--config", train.config, "Training config (defaults reproduce the published protocol)");
  c_train->add_option("--out", train.out, "Output directory for checkpoints and logs")->capture_default_str();
  c_train->add_option("--epochs", train.epochs, "Override the number of epochs");
  c_train->add_option("--seed", train.seed, "Override the training seed");
  c_train->add_flag("--no-augment", train.no_augment, "Disable data augmentation");
  c_train->add_option("--log-every", train.log_every, "Print every N steps (0 = silent)")->capture_default_str();

  PlanOptions plan_opts;
  auto* c_plan = app.add_subcommand("plan", "Predict and plan the Schoettle Point on one image");
  c_plan->add_option("--checkpoint", plan_opts.checkpoint, "Network checkpoint")->required();
  c_plan->add_option("--image", plan_opts.image, "PNG image or sample directory")->required();
  c_plan->add_option("--annotation", plan_opts.annotation, "Sample directory providing the reference plan");
  c_plan->add_option("--out", plan_opts.out, "Output directory for plan.json and overlay.png")->capture_default_str();

  EvaluateOptions eval;
  auto* c_eval = app.add_subcommand("evaluate", "Evaluate on the test split");
  c_eval->add_option("--checkpoint", eval.checkpoint, "Network checkpoint");
  c_eval->add_flag("--gt-as-prediction", eval.gt_as_prediction, "Use ground truth in place of network output");
  c_eval->add_option("--dataset", eval.dataset, "Dataset directory with split.json")->required();
  c_eval->add_option("--raters", eval.raters, "Expert rater point files (JSON)");
  c_eval->add_option("--suitable", eval.suitable, "JSON array of image ids forming the suitable subset");
  c_eval->add_option("--out", eval.out, "Output directory for metrics.json and metrics.txt")->capture_default_str();
  c_eval->add_option("--resamples", eval.resamples, "Bootstrap resamples")->capture_default_str();
  c_eval->add_option("--seed", eval.seed, "Bootstrap seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (c_synth->parsed()) return cmd_synth(synth);
    if (c_train->parsed()) return cmd_train(train);
    if (c_plan->parsed()) return cmd_plan(plan_opts);
    if (c_eval->parsed()) return cmd_evaluate(eval);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const PlanningError& e) {
    std::cerr << "planning error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

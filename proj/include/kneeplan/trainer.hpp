#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "kneeplan/augment.hpp"
#include "kneeplan/losses_weighting.hpp"
#include "kneeplan/metrics_eval.hpp"
#include "kneeplan/model_shgn.hpp"
#include "kneeplan/types.hpp"

namespace kneeplan {

/// Training protocol. Defaults reproduce the published schedule.
struct TrainConfig {
  int epochs = 250;
  int batch_size = 2;
  double lr_net = 0.00025;
  double lr_weights = 0.025;
  int lr_halving_period = 60;  // epochs
  double gradnorm_alpha = 1.0;
  double seg_beta = 0.6;
  double rms_alpha = 0.99;
  double rms_eps = 1e-8;
  uint64_t seed = 0;
  int checkpoint_interval = 10;  // epochs; 0 disables periodic checkpoints
  int validation_interval = 10;  // epochs; 0 disables validation
  bool augment = true;
  AugmentConfig augmentation;
  NetworkConfig network;

  /// Throws std::invalid_argument on a non-positive required value.
  void validate() const;
};

/// Parses `key = value` lines; `#` starts a comment. Unknown keys are errors.
TrainConfig parse_train_config(const std::string& text);
TrainConfig load_train_config(const std::filesystem::path& path);
std::string format_train_config(const TrainConfig& config);

/// Network learning rate in effect during `epoch` (0-based).
double learning_rate_at(const TrainConfig& config, int epoch);

/// Targets for one normalized sample.
struct SampleTensors {
  torch::Tensor image;  // 1 x S x S
  torch::Tensor seg;    // 4 x S/4 x S/4, binary
  torch::Tensor lm;     // 2 x S/4 x S/4
  torch::Tensor roi;    // 1 x S/4 x S/4
};

/// Builds tensors from a sample already at network input resolution.
/// Segmentation targets are 4x4 block averages thresholded at 0.5.
SampleTensors make_sample_tensors(const Sample& normalized, int scale = 4);

struct Batch {
  torch::Tensor image, seg, lm, roi;
};
Batch collate(const std::vector<SampleTensors>& items);

/// L x T task losses for a network output against one batch.
std::vector<std::vector<torch::Tensor>> compute_task_losses(const NetworkOutput& output, const Batch& batch,
                                                            double seg_beta);

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StepRecord {
  int64_t step = 0;
  int epoch = 0;
  double lr = 0.0;
  std::vector<std::vector<double>> losses;   // L x T
  std::vector<std::vector<double>> weights;  // L x T, after the GradNorm update
  double total = 0.0;
};

struct ValidationRecord {
  int epoch = 0;
  double mean_landmark_ed = 0.0;
  double femur_iou = 0.0;
  std::optional<double> schoettle_median;
};

struct TrainResult {
  StackedHourglass network{nullptr};
  std::vector<StepRecord> history;
  std::vector<ValidationRecord> validation;
  std::optional<std::filesystem::path> best_checkpoint;
};

/// Deeply supervised training with GradNorm task weighting.
///
/// Each step: forward, L x T losses, GradNorm update of the task weights
/// (using the current losses), weighted total with the updated weights
/// (treated as constants), backward, RMSProp step at the scheduled rate.
class Trainer {
 public:
  Trainer(TrainConfig config, std::optional<std::filesystem::path> out_dir = std::nullopt);

  /// Called after every step; useful for progress output.
  void on_step(std::function<void(const StepRecord&)> callback) { step_callback_ = std::move(callback); }

  /// Trains on `train` (non-empty). Validation runs on `val` every
  /// validation_interval epochs when `val` is non-empty; the best checkpoint
  /// is the one with the lowest mean landmark ED.
  TrainResult train(const std::vector<Sample>& train, const std::vector<Sample>& val = {});

  const TrainConfig& config() const { return config_; }

 private:
  TrainConfig config_;
  std::optional<std::filesystem::path> out_dir_;
  std::function<void(const StepRecord&)> step_callback_;
};

}  // namespace kneeplan

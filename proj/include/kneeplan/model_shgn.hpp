#pragma once

#include <string>
#include <vector>

#include <torch/torch.h>

namespace kneeplan {

/// Structural parameters of the multi-task stacked hourglass network.
struct NetworkConfig {
  int num_stacks = 4;       // L
  int hourglass_depth = 4;  // pooling levels per hourglass
  int in_channels = 1;      // C_in
  int stem_channels = 64;   // C1
  int mid_channels = 128;   // C2
  int feature_channels = 256;  // C*
  int seg_channels = 4;
  int lm_channels = 2;
  int roi_channels = 1;
  int input_size = 256;

  static constexpr int kNumTasks = 3;

  /// Spatial size of every prediction map.
  int output_size() const { return input_size / 4; }

  /// Throws std::invalid_argument describing the first violated invariant.
  void validate() const;

  std::string to_json() const;
  static NetworkConfig from_json(const std::string& text);
  bool operator==(const NetworkConfig&) const = default;
};

enum class Task { kSeg = 0, kLandmark = 1, kRoi = 2 };
inline constexpr int kNumTasks = NetworkConfig::kNumTasks;
inline constexpr const char* kTaskNames[kNumTasks] = {"seg", "lm", "roi"};

/// Predictions of one hourglass. Segmentation maps are logits; landmark and
/// ROI maps are linear activations.
struct StackOutput {
  torch::Tensor seg_logits;  // B x 4 x H/4 x W/4
  torch::Tensor lm_maps;     // B x 2 x H/4 x W/4
  torch::Tensor roi_map;     // B x 1 x H/4 x W/4

  const torch::Tensor& task(Task t) const;
};

using NetworkOutput = std::vector<StackOutput>;

/// Pre-activation bottleneck residual unit with instance normalization:
/// IN-ReLU-conv1x1 -> IN-ReLU-conv3x3 -> IN-ReLU-conv1x1, plus a 1x1
/// projection on the skip path when channel counts differ.
class BottleneckImpl : public torch::nn::Module {
 public:
  BottleneckImpl(int in_channels, int out_channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::InstanceNorm2d norm1_{nullptr}, norm2_{nullptr}, norm3_{nullptr};
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, conv3_{nullptr};
  torch::nn::Conv2d skip_{nullptr};
};
TORCH_MODULE(Bottleneck);

/// Recursive encoder-decoder. Each level keeps a full-resolution skip branch
/// and processes a max-pooled copy, then adds the nearest-upsampled result.
class HourglassImpl : public torch::nn::Module {
 public:
  HourglassImpl(int depth, int channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  int depth_;
  Bottleneck up1_{nullptr}, low1_{nullptr}, low3_{nullptr};
  Bottleneck low2_leaf_{nullptr};
  std::shared_ptr<HourglassImpl> low2_inner_;
};
TORCH_MODULE(Hourglass);

class StackedHourglassImpl : public torch::nn::Module {
 public:
  explicit StackedHourglassImpl(NetworkConfig config);

  /// `batch` must be B x C_in x input_size x input_size.
  NetworkOutput forward(const torch::Tensor& batch);

  const NetworkConfig& config() const { return config_; }

  /// Parameters of the last shared layer of hourglass `stack` (1x1 conv +
  /// IN + ReLU after the shared bottleneck), right before the task heads.
  std::vector<torch::Tensor> shared_parameters(int stack) const;

  /// Parameters owned by hourglass `stack` (hourglass, shared bottleneck,
  /// feature layer, heads and its reinjection convolutions).
  std::vector<torch::Tensor> stack_parameters(int stack) const;

  /// 1x1 output convolution of `task` in hourglass `stack`.
  torch::nn::Conv2dImpl* head(int stack, Task task) const;

 private:
  NetworkConfig config_;
  torch::nn::Conv2d stem_conv_{nullptr};
  Bottleneck stem_res1_{nullptr}, stem_res2_{nullptr}, stem_res3_{nullptr};
  torch::nn::ModuleList hourglasses_, shared_, features_, heads_, remaps_;
};
TORCH_MODULE(StackedHourglass);

/// Builds a network seeded by `seed`: library default initialization, zero
/// remap biases, and landmark/ROI heads scaled down so that their first
/// predictions are close to empty maps. Throws std::invalid_argument on an
/// invalid config.
StackedHourglass build_network(const NetworkConfig& config, uint64_t seed = 0);

/// Checkpoint I/O. The archive stores every parameter and buffer under its
/// hierarchical name plus the config as JSON. Loading rebuilds the network
/// from the stored config and rejects missing or mis-shaped parameters.
void save_checkpoint(const StackedHourglass& net, const std::string& path);
StackedHourglass load_checkpoint(const std::string& path);
NetworkConfig read_checkpoint_config(const std::string& path);

}  // namespace kneeplan

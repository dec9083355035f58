#include "kneeplan/model_shgn.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace kneeplan {

namespace nn = torch::nn;

void NetworkConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("NetworkConfig: " + what); };
  if (num_stacks < 1) fail("num_stacks must be >= 1");
  if (hourglass_depth < 1) fail("hourglass_depth must be >= 1");
  if (in_channels < 1 || stem_channels < 1 || mid_channels < 1 || feature_channels < 1 ||
      seg_channels < 1 || lm_channels < 1 || roi_channels < 1)
    fail("channel counts must be positive");
  if (feature_channels % 2 != 0 || mid_channels % 2 != 0 || stem_channels % 2 != 0)
    fail("bottleneck channel counts must be even");
  const int divisor = 1 << (2 + hourglass_depth);
  if (input_size < divisor || input_size % divisor != 0)
    fail("input_size must be divisible by 2^(2+hourglass_depth)");
}

std::string NetworkConfig::to_json() const {
  nlohmann::json j = {{"num_stacks", num_stacks},         {"hourglass_depth", hourglass_depth},
                      {"in_channels", in_channels},       {"stem_channels", stem_channels},
                      {"mid_channels", mid_channels},     {"feature_channels", feature_channels},
                      {"seg_channels", seg_channels},     {"lm_channels", lm_channels},
                      {"roi_channels", roi_channels},     {"input_size", input_size}};
  return j.dump();
}

NetworkConfig NetworkConfig::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  NetworkConfig c;
  c.num_stacks = j.at("num_stacks");
  c.hourglass_depth = j.at("hourglass_depth");
  c.in_channels = j.at("in_channels");
  c.stem_channels = j.at("stem_channels");
  c.mid_channels = j.at("mid_channels");
  c.feature_channels = j.at("feature_channels");
  c.seg_channels = j.at("seg_channels");
  c.lm_channels = j.at("lm_channels");
  c.roi_channels = j.at("roi_channels");
  c.input_size = j.at("input_size");
  return c;
}

const torch::Tensor& StackOutput::task(Task t) const {
  switch (t) {
    case Task::kSeg: return seg_logits;
    case Task::kLandmark: return lm_maps;
    case Task::kRoi: return roi_map;
  }
  throw std::logic_error("unknown task");
}

namespace {

constexpr double kHeatmapHeadGain = 0.1;

nn::InstanceNorm2d instance_norm(int channels) {
  return nn::InstanceNorm2d(nn::InstanceNorm2dOptions(channels).affine(true).eps(1e-5));
}

nn::Conv2d conv(int in, int out, int kernel, int stride = 1) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, kernel).stride(stride).padding(kernel / 2));
}

// Normalized features feeding the heads and the reinjection path.
nn::Sequential feature_layer(int channels) {
  return nn::Sequential(conv(channels, channels, 1), instance_norm(channels), nn::ReLU());
}

}  // namespace

BottleneckImpl::BottleneckImpl(int in_channels, int out_channels) {
  const int half = out_channels / 2;
  norm1_ = register_module("norm1", instance_norm(in_channels));
  conv1_ = register_module("conv1", conv(in_channels, half, 1));
  norm2_ = register_module("norm2", instance_norm(half));
  conv2_ = register_module("conv2", conv(half, half, 3));
  norm3_ = register_module("norm3", instance_norm(half));
  conv3_ = register_module("conv3", conv(half, out_channels, 1));
  if (in_channels != out_channels) skip_ = register_module("skip", conv(in_channels, out_channels, 1));
}

torch::Tensor BottleneckImpl::forward(const torch::Tensor& x) {
  auto y = conv1_(torch::relu(norm1_(x)));
  y = conv2_(torch::relu(norm2_(y)));
  y = conv3_(torch::relu(norm3_(y)));
  return y + (skip_ ? skip_(x) : x);
}

HourglassImpl::HourglassImpl(int depth, int channels) : depth_(depth) {
  up1_ = register_module("up1", Bottleneck(channels, channels));
  low1_ = register_module("low1", Bottleneck(channels, channels));
  if (depth > 1) {
    low2_inner_ = register_module("low2", std::make_shared<HourglassImpl>(depth - 1, channels));
  } else {
    low2_leaf_ = register_module("low2", Bottleneck(channels, channels));
  }
  low3_ = register_module("low3", Bottleneck(channels, channels));
}

torch::Tensor HourglassImpl::forward(const torch::Tensor& x) {
  auto up = up1_(x);
  auto low = low1_(torch::max_pool2d(x, 2, 2));
  low = low2_inner_ ? low2_inner_->forward(low) : low2_leaf_(low);
  low = low3_(low);
  low = torch::upsample_nearest2d(low, {up.size(2), up.size(3)});
  return up + low;
}

StackedHourglassImpl::StackedHourglassImpl(NetworkConfig config) : config_(config) {
  config_.validate();
  const int c = config_.feature_channels;
  stem_conv_ = register_module("stem_conv", conv(config_.in_channels, config_.stem_channels, 7, 2));
  stem_res1_ = register_module("stem_res1", Bottleneck(config_.stem_channels, config_.mid_channels));
  stem_res2_ = register_module("stem_res2", Bottleneck(config_.mid_channels, c));
  stem_res3_ = register_module("stem_res3", Bottleneck(c, c));

  const int task_channels[kNumTasks] = {config_.seg_channels, config_.lm_channels, config_.roi_channels};
  hourglasses_ = register_module("hourglasses", nn::ModuleList());
  shared_ = register_module("shared", nn::ModuleList());
  features_ = register_module("features", nn::ModuleList());
  heads_ = register_module("heads", nn::ModuleList());
  remaps_ = register_module("remaps", nn::ModuleList());
  for (int l = 0; l < config_.num_stacks; ++l) {
    hourglasses_->push_back(Hourglass(config_.hourglass_depth, c));
    shared_->push_back(Bottleneck(c, c));
    features_->push_back(feature_layer(c));
    for (int t = 0; t < kNumTasks; ++t) heads_->push_back(conv(c, task_channels[t], 1));
    if (l + 1 < config_.num_stacks) {
      for (int t = 0; t < kNumTasks; ++t) remaps_->push_back(conv(task_channels[t], c, 1));
    }
  }
}

NetworkOutput StackedHourglassImpl::forward(const torch::Tensor& batch) {
  const auto n = config_.input_size;
  if (batch.dim() != 4 || batch.size(1) != config_.in_channels || batch.size(2) != n ||
      batch.size(3) != n) {
    std::ostringstream msg;
    msg << "forward: expected input B x " << config_.in_channels << " x " << n << " x " << n
        << ", got " << batch.sizes();
    throw std::invalid_argument(msg.str());
  }

  auto x = stem_res1_(stem_conv_(batch));
  x = stem_res3_(stem_res2_(torch::max_pool2d(x, 2, 2)));

  NetworkOutput out;
  out.reserve(config_.num_stacks);
  for (int l = 0; l < config_.num_stacks; ++l) {
    auto features = hourglasses_->ptr<HourglassImpl>(l)->forward(x);
    features = shared_->ptr<BottleneckImpl>(l)->forward(features);
    features = features_->ptr<nn::SequentialImpl>(l)->forward(features);

    StackOutput preds;
    torch::Tensor* slots[kNumTasks] = {&preds.seg_logits, &preds.lm_maps, &preds.roi_map};
    for (int t = 0; t < kNumTasks; ++t) {
      *slots[t] = heads_->ptr<nn::Conv2dImpl>(l * kNumTasks + t)->forward(features);
    }
    if (l + 1 < config_.num_stacks) {
      auto next = x + features;
      for (int t = 0; t < kNumTasks; ++t) {
        next = next + remaps_->ptr<nn::Conv2dImpl>(l * kNumTasks + t)->forward(*slots[t]);
      }
      x = next;
    }
    out.push_back(std::move(preds));
  }
  return out;
}

std::vector<torch::Tensor> StackedHourglassImpl::shared_parameters(int stack) const {
  return features_->ptr(stack)->parameters();
}

std::vector<torch::Tensor> StackedHourglassImpl::stack_parameters(int stack) const {
  std::vector<torch::Tensor> params = hourglasses_->ptr(stack)->parameters();
  auto append = [&params](const std::vector<torch::Tensor>& more) {
    params.insert(params.end(), more.begin(), more.end());
  };
  append(shared_->ptr(stack)->parameters());
  append(features_->ptr(stack)->parameters());
  for (int t = 0; t < kNumTasks; ++t) {
    append(heads_->ptr(stack * kNumTasks + t)->parameters());
    if (stack + 1 < config_.num_stacks) append(remaps_->ptr(stack * kNumTasks + t)->parameters());
  }
  return params;
}

torch::nn::Conv2dImpl* StackedHourglassImpl::head(int stack, Task task) const {
  if (stack < 0 || stack >= config_.num_stacks) throw std::out_of_range("head: stack index out of range");
  return heads_->ptr<nn::Conv2dImpl>(stack * kNumTasks + static_cast<int>(task)).get();
}

StackedHourglass build_network(const NetworkConfig& config, uint64_t seed) {
  config.validate();
  torch::manual_seed(seed);
  StackedHourglass net(config);
  torch::NoGradGuard guard;
  auto ends_with = [](const std::string& s, const std::string& tail) {
    return s.size() >= tail.size() && s.compare(s.size() - tail.size(), tail.size(), tail) == 0;
  };
  for (auto& item : net->named_parameters()) {
    const auto& name = item.key();
    auto& p = item.value();
    if (name.rfind("remaps.", 0) == 0 && ends_with(name, ".bias")) p.zero_();
  }
  // Heatmap heads start close to the empty map so that their initial loss
  // reflects the target rather than random offsets.
  for (int l = 0; l < config.num_stacks; ++l) {
    for (const Task t : {Task::kLandmark, Task::kRoi}) {
      auto* head = net->head(l, t);
      head->weight.mul_(kHeatmapHeadGain);
      head->bias.zero_();
    }
  }
  return net;
}

namespace {
constexpr const char* kConfigKey = "__config__";
}

void save_checkpoint(const StackedHourglass& net, const std::string& path) {
  torch::serialize::OutputArchive archive;
  for (const auto& item : net->named_parameters()) archive.write(item.key(), item.value().detach());
  for (const auto& item : net->named_buffers()) archive.write(item.key(), item.value(), true);
  archive.write(kConfigKey, c10::IValue(net->config().to_json()));
  archive.save_to(path);
}

NetworkConfig read_checkpoint_config(const std::string& path) {
  if (!std::ifstream(path).good()) throw std::runtime_error("checkpoint not found: " + path);
  torch::serialize::InputArchive archive;
  archive.load_from(path);
  c10::IValue value;
  if (!archive.try_read(kConfigKey, value) || !value.isString())
    throw std::runtime_error("checkpoint has no network config: " + path);
  return NetworkConfig::from_json(value.toStringRef());
}

StackedHourglass load_checkpoint(const std::string& path) {
  const auto config = read_checkpoint_config(path);
  torch::serialize::InputArchive archive;
  archive.load_from(path);
  StackedHourglass net(config);
  torch::NoGradGuard guard;
  for (auto& item : net->named_parameters()) {
    torch::Tensor stored;
    if (!archive.try_read(item.key(), stored))
      throw std::runtime_error("checkpoint missing parameter " + item.key());
    if (stored.sizes() != item.value().sizes())
      throw std::runtime_error("checkpoint shape mismatch for " + item.key());
    item.value().copy_(stored);
  }
  for (auto& item : net->named_buffers()) {
    torch::Tensor stored;
    if (archive.try_read(item.key(), stored, true)) item.value().copy_(stored);
  }
  return net;
}

}  // namespace kneeplan

#include "kneeplan/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <opencv2/imgproc.hpp>

#include "kneeplan/heatmap_codec.hpp"
#include "kneeplan/inference.hpp"
#include "kneeplan/tensor_util.hpp"

namespace kneeplan {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("TrainConfig: " + what); };
  if (epochs < 1) fail("epochs must be positive");
  if (batch_size < 1) fail("batch_size must be positive");
  if (!(lr_net > 0.0) || !(lr_weights > 0.0)) fail("learning rates must be positive");
  if (lr_halving_period < 1) fail("lr_halving_period must be positive");
  if (gradnorm_alpha < 0.0) fail("gradnorm_alpha must be non-negative");
  if (seg_beta < 0.0) fail("seg_beta must be non-negative");
  if (checkpoint_interval < 0 || validation_interval < 0) fail("intervals must be non-negative");
  network.validate();
}

namespace {

// Key table shared by the parser and the formatter.
struct Field {
  const char* key;
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

template <typename T>
T parse_value(const std::string& key, const std::string& text) {
  std::istringstream in(text);
  T value{};
  if constexpr (std::is_same_v<T, bool>) {
    std::string word;
    in >> word;
    if (word == "true" || word == "1") return true;
    if (word == "false" || word == "0") return false;
    throw std::invalid_argument("config: '" + key + "' expects true/false, got '" + text + "'");
  } else {
    in >> value;
    std::string rest;
    if (in.fail() || (in >> rest)) throw std::invalid_argument("config: bad value for '" + key + "': '" + text + "'");
  }
  return value;
}

template <typename T>
std::string format_value(const T& v) {
  std::ostringstream out;
  if constexpr (std::is_same_v<T, bool>) {
    out << (v ? "true" : "false");
  } else {
    out << std::setprecision(10) << v;
  }
  return out.str();
}

#define KNEEPLAN_FIELD(name, member)                                                                \
  Field {                                                                                           \
    name, [](TrainConfig& c, const std::string& v) { c.member = parse_value<decltype(c.member)>(name, v); }, \
        [](const TrainConfig& c) { return format_value(c.member); }                                 \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      KNEEPLAN_FIELD("epochs", epochs),
      KNEEPLAN_FIELD("batch_size", batch_size),
      KNEEPLAN_FIELD("lr_net", lr_net),
      KNEEPLAN_FIELD("lr_weights", lr_weights),
      KNEEPLAN_FIELD("lr_halving_period", lr_halving_period),
      KNEEPLAN_FIELD("gradnorm_alpha", gradnorm_alpha),
      KNEEPLAN_FIELD("seg_beta", seg_beta),
      KNEEPLAN_FIELD("rms_alpha", rms_alpha),
      KNEEPLAN_FIELD("rms_eps", rms_eps),
      KNEEPLAN_FIELD("seed", seed),
      KNEEPLAN_FIELD("checkpoint_interval", checkpoint_interval),
      KNEEPLAN_FIELD("validation_interval", validation_interval),
      KNEEPLAN_FIELD("augment", augment),
      KNEEPLAN_FIELD("aug_p_flip", augmentation.p_flip),
      KNEEPLAN_FIELD("aug_p_rotate", augmentation.p_rotate),
      KNEEPLAN_FIELD("aug_p_scale", augmentation.p_scale),
      KNEEPLAN_FIELD("aug_p_contrast", augmentation.p_contrast),
      KNEEPLAN_FIELD("aug_rotation_deg", augmentation.rotation_deg),
      KNEEPLAN_FIELD("aug_scale_min", augmentation.scale_min),
      KNEEPLAN_FIELD("aug_scale_max", augmentation.scale_max),
      KNEEPLAN_FIELD("aug_contrast_gain_min", augmentation.contrast_gain_min),
      KNEEPLAN_FIELD("aug_contrast_gain_max", augmentation.contrast_gain_max),
      KNEEPLAN_FIELD("aug_contrast_bias_min", augmentation.contrast_bias_min),
      KNEEPLAN_FIELD("aug_contrast_bias_max", augmentation.contrast_bias_max),
      KNEEPLAN_FIELD("aug_max_retries", augmentation.max_retries),
      KNEEPLAN_FIELD("num_stacks", network.num_stacks),
      KNEEPLAN_FIELD("hourglass_depth", network.hourglass_depth),
      KNEEPLAN_FIELD("input_size", network.input_size),
  };
  return table;
}

#undef KNEEPLAN_FIELD

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

TrainConfig parse_train_config(const std::string& text) {
  TrainConfig config;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto& table = fields();
    const auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return key == f.key; });
    if (it == table.end()) throw std::invalid_argument("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    it->set(config, value);
  }
  config.validate();
  return config;
}

TrainConfig load_train_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_train_config(buffer.str());
}

std::string format_train_config(const TrainConfig& config) {
  std::ostringstream out;
  for (const auto& f : fields()) out << f.key << " = " << f.get(config) << "\n";
  return out.str();
}

double learning_rate_at(const TrainConfig& config, int epoch) {
  return config.lr_net * std::pow(0.5, epoch / config.lr_halving_period);
}

SampleTensors make_sample_tensors(const Sample& normalized, int scale) {
  const cv::Size input = normalized.image.pixels.size();
  const cv::Size hm(input.width / scale, input.height / scale);
  const auto& a = normalized.annotation;
  SampleTensors t;
  t.image = mat_to_tensor(normalized.image.pixels).unsqueeze(0);

  std::vector<torch::Tensor> seg;
  for (const auto& mask : a.masks) {
    cv::Mat1f f, pooled;
    mask.convertTo(f, CV_32F);
    cv::resize(f, pooled, hm, 0, 0, cv::INTER_AREA);
    seg.push_back((mat_to_tensor(pooled) >= 0.5F).to(torch::kFloat32));
  }
  t.seg = torch::stack(seg);
  t.lm = torch::stack({mat_to_tensor(encode_landmark(a.p_blum, hm, scale)),
                       mat_to_tensor(encode_landmark(a.p_tmc, hm, scale))});
  t.roi = mat_to_tensor(encode_line_roi(a.p_prox, a.p_dist, hm, scale)).unsqueeze(0);
  return t;
}

Batch collate(const std::vector<SampleTensors>& items) {
  std::vector<torch::Tensor> img, seg, lm, roi;
  for (const auto& s : items) {
    img.push_back(s.image);
    seg.push_back(s.seg);
    lm.push_back(s.lm);
    roi.push_back(s.roi);
  }
  return {torch::stack(img), torch::stack(seg), torch::stack(lm), torch::stack(roi)};
}

std::vector<std::vector<torch::Tensor>> compute_task_losses(const NetworkOutput& output, const Batch& batch,
                                                            double seg_beta) {
  std::vector<std::vector<torch::Tensor>> losses;
  losses.reserve(output.size());
  for (const auto& stack : output) {
    losses.push_back({seg_loss(stack.seg_logits, batch.seg, seg_beta), heatmap_loss(stack.lm_maps, batch.lm),
                      heatmap_loss(stack.roi_map, batch.roi)});
  }
  return losses;
}

Trainer::Trainer(TrainConfig config, std::optional<fs::path> out_dir)
    : config_(std::move(config)), out_dir_(std::move(out_dir)) {
  config_.validate();
}

namespace {

uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b) {
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32), static_cast<uint32_t>(a),
                    static_cast<uint32_t>(b)};
  std::array<uint64_t, 1> out{};
  seq.generate(reinterpret_cast<uint32_t*>(out.data()), reinterpret_cast<uint32_t*>(out.data()) + 2);
  return out[0];
}

std::ofstream open_csv(const fs::path& path, const std::string& header) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << header << "\n";
  return out;
}

std::string dump_step(const StepRecord& r) {
  std::ostringstream out;
  out << "step " << r.step << " epoch " << r.epoch << " lr " << r.lr << "\n";
  for (std::size_t l = 0; l < r.losses.size(); ++l) {
    out << "  hourglass " << l;
    for (std::size_t t = 0; t < r.losses[l].size(); ++t)
      out << "  " << kTaskNames[t] << " loss=" << r.losses[l][t] << " w=" << r.weights[l][t];
    out << "\n";
  }
  return out.str();
}

}  // namespace

TrainResult Trainer::train(const std::vector<Sample>& train, const std::vector<Sample>& val) {
  if (train.empty()) throw std::invalid_argument("train: empty training split");
  const TrainConfig& cfg = config_;
  const int stacks = cfg.network.num_stacks;
  const int scale = 4;

  TrainResult result;
  result.network = build_network(cfg.network, cfg.seed);
  auto& net = result.network;
  net->train();

  GradNormOptions gn;
  gn.alpha = cfg.gradnorm_alpha;
  gn.lr = cfg.lr_weights;
  gn.rms_alpha = cfg.rms_alpha;
  gn.eps = cfg.rms_eps;
  TaskWeightMatrix weights(stacks, kNumTasks, gn);
  torch::optim::RMSprop optimizer(net->parameters(),
                                  torch::optim::RMSpropOptions(cfg.lr_net).alpha(cfg.rms_alpha).eps(cfg.rms_eps));

  std::ofstream loss_csv, weight_csv, val_csv;
  if (out_dir_) {
    fs::create_directories(*out_dir_);
    std::ofstream(*out_dir_ / "train_config.txt") << format_train_config(cfg);
    loss_csv = open_csv(*out_dir_ / "losses.csv", "step,epoch,l,task,loss");
    weight_csv = open_csv(*out_dir_ / "gradnorm_weights.csv", "step,l,task,w");
    val_csv = open_csv(*out_dir_ / "validation.csv", "epoch,mean_landmark_ed,femur_iou,schoettle_median");
  }

  // Without augmentation the normalized targets never change.
  std::vector<SampleTensors> cached;
  if (!cfg.augment) {
    for (const auto& s : train) cached.push_back(make_sample_tensors(normalize_to_input(s, cfg.network.input_size).sample, scale));
  }

  double best_ed = std::numeric_limits<double>::infinity();
  int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = learning_rate_at(cfg, epoch);
    for (auto& group : optimizer.param_groups())
      static_cast<torch::optim::RMSpropOptions&>(group.options()).lr(lr);

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, static_cast<uint64_t>(epoch), 0x5eed));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      std::vector<SampleTensors> items;
      for (std::size_t k = begin; k < end; ++k) {
        const std::size_t idx = order[k];
        if (!cfg.augment) {
          items.push_back(cached[idx]);
          continue;
        }
        const auto aug = augment_sample(train[idx], mix_seed(cfg.seed, static_cast<uint64_t>(epoch), idx + 1),
                                        cfg.augmentation);
        items.push_back(make_sample_tensors(normalize_to_input(aug.sample, cfg.network.input_size).sample, scale));
      }
      const Batch batch = collate(items);

      optimizer.zero_grad();
      const NetworkOutput out = net->forward(batch.image);
      const auto task_losses = compute_task_losses(out, batch, cfg.seg_beta);

      StepRecord rec;
      rec.step = step;
      rec.epoch = epoch;
      rec.lr = lr;
      bool finite = true;
      for (const auto& row : task_losses) {
        std::vector<double> values;
        for (const auto& loss : row) {
          values.push_back(loss.item<double>());
          finite = finite && std::isfinite(values.back());
        }
        rec.losses.push_back(values);
      }
      auto record_weights = [&] {
        rec.weights.assign(static_cast<std::size_t>(stacks), std::vector<double>(kNumTasks));
        for (int l = 0; l < stacks; ++l)
          for (int t = 0; t < kNumTasks; ++t) rec.weights[l][t] = weights.weight(l, t);
      };
      if (!finite) {
        record_weights();
        const std::string dump = dump_step(rec);
        if (out_dir_) std::ofstream(*out_dir_ / "nan_dump.txt") << dump;
        throw TrainingError("non-finite loss\n" + dump);
      }

      std::vector<std::vector<torch::Tensor>> shared;
      for (int l = 0; l < stacks; ++l) shared.push_back(net->shared_parameters(l));
      weights.step(task_losses, shared);
      record_weights();

      const auto total = total_loss(weights.weights(), task_losses);
      rec.total = total.item<double>();
      total.backward();
      optimizer.step();

      if (out_dir_) {
        for (int l = 0; l < stacks; ++l)
          for (int t = 0; t < kNumTasks; ++t) {
            loss_csv << step << ',' << epoch << ',' << l << ',' << kTaskNames[t] << ',' << rec.losses[l][t] << '\n';
            weight_csv << step << ',' << l << ',' << kTaskNames[t] << ',' << rec.weights[l][t] << '\n';
          }
      }
      if (step_callback_) step_callback_(rec);
      result.history.push_back(std::move(rec));
      ++step;
    }

    const bool last_epoch = epoch + 1 == cfg.epochs;
    if (!val.empty() && cfg.validation_interval > 0 && ((epoch + 1) % cfg.validation_interval == 0 || last_epoch)) {
      const MetricReport report = validate(net, val, 200, cfg.seed);
      net->train();
      ValidationRecord v;
      v.epoch = epoch;
      double ed_sum = 0.0;
      for (const auto& m : report.per_image) ed_sum += 0.5 * (m.ed_blum_mm + m.ed_tmc_mm);
      v.mean_landmark_ed = ed_sum / static_cast<double>(report.per_image.size());
      v.femur_iou = report.bones[0].iou.mean;
      if (report.schoettle_ed) v.schoettle_median = report.schoettle_ed->median;
      if (out_dir_) {
        val_csv << epoch << ',' << v.mean_landmark_ed << ',' << v.femur_iou << ','
                << (v.schoettle_median ? std::to_string(*v.schoettle_median) : "") << '\n';
        if (v.mean_landmark_ed < best_ed) {
          best_ed = v.mean_landmark_ed;
          result.best_checkpoint = *out_dir_ / "checkpoint_best.pt";
          save_checkpoint(net, result.best_checkpoint->string());
        }
      }
      result.validation.push_back(v);
    }
    if (out_dir_ && cfg.checkpoint_interval > 0 && (epoch + 1) % cfg.checkpoint_interval == 0) {
      std::ostringstream name;
      name << "checkpoint_epoch_" << std::setw(3) << std::setfill('0') << epoch + 1 << ".pt";
      save_checkpoint(net, (*out_dir_ / name.str()).string());
    }
  }
  if (out_dir_) save_checkpoint(net, (*out_dir_ / "checkpoint_last.pt").string());
  net->eval();
  return result;
}

}  // namespace kneeplan

#include "kneeplan/dataset_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>

namespace kneeplan {

using nlohmann::json;

std::string_view to_string(SplitTag tag) {
  switch (tag) {
    case SplitTag::kTrain: return "train";
    case SplitTag::kVal: return "val";
    case SplitTag::kTest: return "test";
  }
  return "train";
}

SplitTag split_tag_from_string(std::string_view s) {
  if (s == "train") return SplitTag::kTrain;
  if (s == "val") return SplitTag::kVal;
  if (s == "test") return SplitTag::kTest;
  throw std::invalid_argument("unknown split tag: " + std::string(s));
}

std::string mask_file_name(Bone bone) {
  return "mask_" + std::string(kBoneNames[static_cast<int>(bone)]) + ".png";
}

namespace {

bool in_bounds(const Point2& p, int width, int height) {
  return std::isfinite(p.x) && std::isfinite(p.y) && p.x >= 0.0 && p.y >= 0.0 &&
         p.x <= width - 1.0 && p.y <= height - 1.0;
}

cv::Mat read_png(const fs::path& path) {
  if (!fs::exists(path)) throw LoadError("missing file: " + path.string());
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) throw LoadError("unreadable image: " + path.string());
  if (raw.channels() != 1) throw LoadError("expected single-channel image: " + path.string());
  if (raw.depth() != CV_8U && raw.depth() != CV_16U)
    throw LoadError("expected 8- or 16-bit image: " + path.string());
  return raw;
}

double depth_max(const cv::Mat& m) { return m.depth() == CV_16U ? 65535.0 : 255.0; }

Point2 read_point(const json& j, const char* key, const fs::path& file) {
  if (!j.contains(key) || !j.at(key).is_array() || j.at(key).size() != 2)
    throw LoadError(file.string() + ": key '" + key + "' must be [x, y]");
  return {j.at(key)[0].get<double>(), j.at(key)[1].get<double>()};
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void write_png(const fs::path& path, const cv::Mat& m) {
  if (!cv::imwrite(path.string(), m)) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace

void validate_sample(const Sample& sample) {
  const auto& img = sample.image;
  const int h = img.height();
  const int w = img.width();
  if (h < 1 || w < 1) throw ValidationError("image is empty");
  double lo = 0.0;
  double hi = 0.0;
  cv::minMaxLoc(img.pixels, &lo, &hi);
  if (lo < 0.0 || hi > 1.0) throw ValidationError("image intensities outside [0,1]");
  if (img.mm_per_px && !(*img.mm_per_px > 0.0)) throw ValidationError("mm_per_px must be positive");

  const auto& a = sample.annotation;
  const std::pair<const char*, Point2> points[] = {
      {"p_blum", a.p_blum}, {"p_tmc", a.p_tmc}, {"p_prox", a.p_prox}, {"p_dist", a.p_dist}};
  for (const auto& [name, p] : points) {
    if (!in_bounds(p, w, h)) throw ValidationError(std::string(name) + " lies outside the image");
  }
  if (a.p_prox == a.p_dist) throw ValidationError("p_prox and p_dist coincide");
  for (int b = 0; b < kNumBones; ++b) {
    const auto& m = a.masks[b];
    if (m.rows != h || m.cols != w)
      throw ValidationError("mask " + std::string(kBoneNames[b]) + " does not match image size");
  }
}

GrayImage load_image(const fs::path& path) {
  GrayImage image;
  const cv::Mat raw = read_png(path);
  raw.convertTo(image.pixels, CV_32F, 1.0 / depth_max(raw));
  image.source_id = path.stem().string();
  return image;
}

Sample load_sample(const fs::path& dir) {
  Sample sample;
  sample.image = load_image(dir / kImageFile);
  sample.image.source_id = dir.filename().string();

  for (int b = 0; b < kNumBones; ++b) {
    const cv::Mat m = read_png(dir / mask_file_name(static_cast<Bone>(b)));
    const double half = depth_max(m) / 2.0;
    cv::Mat1b binary(m.size());
    cv::Mat wide;
    m.convertTo(wide, CV_64F);
    for (int i = 0; i < m.rows; ++i)
      for (int j = 0; j < m.cols; ++j) binary(i, j) = wide.at<double>(i, j) >= half ? 1 : 0;
    sample.annotation.masks[b] = binary;
  }

  const fs::path ann_path = dir / kAnnotationFile;
  std::ifstream in(ann_path);
  if (!in) throw LoadError("missing file: " + ann_path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw LoadError(ann_path.string() + ": " + e.what());
  }
  auto& a = sample.annotation;
  a.p_blum = read_point(j, "p_blum", ann_path);
  a.p_tmc = read_point(j, "p_tmc", ann_path);
  a.p_prox = read_point(j, "p_prox", ann_path);
  a.p_dist = read_point(j, "p_dist", ann_path);
  if (j.contains("mm_per_px") && !j.at("mm_per_px").is_null())
    sample.image.mm_per_px = j.at("mm_per_px").get<double>();

  validate_sample(sample);
  return sample;
}

void save_sample(const Sample& sample, const fs::path& dir) {
  validate_sample(sample);
  fs::create_directories(dir);
  cv::Mat_<uint16_t> img16;
  sample.image.pixels.convertTo(img16, CV_16U, 65535.0);
  write_png(dir / kImageFile, img16);
  for (int b = 0; b < kNumBones; ++b) {
    cv::Mat1b stored = sample.annotation.masks[b] * 255;
    write_png(dir / mask_file_name(static_cast<Bone>(b)), stored);
  }
  const auto& a = sample.annotation;
  json j = {{"p_blum", {a.p_blum.x, a.p_blum.y}},
            {"p_tmc", {a.p_tmc.x, a.p_tmc.y}},
            {"p_prox", {a.p_prox.x, a.p_prox.y}},
            {"p_dist", {a.p_dist.x, a.p_dist.y}}};
  if (sample.image.mm_per_px) j["mm_per_px"] = *sample.image.mm_per_px;
  write_file(dir / kAnnotationFile, j.dump(2) + "\n");
}

SplitMap read_split_file(const fs::path& root) {
  const fs::path path = root / kSplitFile;
  std::ifstream in(path);
  if (!in) throw LoadError("missing file: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
  SplitMap split;
  for (const auto& [key, ids] : j.items()) {
    split_tag_from_string(key);
    split[key] = ids.get<std::vector<std::string>>();
  }
  return split;
}

void write_split_file(const fs::path& root, const SplitMap& split) {
  fs::create_directories(root);
  json j = json::object();
  for (const auto& [key, ids] : split) j[key] = ids;
  write_file(root / kSplitFile, j.dump(2) + "\n");
}

std::vector<Sample> load_dataset(const fs::path& root) {
  const SplitMap split = read_split_file(root);
  std::vector<Sample> samples;
  for (const char* key : {"train", "val", "test"}) {
    const auto it = split.find(key);
    if (it == split.end()) continue;
    for (const auto& id : it->second) {
      Sample s = load_sample(root / id);
      s.split = split_tag_from_string(key);
      samples.push_back(std::move(s));
    }
  }
  return samples;
}

std::vector<Sample> select_split(const std::vector<Sample>& samples, SplitTag tag) {
  std::vector<Sample> out;
  std::copy_if(samples.begin(), samples.end(), std::back_inserter(out),
               [tag](const Sample& s) { return s.split == tag; });
  return out;
}

std::pair<std::vector<Sample>, std::vector<Sample>> split_dataset_counts(std::vector<Sample> samples,
                                                                         std::size_t train_count,
                                                                         uint64_t seed) {
  if (samples.empty()) throw std::invalid_argument("split_dataset: empty input");
  if (train_count > samples.size()) throw std::invalid_argument("split_dataset: train count exceeds N");
  std::mt19937_64 rng(seed);
  std::shuffle(samples.begin(), samples.end(), rng);
  std::vector<Sample> train(std::make_move_iterator(samples.begin()),
                            std::make_move_iterator(samples.begin() + train_count));
  std::vector<Sample> val(std::make_move_iterator(samples.begin() + train_count),
                          std::make_move_iterator(samples.end()));
  for (auto& s : train) s.split = SplitTag::kTrain;
  for (auto& s : val) s.split = SplitTag::kVal;
  return {std::move(train), std::move(val)};
}

std::pair<std::vector<Sample>, std::vector<Sample>> split_dataset(std::vector<Sample> samples,
                                                                  double ratio, uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("split_dataset: ratio must be in (0,1)");
  if (samples.empty()) throw std::invalid_argument("split_dataset: empty input");
  const auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(samples.size())));
  return split_dataset_counts(std::move(samples), n_train, seed);
}

double calibrate_spacing(double sphere_diameter_px) {
  if (!(sphere_diameter_px > 0.0)) throw std::invalid_argument("sphere diameter must be positive");
  return kSphereDiameterMm / sphere_diameter_px;
}

}  // namespace kneeplan

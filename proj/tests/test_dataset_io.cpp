#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include <opencv2/imgcodecs.hpp>

#include "kneeplan/dataset_io.hpp"
#include "kneeplan/synth_phantom.hpp"

using namespace kneeplan;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() / ("kneeplan_io_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                         "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::vector<Sample> phantoms(int n) {
  std::vector<Sample> out;
  for (int k = 0; k < n; ++k) {
    Sample s = generate_phantom(random_phantom_spec(static_cast<uint64_t>(k)));
    s.image.source_id = "s" + std::to_string(k);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Sample> placeholders(int n) {
  std::vector<Sample> out(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) out[k].image.source_id = "id" + std::to_string(k);
  return out;
}

}  // namespace

TEST(DatasetIo, SaveLoadRoundTrip) {
  TempDir dir;
  const Sample s = generate_phantom(random_phantom_spec(3));
  save_sample(s, dir.path() / "a");
  const Sample back = load_sample(dir.path() / "a");
  EXPECT_LE(cv::norm(back.image.pixels, s.image.pixels, cv::NORM_INF), 1.0 / 65535.0);
  for (int b = 0; b < kNumBones; ++b) EXPECT_EQ(cv::countNonZero(back.annotation.masks[b] != s.annotation.masks[b]), 0);
  EXPECT_DOUBLE_EQ(back.annotation.p_blum.x, s.annotation.p_blum.x);
  EXPECT_DOUBLE_EQ(back.annotation.p_dist.y, s.annotation.p_dist.y);
  EXPECT_EQ(back.image.mm_per_px, s.image.mm_per_px);
  EXPECT_EQ(back.image.source_id, "a");
}

TEST(DatasetIo, EightBitImagesAreRescaled) {
  TempDir dir;
  const Sample s = generate_phantom(random_phantom_spec(3));
  save_sample(s, dir.path() / "a");
  cv::Mat1b eight(s.image.pixels.size(), 255);
  cv::imwrite((dir.path() / "a" / kImageFile).string(), eight);
  const Sample back = load_sample(dir.path() / "a");
  EXPECT_FLOAT_EQ(back.image.pixels(0, 0), 1.0F);
}

TEST(DatasetIo, MissingFilesRaiseLoadError) {
  TempDir dir;
  EXPECT_THROW(load_sample(dir.path() / "nothing"), LoadError);
  const Sample s = generate_phantom(random_phantom_spec(3));
  save_sample(s, dir.path() / "a");
  fs::remove(dir.path() / "a" / mask_file_name(Bone::kFibula));
  EXPECT_THROW(load_sample(dir.path() / "a"), LoadError);
}

TEST(DatasetIo, MalformedAnnotationRaisesLoadError) {
  TempDir dir;
  save_sample(generate_phantom(random_phantom_spec(3)), dir.path() / "a");
  std::ofstream(dir.path() / "a" / kAnnotationFile) << R"({"p_blum": [1, 2]})";
  EXPECT_THROW(load_sample(dir.path() / "a"), LoadError);
  std::ofstream(dir.path() / "a" / kAnnotationFile) << "{not json";
  EXPECT_THROW(load_sample(dir.path() / "a"), LoadError);
}

TEST(Validation, CoincidentCortexPoints) {
  Sample s = generate_phantom(random_phantom_spec(3));
  s.annotation.p_dist = s.annotation.p_prox;
  EXPECT_THROW(validate_sample(s), ValidationError);
}

TEST(Validation, MaskShapeMismatch) {
  Sample s = generate_phantom(random_phantom_spec(3));
  s.annotation.masks[2] = Mask::zeros(10, 10);
  EXPECT_THROW(validate_sample(s), ValidationError);
}

TEST(Validation, LandmarkOutsideImage) {
  Sample s = generate_phantom(random_phantom_spec(3));
  s.annotation.p_tmc = {-3.0, 10.0};
  EXPECT_THROW(validate_sample(s), ValidationError);
}

TEST(Split, RatioRounding) {
  const auto [train, val] = split_dataset(placeholders(185), 0.8, 0);
  EXPECT_EQ(train.size(), 148U);
  EXPECT_EQ(val.size(), 37U);
  const auto [train2, val2] = split_dataset_counts(placeholders(185), 149, 0);
  EXPECT_EQ(train2.size(), 149U);
  EXPECT_EQ(val2.size(), 36U);
}

TEST(Split, DeterministicPartition) {
  const auto a = split_dataset(placeholders(10), 0.8, 1);
  const auto b = split_dataset(placeholders(10), 0.8, 1);
  std::set<std::string> all;
  for (std::size_t k = 0; k < a.first.size(); ++k) {
    EXPECT_EQ(a.first[k].image.source_id, b.first[k].image.source_id);
    EXPECT_EQ(a.first[k].split, SplitTag::kTrain);
    all.insert(a.first[k].image.source_id);
  }
  for (const auto& s : a.second) {
    EXPECT_EQ(s.split, SplitTag::kVal);
    all.insert(s.image.source_id);
  }
  EXPECT_EQ(all.size(), 10U);
}

TEST(Split, InvalidArguments) {
  EXPECT_THROW(split_dataset(placeholders(10), 1.0, 0), std::invalid_argument);
  EXPECT_THROW(split_dataset(placeholders(10), 0.0, 0), std::invalid_argument);
  EXPECT_THROW(split_dataset({}, 0.5, 0), std::invalid_argument);
  EXPECT_THROW(split_dataset_counts(placeholders(3), 4, 0), std::invalid_argument);
}

TEST(Split, FileRoundTripAndDatasetLoad) {
  TempDir dir;
  const auto samples = phantoms(3);
  for (const auto& s : samples) save_sample(s, dir.path() / s.image.source_id);
  write_split_file(dir.path(), {{"train", {"s0", "s2"}}, {"test", {"s1"}}});
  const SplitMap split = read_split_file(dir.path());
  EXPECT_EQ(split.at("train").size(), 2U);
  const auto loaded = load_dataset(dir.path());
  ASSERT_EQ(loaded.size(), 3U);
  EXPECT_EQ(select_split(loaded, SplitTag::kTrain).size(), 2U);
  const auto test = select_split(loaded, SplitTag::kTest);
  ASSERT_EQ(test.size(), 1U);
  EXPECT_EQ(test[0].image.source_id, "s1");
  EXPECT_TRUE(select_split(loaded, SplitTag::kVal).empty());
}

TEST(Calibration, SphereDiameter) {
  EXPECT_DOUBLE_EQ(calibrate_spacing(150.0), 0.2);
  EXPECT_DOUBLE_EQ(calibrate_spacing(30.0), 1.0);
  EXPECT_DOUBLE_EQ(calibrate_spacing(100.0), 0.3);
  EXPECT_THROW(calibrate_spacing(0.0), std::invalid_argument);
}

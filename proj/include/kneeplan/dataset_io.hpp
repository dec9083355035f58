#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "kneeplan/types.hpp"

namespace kneeplan {

namespace fs = std::filesystem;

// On-disk sample layout (one directory per sample):
//   image.png            8- or 16-bit grayscale
//   mask_<bone>.png      8-bit, 0 = background, 255 = bone
//   annotation.json      {"p_blum": [x, y], "p_tmc": ..., "p_prox": ..., "p_dist": ...,
//                         "mm_per_px": optional}
// The dataset root additionally holds split.json mapping split names to ids.

inline constexpr const char* kImageFile = "image.png";
inline constexpr const char* kAnnotationFile = "annotation.json";
inline constexpr const char* kSplitFile = "split.json";

std::string mask_file_name(Bone bone);

/// Checks every Sample invariant; throws ValidationError naming the first
/// violation.
void validate_sample(const Sample& sample);

/// Reads an 8- or 16-bit single-channel PNG rescaled to [0,1]. Throws LoadError.
GrayImage load_image(const fs::path& path);

/// Loads and validates one sample directory. Intensities are rescaled to
/// [0,1] by the storage bit depth; masks are binarized at half their range.
/// Throws LoadError (missing/unreadable file) or ValidationError.
Sample load_sample(const fs::path& dir);

/// Writes the sample in the layout above. Image is stored as 16-bit PNG.
void save_sample(const Sample& sample, const fs::path& dir);

using SplitMap = std::map<std::string, std::vector<std::string>>;

SplitMap read_split_file(const fs::path& root);
void write_split_file(const fs::path& root, const SplitMap& split);

/// Loads every sample listed in split.json, tagging each with its split.
/// Ids are returned in split-file order (train, val, test).
std::vector<Sample> load_dataset(const fs::path& root);

/// Samples tagged with `tag`.
std::vector<Sample> select_split(const std::vector<Sample>& samples, SplitTag tag);

/// Seeded shuffle-then-cut. |train| = round(ratio * N). Requires 0 < ratio < 1
/// and a non-empty input (std::invalid_argument otherwise).
std::pair<std::vector<Sample>, std::vector<Sample>> split_dataset(std::vector<Sample> samples,
                                                                  double ratio, uint64_t seed);

/// Same shuffle, explicit train count (e.g. 149 of 185).
std::pair<std::vector<Sample>, std::vector<Sample>> split_dataset_counts(std::vector<Sample> samples,
                                                                         std::size_t train_count,
                                                                         uint64_t seed);

/// Diameter of the calibration sphere in mm.
inline constexpr double kSphereDiameterMm = 30.0;

/// mm per pixel from the imaged diameter of the calibration sphere.
double calibrate_spacing(double sphere_diameter_px);

}  // namespace kneeplan

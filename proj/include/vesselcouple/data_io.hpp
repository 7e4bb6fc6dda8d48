#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "vesselcouple/image.hpp"
#include "vesselcouple/losses.hpp"
#include "vesselcouple/tensor.hpp"

namespace vesselcouple {

// ---------------------------------------------------------------------------
// Label codec. Red = artery, green = vein, blue = vessel, each binarized at
// 128: magenta is artery, cyan vein, white crossing, blue uncertain.

inline constexpr std::uint8_t kLabelThreshold = 128;

struct LabelDecodeReport {
  std::size_t repaired = 0;    // artery/vein pixels that lacked the vessel bit
  std::size_t non_binary = 0;  // channel samples outside {0, 255}
};

/// With `strict`, any channel value outside {0, 255} raises ImageError.
AVLabel decode_av_label(const RgbImage& img, LabelDecodeReport* report = nullptr,
                        bool strict = false);
RgbImage encode_av_label(const AVLabel& label);

/// Prediction composite in the same channel layout, probabilities scaled by
/// 255 and rounded.
RgbImage encode_prediction(const PredictionTriple& pred);
PredictionTriple decode_prediction(const RgbImage& img);

// ---------------------------------------------------------------------------
// Datasets.

enum class Split { kTrain, kVal, kTest };
std::string to_string(Split s);
Split split_from_string(const std::string& s);

enum class DatasetLayout { kRite, kLesAv, kHrf, kFlat };
DatasetLayout layout_from_string(const std::string& s);

struct DatasetEntry {
  std::string name;
  std::filesystem::path image;
  std::filesystem::path label;
  std::optional<std::filesystem::path> fov;
  std::optional<std::filesystem::path> mask;  // cached superpixel mask
  Split split = Split::kTrain;
};

class DatasetError : public std::runtime_error {
 public:
  explicit DatasetError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

/// Directory layouts (PNG files, paired by filename stem):
///   rite:  training/{images,av}/ and test/{images,av}/, optional */mask/
///   lesav: images/, av/, optional mask/; first 11 stems train, rest test
///   hrf:   images/, av/, optional mask/; stems "<nn>_<category>"; the first
///          five of each category are test, the rest train
///   flat:  images/, labels/, optional fov/ and masks/; splits from
///          manifest.json when present, otherwise all train
/// With `verify`, every image/label pair is decoded and its size compared.
std::vector<DatasetEntry> load_dataset(const std::filesystem::path& root,
                                       DatasetLayout layout, bool verify = false);

/// Writes manifest.json (entries, splits, SHA-256 of each file) for a flat
/// dataset rooted at `root`.
void write_manifest(const std::filesystem::path& root,
                    const std::vector<DatasetEntry>& entries);

std::string sha256_file(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Synthetic vascular trees.

struct SyntheticTreeConfig {
  std::size_t width = 128;
  std::size_t height = 128;
  std::size_t branching_depth = 4;      // generations below each root
  double min_branch_angle_deg = 20.0;
  double max_branch_angle_deg = 40.0;
  double width_decay = 0.72;
  std::size_t vessels_per_class = 2;    // root vessels per tree
  double root_width = 3.4;              // px
  double noise = 0.03;                  // Gaussian sigma on [0, 1] intensities
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticSample {
  RgbImage image;
  AVLabel label;
};

SyntheticSample generate_synthetic(const SyntheticTreeConfig& cfg);

// ---------------------------------------------------------------------------
// Preprocessing and resizing.

struct PreprocessOptions {
  /// Divide by Gaussian-blurred luminance (sigma = width / 30) before
  /// standardizing.
  bool local_contrast = true;
};

/// Per-channel standardized [3, H, W] tensor.
Tensor preprocess(const RgbImage& img, const PreprocessOptions& options = {});

/// The preprocessed tensor rendered back to 8 bits (128 + 32 t, clamped).
RgbImage contrast_enhanced(const RgbImage& img, const PreprocessOptions& options = {});

RgbImage resize_bilinear(const RgbImage& img, std::size_t width, std::size_t height);
RgbImage resize_nearest(const RgbImage& img, std::size_t width, std::size_t height);

/// Per-pixel FOV mask from a PNG (nonzero = inside) as an [H, W] tensor.
Tensor load_fov(const std::filesystem::path& path);

}  // namespace vesselcouple

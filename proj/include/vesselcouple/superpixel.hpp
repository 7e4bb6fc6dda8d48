#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "vesselcouple/image.hpp"

namespace vesselcouple {

/// Per-pixel cluster index partitioning an image into `clusters` regions.
struct SuperpixelMask {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::int32_t> labels;  // row-major, values in [0, clusters)
  std::size_t clusters = 0;

  std::int32_t at(std::size_t x, std::size_t y) const { return labels[y * width + x]; }
  bool operator==(const SuperpixelMask&) const = default;
};

struct SlicConfig {
  std::size_t k = 20;             // requested cluster count
  double compactness = 10.0;      // m
  std::size_t max_iters = 10;
  double min_region_ratio = 0.25; // of the mean cluster size

  void validate() const;
};

struct LabImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::array<double, 3>> pixels;  // L*, a*, b*
};

/// sRGB (D65) to CIELAB.
std::array<double, 3> rgb_to_lab(std::uint8_t r, std::uint8_t g, std::uint8_t b);
LabImage rgb_to_lab(const RgbImage& img);

struct SlicResult {
  SuperpixelMask mask;
  std::size_t seeds = 0;       // grid centers actually placed
  std::size_t iterations = 0;  // assignment/update rounds run
};

/// SLIC over the Lab image. The algorithm is deterministic; `seed` is part
/// of the interface for callers that key caches on it and does not change
/// the result.
SlicResult slic_segment(const RgbImage& img, const SlicConfig& cfg,
                        std::uint64_t seed = 0);

/// Relabels to [0, C) in order of first appearance in raster order.
SuperpixelMask compact_labels(std::size_t width, std::size_t height,
                              const std::vector<std::int32_t>& raw);

/// Number of 4-connected regions carrying `label`.
std::size_t count_regions(const SuperpixelMask& mask, std::int32_t label);
/// True when labels cover exactly [0, C) and each label is one region.
bool is_connected_partition(const SuperpixelMask& mask);

enum class DownsampleMethod { kMajority, kNearest };

/// Target cell (r, c) covers source rows [round(r*H/h), round((r+1)*H/h))
/// and the analogous columns.
struct BlockRange {
  std::size_t begin, end;
};
BlockRange block_range(std::size_t index, std::size_t source, std::size_t target);

/// Per-cell label before re-compaction: the majority label of the block
/// (ties to the smallest label), or the block-center label for kNearest.
std::vector<std::int32_t> downsample_labels(const SuperpixelMask& mask,
                                            std::size_t target_h,
                                            std::size_t target_w,
                                            DownsampleMethod method = DownsampleMethod::kMajority);

/// Downsampled mask with ids re-compacted; connectivity is not re-enforced.
SuperpixelMask downsample_mask(const SuperpixelMask& mask, std::size_t target_h,
                               std::size_t target_w,
                               DownsampleMethod method = DownsampleMethod::kMajority);

/// 16-bit grayscale PNG (value = cluster index) plus a sidecar text file
/// (same path, ".txt" extension) holding "C=<count>".
void save_mask(const std::filesystem::path& path, const SuperpixelMask& mask);
SuperpixelMask load_mask(const std::filesystem::path& path);

}  // namespace vesselcouple

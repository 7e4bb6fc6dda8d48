#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

namespace vesselcouple {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Interleaved 8-bit RGB, row-major.
struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  RgbImage() = default;
  RgbImage(std::size_t w, std::size_t h)
      : width(w), height(h), pixels(w * h * 3, 0) {}

  bool empty() const { return width == 0 || height == 0; }
  std::uint8_t* at(std::size_t x, std::size_t y) {
    return pixels.data() + (y * width + x) * 3;
  }
  const std::uint8_t* at(std::size_t x, std::size_t y) const {
    return pixels.data() + (y * width + x) * 3;
  }
  bool operator==(const RgbImage&) const = default;
};

/// Single-channel image with 8- or 16-bit samples stored widened.
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  int bit_depth = 8;
  std::vector<std::uint16_t> pixels;

  bool operator==(const GrayImage&) const = default;
};

namespace png {

/// Decodes any PNG to 8-bit RGB (gray is replicated, alpha dropped, 16-bit
/// samples are scaled down).
RgbImage read_rgb(const std::filesystem::path& path);
/// Decodes a grayscale PNG keeping its bit depth (8 or 16).
GrayImage read_gray(const std::filesystem::path& path);

void write_rgb(const std::filesystem::path& path, const RgbImage& image);
void write_gray(const std::filesystem::path& path, const GrayImage& image);

}  // namespace png

}  // namespace vesselcouple

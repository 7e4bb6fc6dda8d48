#include <png.h>

#include <cstdio>
#include <memory>
#include <string>

#include "vesselcouple/image.hpp"

namespace vesselcouple::png {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw ImageError("cannot open " + path.string());
  return f;
}

// libpng reports errors through longjmp; everything with a non-trivial
// destructor is created before setjmp and only raw pointers cross it.
struct Decoded {
  std::size_t width = 0, height = 0;
  int bit_depth = 8;
  int channels = 0;
  std::vector<std::uint8_t> bytes;  // rows of width*channels*bit_depth/8
};

Decoded decode(const std::filesystem::path& path, bool keep16) {
  FilePtr file = open(path, "rb");
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw ImageError(path.string() + " is not a PNG file");
  }
  png_structp png_ptr =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_ptr ? png_create_info_struct(png_ptr) : nullptr;
  if (!png_ptr || !info) {
    png_destroy_read_struct(&png_ptr, &info, nullptr);
    throw ImageError("libpng init failed");
  }
  Decoded out;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png_ptr))) {
    png_destroy_read_struct(&png_ptr, &info, nullptr);
    throw ImageError("corrupt PNG " + path.string());
  }
  png_init_io(png_ptr, file.get());
  png_set_sig_bytes(png_ptr, 8);
  png_read_info(png_ptr, info);

  const png_byte color = png_get_color_type(png_ptr, info);
  const png_byte depth = png_get_bit_depth(png_ptr, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png_ptr);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png_ptr);
  if (png_get_valid(png_ptr, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png_ptr);
  if (depth == 16) {
    if (keep16) {
      png_set_swap(png_ptr);  // host little-endian u16
    } else {
      png_set_strip_16(png_ptr);
    }
  }
  png_set_strip_alpha(png_ptr);
  png_read_update_info(png_ptr, info);

  out.width = png_get_image_width(png_ptr, info);
  out.height = png_get_image_height(png_ptr, info);
  out.channels = png_get_channels(png_ptr, info);
  out.bit_depth = png_get_bit_depth(png_ptr, info);
  const std::size_t stride = png_get_rowbytes(png_ptr, info);
  out.bytes.resize(stride * out.height);
  rows.resize(out.height);
  for (std::size_t y = 0; y < out.height; ++y) rows[y] = out.bytes.data() + y * stride;
  png_read_image(png_ptr, rows.data());
  png_read_end(png_ptr, nullptr);
  png_destroy_read_struct(&png_ptr, &info, nullptr);
  return out;
}

void encode(const std::filesystem::path& path, std::size_t width,
            std::size_t height, int color_type, int bit_depth,
            const std::vector<png_bytep>& rows) {
  FilePtr file = open(path, "wb");
  png_structp png_ptr =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_ptr ? png_create_info_struct(png_ptr) : nullptr;
  if (!png_ptr || !info) {
    png_destroy_write_struct(&png_ptr, &info);
    throw ImageError("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png_ptr))) {
    png_destroy_write_struct(&png_ptr, &info);
    throw ImageError("PNG write failed for " + path.string());
  }
  png_init_io(png_ptr, file.get());
  png_set_IHDR(png_ptr, info, static_cast<png_uint_32>(width),
               static_cast<png_uint_32>(height), bit_depth, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png_ptr, info);
  if (bit_depth == 16) png_set_swap(png_ptr);
  png_write_image(png_ptr, const_cast<png_bytepp>(rows.data()));
  png_write_end(png_ptr, nullptr);
  png_destroy_write_struct(&png_ptr, &info);
}

}  // namespace

RgbImage read_rgb(const std::filesystem::path& path) {
  Decoded d = decode(path, false);
  RgbImage img(d.width, d.height);
  for (std::size_t i = 0; i < d.width * d.height; ++i) {
    for (int c = 0; c < 3; ++c) {
      img.pixels[i * 3 + c] = d.channels >= 3 ? d.bytes[i * d.channels + c]
                                             : d.bytes[i * d.channels];
    }
  }
  return img;
}

GrayImage read_gray(const std::filesystem::path& path) {
  Decoded d = decode(path, true);
  if (d.channels != 1) {
    throw ImageError(path.string() + ": expected a grayscale PNG");
  }
  GrayImage img;
  img.width = d.width;
  img.height = d.height;
  img.bit_depth = d.bit_depth;
  img.pixels.resize(d.width * d.height);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    if (d.bit_depth == 16) {
      img.pixels[i] = static_cast<std::uint16_t>(d.bytes[2 * i] | (d.bytes[2 * i + 1] << 8));
    } else {
      img.pixels[i] = d.bytes[i];
    }
  }
  return img;
}

void write_rgb(const std::filesystem::path& path, const RgbImage& image) {
  if (image.empty()) throw ImageError("refusing to write an empty image");
  std::vector<png_bytep> rows(image.height);
  for (std::size_t y = 0; y < image.height; ++y) {
    rows[y] = const_cast<png_bytep>(image.pixels.data() + y * image.width * 3);
  }
  encode(path, image.width, image.height, PNG_COLOR_TYPE_RGB, 8, rows);
}

void write_gray(const std::filesystem::path& path, const GrayImage& image) {
  if (image.width == 0 || image.height == 0) {
    throw ImageError("refusing to write an empty image");
  }
  if (image.bit_depth != 8 && image.bit_depth != 16) {
    throw ImageError("unsupported bit depth " + std::to_string(image.bit_depth));
  }
  std::vector<std::uint8_t> bytes;
  if (image.bit_depth == 8) {
    bytes.reserve(image.pixels.size());
    for (auto v : image.pixels) bytes.push_back(static_cast<std::uint8_t>(v));
  } else {
    bytes.resize(image.pixels.size() * 2);
    for (std::size_t i = 0; i < image.pixels.size(); ++i) {
      bytes[2 * i] = static_cast<std::uint8_t>(image.pixels[i] & 0xff);
      bytes[2 * i + 1] = static_cast<std::uint8_t>(image.pixels[i] >> 8);
    }
  }
  const std::size_t stride = image.width * (image.bit_depth / 8);
  std::vector<png_bytep> rows(image.height);
  for (std::size_t y = 0; y < image.height; ++y) rows[y] = bytes.data() + y * stride;
  encode(path, image.width, image.height, PNG_COLOR_TYPE_GRAY, image.bit_depth, rows);
}

}  // namespace vesselcouple::png

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "vesselcouple/rng.hpp"
#include "vesselcouple/superpixel.hpp"

using namespace vesselcouple;

namespace {

RgbImage constant_image(std::size_t w, std::size_t h, std::uint8_t r, std::uint8_t g,
                        std::uint8_t b) {
  RgbImage img(w, h);
  for (std::size_t i = 0; i < w * h; ++i) {
    img.pixels[3 * i] = r;
    img.pixels[3 * i + 1] = g;
    img.pixels[3 * i + 2] = b;
  }
  return img;
}

RgbImage half_black_white(std::size_t n) {
  RgbImage img(n, n);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = n / 2; x < n; ++x) {
      auto* p = img.at(x, y);
      p[0] = p[1] = p[2] = 255;
    }
  return img;
}

RgbImage noisy_image(std::size_t w, std::size_t h, std::uint64_t seed) {
  Rng rng(seed);
  RgbImage img(w, h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double base = 120 + 80 * std::sin(0.2 * x) * std::cos(0.15 * y);
      for (int c = 0; c < 3; ++c) {
        const double v = base + 30 * c + 20 * rng.normal();
        img.at(x, y)[c] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
    }
  return img;
}

// Pixels whose cluster disagrees with the majority color side of that cluster.
std::size_t edge_deviation(const SuperpixelMask& m) {
  std::map<std::int32_t, std::pair<std::size_t, std::size_t>> sides;
  for (std::size_t y = 0; y < m.height; ++y)
    for (std::size_t x = 0; x < m.width; ++x) {
      auto& s = sides[m.at(x, y)];
      (x < m.width / 2 ? s.first : s.second)++;
    }
  std::size_t dev = 0;
  for (const auto& [_, s] : sides) dev += std::min(s.first, s.second);
  return dev;
}

// Independent 4-connected flood fill count per label.
std::map<std::int32_t, int> region_counts(const SuperpixelMask& m) {
  std::vector<bool> seen(m.labels.size(), false);
  std::map<std::int32_t, int> regions;
  for (std::size_t start = 0; start < m.labels.size(); ++start) {
    if (seen[start]) continue;
    const std::int32_t l = m.labels[start];
    regions[l]++;
    std::vector<std::size_t> stack{start};
    seen[start] = true;
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      const std::size_t x = i % m.width, y = i / m.width;
      auto visit = [&](std::size_t j) {
        if (!seen[j] && m.labels[j] == l) {
          seen[j] = true;
          stack.push_back(j);
        }
      };
      if (x > 0) visit(i - 1);
      if (x + 1 < m.width) visit(i + 1);
      if (y > 0) visit(i - m.width);
      if (y + 1 < m.height) visit(i + m.width);
    }
  }
  return regions;
}

}  // namespace

TEST_CASE("rgb_to_lab reference colors") {
  const auto black = rgb_to_lab(0, 0, 0);
  CHECK(black[0] == doctest::Approx(0.0));
  CHECK(std::abs(black[1]) < 1e-9);
  CHECK(std::abs(black[2]) < 1e-9);
  const auto white = rgb_to_lab(255, 255, 255);
  CHECK(white[0] == doctest::Approx(100.0).epsilon(1e-6));
  CHECK(std::abs(white[1]) < 1e-3);
  CHECK(std::abs(white[2]) < 1e-3);
  const auto red = rgb_to_lab(255, 0, 0);
  CHECK(red[0] == doctest::Approx(53.24).epsilon(1e-4));
  CHECK(red[1] == doctest::Approx(80.09).epsilon(1e-4));
  CHECK(red[2] == doctest::Approx(67.20).epsilon(1e-4));
}

TEST_CASE("constant image gives the seed grid") {
  SlicConfig cfg;
  cfg.k = 4;
  cfg.compactness = 10;
  const SuperpixelMask m = slic_segment(constant_image(64, 64, 90, 140, 30), cfg).mask;
  REQUIRE(m.clusters == 4);
  for (std::size_t by = 0; by < 2; ++by)
    for (std::size_t bx = 0; bx < 2; ++bx) {
      const std::int32_t l = m.at(bx * 32, by * 32);
      for (std::size_t y = by * 32; y < by * 32 + 32; ++y)
        for (std::size_t x = bx * 32; x < bx * 32 + 32; ++x) REQUIRE(m.at(x, y) == l);
    }
  std::set<std::int32_t> distinct(m.labels.begin(), m.labels.end());
  CHECK(distinct.size() == 4);
}

TEST_CASE("one requested cluster covers the image") {
  SlicConfig cfg;
  cfg.k = 1;
  const SuperpixelMask m = slic_segment(noisy_image(40, 30, 2), cfg).mask;
  CHECK(m.clusters == 1);
  for (auto l : m.labels) CHECK(l == 0);
}

TEST_CASE("two-tone image splits at the color edge") {
  SlicConfig cfg;
  cfg.k = 2;
  cfg.compactness = 0.1;
  const SuperpixelMask m = slic_segment(half_black_white(8), cfg).mask;
  REQUIRE(m.clusters == 2);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) CHECK(m.at(x, y) == m.at(x < 4 ? 0 : 7, 0));
  CHECK(m.at(0, 0) != m.at(7, 0));
  CHECK(edge_deviation(m) == 0);
}

TEST_CASE("edge deviation does not decrease with compactness") {
  SlicConfig cfg;
  cfg.k = 2;
  std::size_t previous = 0;
  for (double m : {0.1, 1.0, 10.0, 40.0}) {
    cfg.compactness = m;
    const std::size_t dev = edge_deviation(slic_segment(half_black_white(8), cfg).mask);
    CHECK(dev >= previous);
    previous = dev;
  }
}

TEST_CASE("SLIC output is a connected partition and deterministic") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    SlicConfig cfg;
    cfg.k = 5 + 7 * seed;
    cfg.compactness = seed % 2 ? 20.0 : 5.0;
    const RgbImage img = noisy_image(48 + seed, 40, seed);
    const SlicResult a = slic_segment(img, cfg, seed);
    const SlicResult b = slic_segment(img, cfg, seed);
    CHECK(a.mask == b.mask);
    const SuperpixelMask& m = a.mask;
    REQUIRE(m.labels.size() == img.width * img.height);
    std::set<std::int32_t> used(m.labels.begin(), m.labels.end());
    CHECK(used.size() == m.clusters);
    CHECK(*used.begin() == 0);
    CHECK(*used.rbegin() == static_cast<std::int32_t>(m.clusters) - 1);
    for (const auto& [_, regions] : region_counts(m)) CHECK(regions == 1);
    CHECK(is_connected_partition(m));
  }
}

TEST_CASE("SLIC config validation") {
  SlicConfig cfg;
  cfg.k = 17;
  CHECK_THROWS(slic_segment(constant_image(4, 4, 0, 0, 0), cfg));
  cfg.k = 0;
  CHECK_THROWS(cfg.validate());
  cfg = {};
  cfg.compactness = 0;
  CHECK_THROWS(cfg.validate());
  cfg = {};
  cfg.min_region_ratio = 1.0;
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("downsample examples") {
  SuperpixelMask one{4, 4, std::vector<std::int32_t>(16, 0), 1};
  const SuperpixelMask d = downsample_mask(one, 2, 2);
  CHECK(d.width == 2);
  CHECK(d.height == 2);
  CHECK(d.labels == std::vector<std::int32_t>(4, 0));

  SuperpixelMask cols{2, 2, {0, 1, 0, 1}, 2};
  const SuperpixelMask c = downsample_mask(cols, 1, 2);
  CHECK(c.labels == std::vector<std::int32_t>{0, 1});

  CHECK_THROWS(downsample_mask(one, 0, 2));
}

TEST_CASE("majority downsample matches a recount") {
  Rng rng(77);
  for (int t = 0; t < 5; ++t) {
    SuperpixelMask m{64, 64, std::vector<std::int32_t>(64 * 64), 20};
    for (auto& l : m.labels) l = static_cast<std::int32_t>(rng.index(20));
    for (std::int32_t l = 0; l < 20; ++l) m.labels[l] = l;
    for (auto [th, tw] : {std::pair<std::size_t, std::size_t>{8, 8}, {5, 7}, {16, 3}}) {
      const auto raw = downsample_labels(m, th, tw);
      REQUIRE(raw.size() == th * tw);
      for (std::size_t r = 0; r < th; ++r)
        for (std::size_t c = 0; c < tw; ++c) {
          const auto y0 = static_cast<std::size_t>(std::lround(double(r) * 64 / th));
          const auto y1 = static_cast<std::size_t>(std::lround(double(r + 1) * 64 / th));
          const auto x0 = static_cast<std::size_t>(std::lround(double(c) * 64 / tw));
          const auto x1 = static_cast<std::size_t>(std::lround(double(c + 1) * 64 / tw));
          std::map<std::int32_t, int> counts;
          for (std::size_t y = y0; y < y1; ++y)
            for (std::size_t x = x0; x < x1; ++x) counts[m.at(x, y)]++;
          std::int32_t best = -1;
          int best_n = -1;
          for (const auto& [l, n] : counts)
            if (n > best_n) best = l, best_n = n;
          CHECK(raw[r * tw + c] == best);
          CHECK(counts.count(raw[r * tw + c]) == 1);
        }
      const SuperpixelMask d = downsample_mask(m, th, tw);
      CHECK(d == compact_labels(tw, th, raw));
      std::set<std::int32_t> out_ids(raw.begin(), raw.end());
      for (auto id : out_ids) CHECK((id >= 0 && id < 20));
    }
  }
}

TEST_CASE("nearest downsample picks block centers") {
  // Even blocks take the lower middle pixel.
  SuperpixelMask m{4, 4, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15}, 16};
  const auto raw = downsample_labels(m, 2, 2, DownsampleMethod::kNearest);
  CHECK(raw == std::vector<std::int32_t>{0, 2, 8, 10});
}

TEST_CASE("compact_labels orders by first appearance") {
  const SuperpixelMask m = compact_labels(3, 1, {7, 2, 7});
  CHECK(m.labels == std::vector<std::int32_t>{0, 1, 0});
  CHECK(m.clusters == 2);
}

TEST_CASE("mask file round trip") {
  SlicConfig cfg;
  cfg.k = 30;
  const SuperpixelMask m = slic_segment(noisy_image(50, 37, 4), cfg).mask;
  const auto path = std::filesystem::temp_directory_path() / "vc_mask_roundtrip.png";
  save_mask(path, m);
  CHECK(load_mask(path) == m);
  std::filesystem::remove(path);
  std::filesystem::remove(std::filesystem::path(path).replace_extension(".txt"));
}

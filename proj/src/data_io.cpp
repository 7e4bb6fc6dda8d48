#include "vesselcouple/data_io.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include <json.hpp>

#include "vesselcouple/rng.hpp"

namespace vesselcouple {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Label codec

AVLabel decode_av_label(const RgbImage& img, LabelDecodeReport* report, bool strict) {
  if (img.empty()) throw ImageError("decode_av_label: empty image");
  const std::size_t n = img.width * img.height;
  std::vector<double> a(n), v(n), bv(n);
  LabelDecodeReport rep;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* p = img.pixels.data() + 3 * i;
    for (int c = 0; c < 3; ++c) {
      if (p[c] != 0 && p[c] != 255) ++rep.non_binary;
    }
    a[i] = p[0] >= kLabelThreshold ? 1.0 : 0.0;
    v[i] = p[1] >= kLabelThreshold ? 1.0 : 0.0;
    bv[i] = p[2] >= kLabelThreshold ? 1.0 : 0.0;
  }
  if (strict && rep.non_binary) {
    throw ImageError("label has " + std::to_string(rep.non_binary) +
                     " channel values outside {0, 255}");
  }
  const Shape shape{img.height, img.width};
  AVLabel label{Tensor::from_data(shape, std::move(a)), Tensor::from_data(shape, std::move(v)),
                Tensor::from_data(shape, std::move(bv))};
  rep.repaired = repair_label(label);
  if (report) *report = rep;
  return label;
}

RgbImage encode_av_label(const AVLabel& label) {
  RgbImage img(label.width(), label.height());
  for (std::size_t i = 0; i < label.l_bv.numel(); ++i) {
    img.pixels[3 * i] = label.l_a[i] > 0.5 ? 255 : 0;
    img.pixels[3 * i + 1] = label.l_v[i] > 0.5 ? 255 : 0;
    img.pixels[3 * i + 2] = label.l_bv[i] > 0.5 ? 255 : 0;
  }
  return img;
}

RgbImage encode_prediction(const PredictionTriple& pred) {
  const std::size_t h = pred.y_bv.dim(0), w = pred.y_bv.dim(1);
  RgbImage img(w, h);
  auto q = [](double p) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(p, 0.0, 1.0) * 255.0));
  };
  for (std::size_t i = 0; i < w * h; ++i) {
    img.pixels[3 * i] = q(pred.y_a[i]);
    img.pixels[3 * i + 1] = q(pred.y_v[i]);
    img.pixels[3 * i + 2] = q(pred.y_bv[i]);
  }
  return img;
}

PredictionTriple decode_prediction(const RgbImage& img) {
  const std::size_t n = img.width * img.height;
  std::vector<double> a(n), v(n), bv(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = img.pixels[3 * i] / 255.0;
    v[i] = img.pixels[3 * i + 1] / 255.0;
    bv[i] = img.pixels[3 * i + 2] / 255.0;
  }
  const Shape shape{img.height, img.width};
  return {Tensor::from_data(shape, std::move(a)), Tensor::from_data(shape, std::move(v)),
          Tensor::from_data(shape, std::move(bv))};
}

// ---------------------------------------------------------------------------
// Datasets

std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw std::invalid_argument("unknown split '" + s + "'");
}

DatasetLayout layout_from_string(const std::string& s) {
  if (s == "rite") return DatasetLayout::kRite;
  if (s == "lesav") return DatasetLayout::kLesAv;
  if (s == "hrf") return DatasetLayout::kHrf;
  if (s == "flat") return DatasetLayout::kFlat;
  throw std::invalid_argument("unknown dataset layout '" + s + "'");
}

namespace {

std::string join_problems(const std::vector<std::string>& problems) {
  std::string msg = "dataset problems:";
  for (const auto& p : problems) msg += "\n  " + p;
  return msg;
}

std::map<std::string, fs::path> png_stems(const fs::path& dir) {
  std::map<std::string, fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") {
      out.emplace(e.path().stem().string(), e.path());
    }
  }
  return out;
}

// Pairs images/labels (and optional extras) by stem; missing partners become
// problems.
std::vector<DatasetEntry> pair_dir(const fs::path& images, const fs::path& labels,
                                   const fs::path& fov, const fs::path& masks,
                                   std::vector<std::string>& problems) {
  if (!fs::is_directory(images)) problems.push_back("missing directory " + images.string());
  if (!fs::is_directory(labels)) problems.push_back("missing directory " + labels.string());
  const auto imgs = png_stems(images);
  const auto lbls = png_stems(labels);
  const auto fovs = png_stems(fov);
  const auto msks = png_stems(masks);
  std::vector<DatasetEntry> out;
  for (const auto& [stem, path] : imgs) {
    auto it = lbls.find(stem);
    if (it == lbls.end()) {
      problems.push_back("image without label: " + path.string());
      continue;
    }
    DatasetEntry e;
    e.name = stem;
    e.image = path;
    e.label = it->second;
    if (auto f = fovs.find(stem); f != fovs.end()) e.fov = f->second;
    if (auto m = msks.find(stem); m != msks.end()) e.mask = m->second;
    out.push_back(std::move(e));
  }
  for (const auto& [stem, path] : lbls) {
    if (!imgs.count(stem)) problems.push_back("label without image: " + path.string());
  }
  return out;
}

void verify_entries(const std::vector<DatasetEntry>& entries,
                    std::vector<std::string>& problems) {
  for (const auto& e : entries) {
    try {
      const RgbImage img = png::read_rgb(e.image);
      const RgbImage lbl = png::read_rgb(e.label);
      if (img.width != lbl.width || img.height != lbl.height) {
        problems.push_back(e.name + ": image " + std::to_string(img.width) + "x" +
                           std::to_string(img.height) + " vs label " +
                           std::to_string(lbl.width) + "x" + std::to_string(lbl.height));
      }
    } catch (const std::exception& ex) {
      problems.push_back(e.name + ": " + ex.what());
    }
  }
}

}  // namespace

DatasetError::DatasetError(std::vector<std::string> problems)
    : std::runtime_error(join_problems(problems)), problems_(std::move(problems)) {}

std::vector<DatasetEntry> load_dataset(const fs::path& root, DatasetLayout layout,
                                       bool verify) {
  if (!fs::is_directory(root)) {
    throw DatasetError({"dataset root " + root.string() + " is not a directory"});
  }
  std::vector<std::string> problems;
  std::vector<DatasetEntry> entries;
  switch (layout) {
    case DatasetLayout::kRite: {
      for (const auto& [dir, split] : {std::pair{"training", Split::kTrain},
                                       std::pair{"test", Split::kTest}}) {
        auto part = pair_dir(root / dir / "images", root / dir / "av",
                             root / dir / "mask", fs::path{}, problems);
        for (auto& e : part) {
          e.split = split;
          entries.push_back(std::move(e));
        }
      }
      break;
    }
    case DatasetLayout::kLesAv: {
      entries = pair_dir(root / "images", root / "av", root / "mask", fs::path{}, problems);
      for (std::size_t i = 0; i < entries.size(); ++i) {
        entries[i].split = i < 11 ? Split::kTrain : Split::kTest;
      }
      break;
    }
    case DatasetLayout::kHrf: {
      entries = pair_dir(root / "images", root / "av", root / "mask", fs::path{}, problems);
      std::map<std::string, std::vector<DatasetEntry*>> by_category;
      for (auto& e : entries) {
        const auto pos = e.name.rfind('_');
        if (pos == std::string::npos) {
          problems.push_back("HRF name without category suffix: " + e.name);
          continue;
        }
        by_category[e.name.substr(pos + 1)].push_back(&e);
      }
      for (auto& [category, group] : by_category) {
        // Numeric order of the "<nn>" prefix.
        std::sort(group.begin(), group.end(), [](const DatasetEntry* a, const DatasetEntry* b) {
          return std::stoi(a->name) < std::stoi(b->name);
        });
        for (std::size_t i = 0; i < group.size(); ++i) {
          group[i]->split = i < 5 ? Split::kTest : Split::kTrain;
        }
      }
      break;
    }
    case DatasetLayout::kFlat: {
      entries = pair_dir(root / "images", root / "labels", root / "fov", root / "masks", problems);
      const fs::path manifest = root / "manifest.json";
      if (fs::exists(manifest)) {
        std::ifstream in(manifest);
        const auto j = nlohmann::json::parse(in);
        std::map<std::string, Split> splits;
        for (const auto& e : j.at("entries")) {
          splits[e.at("name").get<std::string>()] =
              split_from_string(e.at("split").get<std::string>());
        }
        for (auto& e : entries) {
          auto it = splits.find(e.name);
          if (it == splits.end()) {
            problems.push_back("entry missing from manifest: " + e.name);
          } else {
            e.split = it->second;
          }
        }
      }
      break;
    }
  }
  if (verify) verify_entries(entries, problems);
  if (!problems.empty()) throw DatasetError(std::move(problems));
  return entries;
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError("cannot open " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(),
                                                             &EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  char buf[8192];
  while (in) {
    in.read(buf, sizeof buf);
    EVP_DigestUpdate(ctx.get(), buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 15]);
  }
  return out;
}

void write_manifest(const fs::path& root, const std::vector<DatasetEntry>& entries) {
  nlohmann::json j;
  j["layout"] = "flat";
  j["entries"] = nlohmann::json::array();
  for (const auto& e : entries) {
    nlohmann::json item{{"name", e.name},
                        {"image", fs::relative(e.image, root).generic_string()},
                        {"label", fs::relative(e.label, root).generic_string()},
                        {"split", to_string(e.split)},
                        {"image_sha256", sha256_file(e.image)},
                        {"label_sha256", sha256_file(e.label)}};
    if (e.mask) item["mask"] = fs::relative(*e.mask, root).generic_string();
    j["entries"].push_back(std::move(item));
  }
  std::ofstream out(root / "manifest.json");
  out << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Synthetic vascular trees

void SyntheticTreeConfig::validate() const {
  if (width < 8 || height < 8) throw std::invalid_argument("synthetic canvas too small");
  if (!(width_decay > 0.0 && width_decay < 1.0)) {
    throw std::invalid_argument("width_decay must be in (0, 1)");
  }
  if (!(min_branch_angle_deg >= 0.0 && min_branch_angle_deg <= max_branch_angle_deg)) {
    throw std::invalid_argument("invalid branch angle range");
  }
  if (vessels_per_class < 1) throw std::invalid_argument("vessels_per_class must be >= 1");
  if (!(root_width > 0.0) || noise < 0.0) throw std::invalid_argument("invalid width/noise");
}

namespace {

struct Stroke {
  double x0, y0, x1, y1, radius;
};

void grow_tree(Rng& rng, const SyntheticTreeConfig& cfg, double x, double y, double angle,
               double width, double length, std::size_t depth_left,
               std::vector<Stroke>& strokes) {
  constexpr int kPieces = 4;
  for (int i = 0; i < kPieces; ++i) {
    angle += rng.uniform(-0.18, 0.18);
    const double nx = x + std::cos(angle) * length / kPieces;
    const double ny = y + std::sin(angle) * length / kPieces;
    strokes.push_back({x, y, nx, ny, 0.5 * width});
    x = nx;
    y = ny;
  }
  if (depth_left == 0 || width * cfg.width_decay < 0.6) return;
  const double deg = std::numbers::pi / 180.0;
  const double spread =
      rng.uniform(cfg.min_branch_angle_deg, cfg.max_branch_angle_deg) * deg;
  const double bias = rng.uniform(0.3, 0.7);
  const double child_len = length * rng.uniform(0.7, 0.85);
  grow_tree(rng, cfg, x, y, angle + spread * bias, width * cfg.width_decay, child_len,
            depth_left - 1, strokes);
  grow_tree(rng, cfg, x, y, angle - spread * (1.0 - bias), width * cfg.width_decay,
            child_len, depth_left - 1, strokes);
}

// Distance from (px, py) to each stroke; fills `mask` and keeps the smallest
// normalized distance for shading.
void rasterize(const std::vector<Stroke>& strokes, std::size_t w, std::size_t h,
               std::vector<std::uint8_t>& mask, std::vector<double>& depth) {
  for (const Stroke& s : strokes) {
    const double r = s.radius;
    const auto x0 = static_cast<long>(std::floor(std::min(s.x0, s.x1) - r - 1));
    const auto x1 = static_cast<long>(std::ceil(std::max(s.x0, s.x1) + r + 1));
    const auto y0 = static_cast<long>(std::floor(std::min(s.y0, s.y1) - r - 1));
    const auto y1 = static_cast<long>(std::ceil(std::max(s.y0, s.y1) + r + 1));
    const double dx = s.x1 - s.x0, dy = s.y1 - s.y0;
    const double len2 = dx * dx + dy * dy;
    for (long y = std::max(0L, y0); y <= std::min<long>(h - 1, y1); ++y) {
      for (long x = std::max(0L, x0); x <= std::min<long>(w - 1, x1); ++x) {
        double t = len2 > 0 ? ((x - s.x0) * dx + (y - s.y0) * dy) / len2 : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        const double ex = x - (s.x0 + t * dx), ey = y - (s.y0 + t * dy);
        const double d = std::sqrt(ex * ex + ey * ey);
        if (d <= r) {
          const std::size_t p = static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x);
          mask[p] = 1;
          depth[p] = std::min(depth[p], d / r);
        }
      }
    }
  }
}

}  // namespace

SyntheticSample generate_synthetic(const SyntheticTreeConfig& cfg) {
  cfg.validate();
  const std::size_t w = cfg.width, h = cfg.height, n = w * h;
  Rng rng(cfg.seed);
  const double scale = static_cast<double>(std::min(w, h));
  const double disc_x = w * rng.uniform(0.3, 0.4);
  const double disc_y = h * rng.uniform(0.45, 0.55);
  const double disc_r = 0.07 * scale;

  std::vector<Stroke> artery, vein;
  const std::size_t roots = cfg.vessels_per_class;
  const double base = rng.uniform(0.0, 2.0 * std::numbers::pi);
  for (std::size_t k = 0; k < roots; ++k) {
    for (int cls = 0; cls < 2; ++cls) {
      // Veins interleave between arteries around the disc.
      const double angle = base + 2.0 * std::numbers::pi * (k + 0.5 * cls) / roots +
                           rng.uniform(-0.25, 0.25);
      const double sx = disc_x + std::cos(angle) * disc_r;
      const double sy = disc_y + std::sin(angle) * disc_r;
      const double width = cfg.root_width * (cls == 0 ? 0.9 : 1.1);
      grow_tree(rng, cfg, sx, sy, angle, width, 0.3 * scale * rng.uniform(0.9, 1.1),
                cfg.branching_depth, cls == 0 ? artery : vein);
    }
  }

  std::vector<std::uint8_t> mask_a(n, 0), mask_v(n, 0);
  std::vector<double> depth_a(n, 1.0), depth_v(n, 1.0);
  rasterize(artery, w, h, mask_a, depth_a);
  rasterize(vein, w, h, mask_v, depth_v);

  // Low-frequency background texture from a few random plane waves.
  struct Wave {
    double kx, ky, phase, amp;
  };
  std::vector<Wave> waves;
  for (int i = 0; i < 4; ++i) {
    const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double freq = rng.uniform(1.0, 4.0) * 2.0 * std::numbers::pi / scale;
    waves.push_back({std::cos(theta) * freq, std::sin(theta) * freq,
                     rng.uniform(0.0, 2.0 * std::numbers::pi), rng.uniform(0.02, 0.05)});
  }
  const std::array<double, 3> bg{0.80, 0.40, 0.20};
  const std::array<double, 3> disc{0.98, 0.82, 0.52};
  const std::array<double, 3> artery_rgb{0.72, 0.22, 0.14};
  const std::array<double, 3> vein_rgb{0.46, 0.10, 0.17};

  SyntheticSample out;
  out.image = RgbImage(w, h);
  std::vector<double> la(n), lv(n), lbv(n);
  const double cx = 0.5 * w, cy = 0.5 * h;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t p = y * w + x;
      const double r = std::hypot(x - cx, y - cy) / (0.5 * scale);
      double tex = 0.0;
      for (const Wave& wv : waves) tex += wv.amp * std::sin(wv.kx * x + wv.ky * y + wv.phase);
      const double vignette = 1.0 - 0.35 * r * r;
      std::array<double, 3> c;
      const double dd = std::hypot(x - disc_x, y - disc_y) / disc_r;
      const double disc_mix = std::clamp(1.6 - dd, 0.0, 1.0);
      for (int k = 0; k < 3; ++k) {
        c[k] = (bg[k] * (1.0 - disc_mix) + disc[k] * disc_mix) * vignette * (1.0 + tex);
      }
      // Veins are drawn over arteries at crossings; vessels darken toward
      // their centerline.
      auto shade = [&](const std::array<double, 3>& vc, double depth) {
        const double alpha = 0.55 + 0.45 * (1.0 - depth * depth);
        for (int k = 0; k < 3; ++k) c[k] = c[k] * (1.0 - alpha) + vc[k] * vignette * alpha;
      };
      if (mask_a[p]) shade(artery_rgb, depth_a[p]);
      if (mask_v[p]) shade(vein_rgb, depth_v[p]);
      std::uint8_t* px = out.image.at(x, y);
      for (int k = 0; k < 3; ++k) {
        const double v = c[k] + cfg.noise * rng.normal();
        px[k] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
      }
      la[p] = mask_a[p];
      lv[p] = mask_v[p];
      lbv[p] = (mask_a[p] || mask_v[p]) ? 1.0 : 0.0;
    }
  }
  const Shape shape{h, w};
  out.label = {Tensor::from_data(shape, std::move(la)), Tensor::from_data(shape, std::move(lv)),
               Tensor::from_data(shape, std::move(lbv))};
  return out;
}

// ---------------------------------------------------------------------------
// Preprocessing

namespace {

std::vector<double> gaussian_blur(const std::vector<double>& src, std::size_t w,
                                  std::size_t h, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += kernel[i + radius];
  }
  for (double& k : kernel) k /= sum;
  auto clampi = [](long v, long hi) { return std::clamp(v, 0L, hi); };
  std::vector<double> tmp(src.size()), out(src.size());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        s += kernel[i + radius] * src[y * w + clampi(static_cast<long>(x) + i, w - 1)];
      }
      tmp[y * w + x] = s;
    }
  }
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        s += kernel[i + radius] * tmp[clampi(static_cast<long>(y) + i, h - 1) * w + x];
      }
      out[y * w + x] = s;
    }
  }
  return out;
}

}  // namespace

Tensor preprocess(const RgbImage& img, const PreprocessOptions& options) {
  if (img.empty()) throw ImageError("preprocess: empty image");
  const std::size_t w = img.width, h = img.height, n = w * h;
  std::vector<double> out(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) out[c * n + i] = img.pixels[3 * i + c] / 255.0;
  }
  if (options.local_contrast) {
    std::vector<double> lum(n);
    for (std::size_t i = 0; i < n; ++i) {
      lum[i] = 0.299 * out[i] + 0.587 * out[n + i] + 0.114 * out[2 * n + i];
    }
    const auto blurred = gaussian_blur(lum, w, h, static_cast<double>(w) / 30.0);
    for (int c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < n; ++i) out[c * n + i] /= blurred[i] + 1e-3;
    }
  }
  constexpr double kStdEps = 1e-8;
  for (int c = 0; c < 3; ++c) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += out[c * n + i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = out[c * n + i] - mean;
      var += d * d;
    }
    const double sd = std::sqrt(var / static_cast<double>(n));
    // Spread at round-off scale (e.g. a blurred constant) counts as constant.
    if (sd <= 1e-12 * std::abs(mean)) {
      std::fill(out.begin() + c * n, out.begin() + (c + 1) * n, 0.0);
      continue;
    }
    for (std::size_t i = 0; i < n; ++i) out[c * n + i] = (out[c * n + i] - mean) / (sd + kStdEps);
  }
  return Tensor::from_data({3, h, w}, std::move(out));
}

RgbImage contrast_enhanced(const RgbImage& img, const PreprocessOptions& options) {
  const Tensor t = preprocess(img, options);
  const std::size_t n = img.width * img.height;
  RgbImage out(img.width, img.height);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = std::clamp(128.0 + 32.0 * t.data()[c * n + i], 0.0, 255.0);
      out.pixels[3 * i + c] = static_cast<std::uint8_t>(std::lround(v));
    }
  }
  return out;
}

RgbImage resize_bilinear(const RgbImage& img, std::size_t width, std::size_t height) {
  if (img.empty() || width == 0 || height == 0) throw ImageError("resize: empty size");
  RgbImage out(width, height);
  const double sx = static_cast<double>(img.width) / width;
  const double sy = static_cast<double>(img.height) / height;
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, img.height - 1);
    const double ty = fy - y0;
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, img.width - 1);
      const double tx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double v = (1 - ty) * ((1 - tx) * img.at(x0, y0)[c] + tx * img.at(x1, y0)[c]) +
                         ty * ((1 - tx) * img.at(x0, y1)[c] + tx * img.at(x1, y1)[c]);
        out.at(x, y)[c] = static_cast<std::uint8_t>(std::lround(v));
      }
    }
  }
  return out;
}

RgbImage resize_nearest(const RgbImage& img, std::size_t width, std::size_t height) {
  if (img.empty() || width == 0 || height == 0) throw ImageError("resize: empty size");
  RgbImage out(width, height);
  for (std::size_t y = 0; y < height; ++y) {
    const std::size_t sy = std::min(img.height - 1, (2 * y + 1) * img.height / (2 * height));
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t sx = std::min(img.width - 1, (2 * x + 1) * img.width / (2 * width));
      std::copy_n(img.at(sx, sy), 3, out.at(x, y));
    }
  }
  return out;
}

Tensor load_fov(const fs::path& path) {
  const RgbImage img = png::read_rgb(path);
  std::vector<double> v(img.width * img.height);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = img.pixels[3 * i] > 0 ? 1.0 : 0.0;
  return Tensor::from_data({img.height, img.width}, std::move(v));
}

}  // namespace vesselcouple

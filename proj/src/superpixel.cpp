#include "vesselcouple/superpixel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <queue>
#include <sstream>
#include <string>

namespace vesselcouple {

namespace {

double srgb_to_linear(std::uint8_t c) {
  const double v = c / 255.0;
  return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
}

double lab_f(double t) {
  constexpr double delta = 6.0 / 29.0;
  return t > delta * delta * delta ? std::cbrt(t)
                                   : t / (3.0 * delta * delta) + 4.0 / 29.0;
}

double lab_dist2(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  const double d0 = a[0] - b[0], d1 = a[1] - b[1], d2 = a[2] - b[2];
  return d0 * d0 + d1 * d1 + d2 * d2;
}

struct Center {
  std::array<double, 3> lab;
  double x, y;
};

// Grid of nx * ny <= k seeds with spacing close to sqrt(N / k).
std::pair<std::size_t, std::size_t> grid_dims(std::size_t w, std::size_t h,
                                              std::size_t k, double spacing) {
  auto nx = static_cast<std::size_t>(std::ceil(w / spacing));
  auto ny = static_cast<std::size_t>(std::ceil(h / spacing));
  nx = std::clamp<std::size_t>(nx, 1, w);
  ny = std::clamp<std::size_t>(ny, 1, h);
  while (nx * ny > k) {
    if (ny >= nx && ny > 1) {
      --ny;
    } else {
      --nx;
    }
  }
  return {nx, ny};
}

struct Component {
  std::int32_t label;
  std::vector<std::size_t> pixels;
};

// Splits the labeling into 4-connected components, keeps components of at
// least `min_size` pixels (or the largest per label when none qualifies
// anywhere), and merges the rest into the neighbouring kept region with the
// most shared edges.
std::vector<std::int32_t> enforce_connectivity(std::size_t w, std::size_t h,
                                               const std::vector<std::int32_t>& labels,
                                               double min_size) {
  const std::size_t n = w * h;
  std::vector<std::int32_t> comp(n, -1);
  std::vector<Component> comps;
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < n; ++start) {
    if (comp[start] >= 0) continue;
    const auto id = static_cast<std::int32_t>(comps.size());
    Component c{labels[start], {}};
    stack.assign(1, start);
    comp[start] = id;
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      c.pixels.push_back(p);
      const std::size_t x = p % w, y = p / w;
      auto visit = [&](std::size_t q) {
        if (comp[q] < 0 && labels[q] == c.label) {
          comp[q] = id;
          stack.push_back(q);
        }
      };
      if (x > 0) visit(p - 1);
      if (x + 1 < w) visit(p + 1);
      if (y > 0) visit(p - w);
      if (y + 1 < h) visit(p + w);
    }
    comps.push_back(std::move(c));
  }

  // A label's components beyond its largest become separate regions when
  // large enough, otherwise orphans.
  std::vector<bool> kept(comps.size(), false);
  bool any = false;
  for (std::size_t i = 0; i < comps.size(); ++i) {
    if (static_cast<double>(comps[i].pixels.size()) >= min_size) {
      kept[i] = true;
      any = true;
    }
  }
  if (!any) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < comps.size(); ++i) {
      if (comps[i].pixels.size() > comps[best].pixels.size()) best = i;
    }
    kept[best] = true;
  }

  // owner[i]: the kept component that component i ends up in.
  std::vector<std::int32_t> owner(comps.size(), -1);
  for (std::size_t i = 0; i < comps.size(); ++i) {
    if (kept[i]) owner[i] = static_cast<std::int32_t>(i);
  }
  bool pending = true;
  while (pending) {
    pending = false;
    bool progressed = false;
    for (std::size_t i = 0; i < comps.size(); ++i) {
      if (owner[i] >= 0) continue;
      std::map<std::int32_t, std::size_t> contacts;
      for (std::size_t p : comps[i].pixels) {
        const std::size_t x = p % w, y = p / w;
        auto touch = [&](std::size_t q) {
          const std::int32_t o = owner[comp[q]];
          if (comp[q] != static_cast<std::int32_t>(i) && o >= 0) ++contacts[o];
        };
        if (x > 0) touch(p - 1);
        if (x + 1 < w) touch(p + 1);
        if (y > 0) touch(p - w);
        if (y + 1 < h) touch(p + w);
      }
      if (contacts.empty()) {
        pending = true;
        continue;
      }
      // Map iteration is ordered by id, so ties go to the earlier region.
      auto best = contacts.begin();
      for (auto it = contacts.begin(); it != contacts.end(); ++it) {
        if (it->second > best->second) best = it;
      }
      owner[i] = best->first;
      progressed = true;
    }
    if (pending && !progressed) break;  // unreachable for a connected grid
  }

  std::vector<std::int32_t> out(n);
  for (std::size_t p = 0; p < n; ++p) out[p] = owner[comp[p]];
  return out;
}

}  // namespace

void SlicConfig::validate() const {
  if (k < 1) throw std::invalid_argument("SLIC: k must be >= 1");
  if (!(compactness > 0.0)) throw std::invalid_argument("SLIC: compactness must be > 0");
  if (max_iters < 1) throw std::invalid_argument("SLIC: max_iters must be >= 1");
  if (!(min_region_ratio > 0.0 && min_region_ratio < 1.0)) {
    throw std::invalid_argument("SLIC: min_region_ratio must be in (0, 1)");
  }
}

std::array<double, 3> rgb_to_lab(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  const double lr = srgb_to_linear(r), lg = srgb_to_linear(g), lb = srgb_to_linear(b);
  const double x = 0.4124564 * lr + 0.3575761 * lg + 0.1804375 * lb;
  const double y = 0.2126729 * lr + 0.7151522 * lg + 0.0721750 * lb;
  const double z = 0.0193339 * lr + 0.1191920 * lg + 0.9503041 * lb;
  const double fx = lab_f(x / 0.95047), fy = lab_f(y / 1.0), fz = lab_f(z / 1.08883);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

LabImage rgb_to_lab(const RgbImage& img) {
  LabImage lab;
  lab.width = img.width;
  lab.height = img.height;
  lab.pixels.resize(img.width * img.height);
  for (std::size_t i = 0; i < lab.pixels.size(); ++i) {
    const std::uint8_t* p = img.pixels.data() + 3 * i;
    lab.pixels[i] = rgb_to_lab(p[0], p[1], p[2]);
  }
  return lab;
}

SlicResult slic_segment(const RgbImage& img, const SlicConfig& cfg,
                        std::uint64_t /*seed*/) {
  cfg.validate();
  if (img.empty()) throw std::invalid_argument("SLIC: empty image");
  const std::size_t w = img.width, h = img.height, n = w * h;
  if (cfg.k > n) {
    throw std::invalid_argument("SLIC: k = " + std::to_string(cfg.k) +
                                " exceeds pixel count " + std::to_string(n));
  }
  const LabImage lab = rgb_to_lab(img);
  const double spacing = std::sqrt(static_cast<double>(n) / static_cast<double>(cfg.k));
  const auto [nx, ny] = grid_dims(w, h, cfg.k, spacing);

  auto gradient = [&](std::size_t x, std::size_t y) {
    const auto& l = lab.pixels[y * w + (x > 0 ? x - 1 : x)];
    const auto& r = lab.pixels[y * w + (x + 1 < w ? x + 1 : x)];
    const auto& u = lab.pixels[(y > 0 ? y - 1 : y) * w + x];
    const auto& d = lab.pixels[(y + 1 < h ? y + 1 : y) * w + x];
    return lab_dist2(l, r) + lab_dist2(u, d);
  };

  std::vector<Center> centers;
  centers.reserve(nx * ny);
  const double step_x = static_cast<double>(w) / nx, step_y = static_cast<double>(h) / ny;
  for (std::size_t j = 0; j < ny; ++j) {
    for (std::size_t i = 0; i < nx; ++i) {
      double cx = (i + 0.5) * step_x - 0.5;
      double cy = (j + 0.5) * step_y - 0.5;
      const auto px = static_cast<std::size_t>(std::clamp(std::lround(cx), 0L, static_cast<long>(w - 1)));
      const auto py = static_cast<std::size_t>(std::clamp(std::lround(cy), 0L, static_cast<long>(h - 1)));
      // Move only on a strictly lower gradient so flat regions keep the grid.
      double best = gradient(px, py);
      std::size_t bx = px, by = py;
      bool moved = false;
      for (long dy = -1; dy <= 1; ++dy) {
        for (long dx = -1; dx <= 1; ++dx) {
          const long qx = static_cast<long>(px) + dx, qy = static_cast<long>(py) + dy;
          if (qx < 0 || qy < 0 || qx >= static_cast<long>(w) || qy >= static_cast<long>(h)) continue;
          const double g = gradient(qx, qy);
          if (g < best) {
            best = g;
            bx = qx;
            by = qy;
            moved = true;
          }
        }
      }
      if (moved) {
        cx = static_cast<double>(bx);
        cy = static_cast<double>(by);
      }
      centers.push_back({lab.pixels[static_cast<std::size_t>(std::lround(cy)) * w +
                                    static_cast<std::size_t>(std::lround(cx))],
                         cx, cy});
    }
  }

  const double spatial_weight = (cfg.compactness / spacing) * (cfg.compactness / spacing);
  std::vector<std::int32_t> labels(n, -1);
  std::vector<double> dist(n);
  auto distance2 = [&](const Center& c, std::size_t x, std::size_t y) {
    const double dx = x - c.x, dy = y - c.y;
    return lab_dist2(lab.pixels[y * w + x], c.lab) + (dx * dx + dy * dy) * spatial_weight;
  };

  SlicResult result;
  for (std::size_t iter = 0; iter < cfg.max_iters; ++iter) {
    std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
    std::fill(labels.begin(), labels.end(), -1);
    for (std::size_t k = 0; k < centers.size(); ++k) {
      const Center& c = centers[k];
      const auto x0 = static_cast<std::size_t>(std::max(0.0, std::ceil(c.x - spacing)));
      const auto y0 = static_cast<std::size_t>(std::max(0.0, std::ceil(c.y - spacing)));
      const auto x1 = static_cast<std::size_t>(std::min<double>(w - 1, std::floor(c.x + spacing)));
      const auto y1 = static_cast<std::size_t>(std::min<double>(h - 1, std::floor(c.y + spacing)));
      for (std::size_t y = y0; y <= y1; ++y) {
        for (std::size_t x = x0; x <= x1; ++x) {
          const double d = distance2(c, x, y);
          if (d < dist[y * w + x]) {
            dist[y * w + x] = d;
            labels[y * w + x] = static_cast<std::int32_t>(k);
          }
        }
      }
    }
    for (std::size_t p = 0; p < n; ++p) {
      if (labels[p] >= 0) continue;
      for (std::size_t k = 0; k < centers.size(); ++k) {
        const double d = distance2(centers[k], p % w, p / w);
        if (d < dist[p]) {
          dist[p] = d;
          labels[p] = static_cast<std::int32_t>(k);
        }
      }
    }

    std::vector<std::array<double, 5>> sums(centers.size(), {0, 0, 0, 0, 0});
    std::vector<std::size_t> counts(centers.size(), 0);
    for (std::size_t p = 0; p < n; ++p) {
      auto& s = sums[labels[p]];
      const auto& v = lab.pixels[p];
      s[0] += v[0];
      s[1] += v[1];
      s[2] += v[2];
      s[3] += static_cast<double>(p % w);
      s[4] += static_cast<double>(p / w);
      ++counts[labels[p]];
    }
    double movement = 0.0;
    for (std::size_t k = 0; k < centers.size(); ++k) {
      if (counts[k] == 0) continue;
      const double inv = 1.0 / static_cast<double>(counts[k]);
      const double nx_ = sums[k][3] * inv, ny_ = sums[k][4] * inv;
      movement = std::max(movement, std::hypot(nx_ - centers[k].x, ny_ - centers[k].y));
      centers[k] = {{sums[k][0] * inv, sums[k][1] * inv, sums[k][2] * inv}, nx_, ny_};
    }
    result.iterations = iter + 1;
    if (movement < 0.5) break;
  }

  const double min_size = cfg.min_region_ratio * static_cast<double>(n) /
                          static_cast<double>(centers.size());
  result.mask = compact_labels(w, h, enforce_connectivity(w, h, labels, min_size));
  result.seeds = centers.size();
  return result;
}

SuperpixelMask compact_labels(std::size_t width, std::size_t height,
                              const std::vector<std::int32_t>& raw) {
  if (raw.size() != width * height) throw std::invalid_argument("label count mismatch");
  SuperpixelMask mask;
  mask.width = width;
  mask.height = height;
  mask.labels.resize(raw.size());
  std::map<std::int32_t, std::int32_t> remap;
  for (std::size_t p = 0; p < raw.size(); ++p) {
    auto [it, inserted] = remap.try_emplace(raw[p], static_cast<std::int32_t>(remap.size()));
    mask.labels[p] = it->second;
  }
  mask.clusters = remap.size();
  return mask;
}

std::size_t count_regions(const SuperpixelMask& mask, std::int32_t label) {
  const std::size_t w = mask.width, h = mask.height;
  std::vector<bool> seen(mask.labels.size(), false);
  std::size_t regions = 0;
  std::queue<std::size_t> queue;
  for (std::size_t start = 0; start < mask.labels.size(); ++start) {
    if (seen[start] || mask.labels[start] != label) continue;
    ++regions;
    seen[start] = true;
    queue.push(start);
    while (!queue.empty()) {
      const std::size_t p = queue.front();
      queue.pop();
      const std::size_t x = p % w, y = p / w;
      const std::size_t nbrs[4] = {x > 0 ? p - 1 : p, x + 1 < w ? p + 1 : p,
                                   y > 0 ? p - w : p, y + 1 < h ? p + w : p};
      for (std::size_t q : nbrs) {
        if (!seen[q] && mask.labels[q] == label) {
          seen[q] = true;
          queue.push(q);
        }
      }
    }
  }
  return regions;
}

bool is_connected_partition(const SuperpixelMask& mask) {
  if (mask.labels.size() != mask.width * mask.height || mask.clusters == 0) return false;
  std::vector<std::size_t> used(mask.clusters, 0);
  for (std::int32_t l : mask.labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= mask.clusters) return false;
    ++used[l];
  }
  for (std::size_t c = 0; c < mask.clusters; ++c) {
    if (used[c] == 0) return false;
    if (count_regions(mask, static_cast<std::int32_t>(c)) != 1) return false;
  }
  return true;
}

BlockRange block_range(std::size_t index, std::size_t source, std::size_t target) {
  auto edge = [&](std::size_t i) {
    return static_cast<std::size_t>(
        std::lround(static_cast<double>(i) * source / static_cast<double>(target)));
  };
  return {edge(index), edge(index + 1)};
}

std::vector<std::int32_t> downsample_labels(const SuperpixelMask& mask,
                                            std::size_t target_h,
                                            std::size_t target_w,
                                            DownsampleMethod method) {
  if (target_h == 0 || target_w == 0) {
    throw std::invalid_argument("downsample_mask: zero target dimension");
  }
  if (target_h > mask.height || target_w > mask.width) {
    throw std::invalid_argument("downsample_mask: target larger than source");
  }
  std::vector<std::int32_t> out(target_h * target_w);
  std::vector<std::size_t> votes(mask.clusters, 0);
  for (std::size_t r = 0; r < target_h; ++r) {
    const BlockRange rows = block_range(r, mask.height, target_h);
    for (std::size_t c = 0; c < target_w; ++c) {
      const BlockRange cols = block_range(c, mask.width, target_w);
      if (method == DownsampleMethod::kNearest) {
        const std::size_t sy = (rows.begin + rows.end - 1) / 2;
        const std::size_t sx = (cols.begin + cols.end - 1) / 2;
        out[r * target_w + c] = mask.at(sx, sy);
        continue;
      }
      std::fill(votes.begin(), votes.end(), 0);
      for (std::size_t y = rows.begin; y < rows.end; ++y) {
        for (std::size_t x = cols.begin; x < cols.end; ++x) ++votes[mask.at(x, y)];
      }
      // max_element returns the first maximum, i.e. the smallest label.
      out[r * target_w + c] = static_cast<std::int32_t>(
          std::max_element(votes.begin(), votes.end()) - votes.begin());
    }
  }
  return out;
}

SuperpixelMask downsample_mask(const SuperpixelMask& mask, std::size_t target_h,
                               std::size_t target_w, DownsampleMethod method) {
  return compact_labels(target_w, target_h,
                        downsample_labels(mask, target_h, target_w, method));
}

namespace {
std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  std::filesystem::path p = path;
  p.replace_extension(".txt");
  return p;
}
}  // namespace

void save_mask(const std::filesystem::path& path, const SuperpixelMask& mask) {
  if (mask.clusters > 65536) {
    throw std::invalid_argument("mask has more than 65536 clusters");
  }
  GrayImage img;
  img.width = mask.width;
  img.height = mask.height;
  img.bit_depth = 16;
  img.pixels.reserve(mask.labels.size());
  for (std::int32_t l : mask.labels) img.pixels.push_back(static_cast<std::uint16_t>(l));
  png::write_gray(path, img);
  std::ofstream side(sidecar_path(path));
  side << "C=" << mask.clusters << "\n";
  if (!side) throw ImageError("cannot write " + sidecar_path(path).string());
}

SuperpixelMask load_mask(const std::filesystem::path& path) {
  const GrayImage img = png::read_gray(path);
  SuperpixelMask mask;
  mask.width = img.width;
  mask.height = img.height;
  mask.labels.assign(img.pixels.begin(), img.pixels.end());
  std::int32_t max_label = -1;
  for (auto l : mask.labels) max_label = std::max(max_label, l);
  mask.clusters = static_cast<std::size_t>(max_label + 1);
  std::ifstream side(sidecar_path(path));
  std::string line;
  if (side && std::getline(side, line) && line.rfind("C=", 0) == 0) {
    const std::size_t c = std::stoul(line.substr(2));
    if (c < mask.clusters) {
      throw ImageError(path.string() + ": sidecar cluster count below max label");
    }
    mask.clusters = c;
  }
  return mask;
}

}  // namespace vesselcouple

#include "vesselcouple/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>

#include "vesselcouple/metrics.hpp"
#include "vesselcouple/rng.hpp"

namespace vesselcouple {

namespace {

// Stream tags for Rng::mix.
constexpr std::uint64_t kInitTag = 1;
constexpr std::uint64_t kStepTag = 2;
constexpr std::uint64_t kValTag = 3;
constexpr std::uint64_t kOrderTag = 4;

Tensor as_batch(const Tensor& chw) {
  Shape s{1};
  s.insert(s.end(), chw.shape().begin(), chw.shape().end());
  return Tensor::from_data(s, std::vector<double>(chw.data().begin(), chw.data().end()));
}

Tensor map_plane(const Tensor& plane, std::size_t w, std::size_t h,
                 const std::vector<std::ptrdiff_t>& source, double fill) {
  std::vector<double> out(w * h);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = source[i] < 0 ? fill : plane[static_cast<std::size_t>(source[i])];
  }
  return Tensor::from_data({h, w}, std::move(out));
}

// Source index per destination pixel, or -1 outside the frame.
std::vector<std::ptrdiff_t> flip_map(std::size_t w, std::size_t h) {
  std::vector<std::ptrdiff_t> src(w * h);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      src[y * w + x] = static_cast<std::ptrdiff_t>(y * w + (w - 1 - x));
    }
  }
  return src;
}

std::vector<std::ptrdiff_t> affine_map(std::size_t w, std::size_t h, double angle_rad,
                                       double tx, double ty) {
  std::vector<std::ptrdiff_t> src(w * h);
  const double cx = 0.5 * (static_cast<double>(w) - 1.0);
  const double cy = 0.5 * (static_cast<double>(h) - 1.0);
  const double cs = std::cos(angle_rad), sn = std::sin(angle_rad);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      // Inverse rotation of the translated destination coordinate.
      const double dx = static_cast<double>(x) - cx - tx;
      const double dy = static_cast<double>(y) - cy - ty;
      const long sx = std::lround(cs * dx + sn * dy + cx);
      const long sy = std::lround(-sn * dx + cs * dy + cy);
      const bool inside = sx >= 0 && sy >= 0 && sx < static_cast<long>(w) &&
                          sy < static_cast<long>(h);
      src[y * w + x] = inside ? static_cast<std::ptrdiff_t>(sy * static_cast<long>(w) + sx) : -1;
    }
  }
  return src;
}

void remap(AugmentedSample& s, const std::vector<std::ptrdiff_t>& src) {
  const std::size_t w = s.image.width, h = s.image.height;
  std::vector<std::uint8_t> pixels(s.image.pixels.size(), 0);
  for (std::size_t i = 0; i < w * h; ++i) {
    if (src[i] < 0) continue;
    const auto j = static_cast<std::size_t>(src[i]);
    std::copy_n(s.image.pixels.begin() + 3 * j, 3, pixels.begin() + 3 * i);
  }
  s.image.pixels = std::move(pixels);
  s.label.l_a = map_plane(s.label.l_a, w, h, src, 0.0);
  s.label.l_v = map_plane(s.label.l_v, w, h, src, 0.0);
  s.label.l_bv = map_plane(s.label.l_bv, w, h, src, 0.0);
  if (s.mask) {
    const auto fresh = static_cast<std::int32_t>(s.mask->clusters);
    std::vector<std::int32_t> raw(w * h);
    for (std::size_t i = 0; i < raw.size(); ++i) {
      raw[i] = src[i] < 0 ? fresh : s.mask->labels[static_cast<std::size_t>(src[i])];
    }
    s.mask = compact_labels(w, h, raw);
  }
}

}  // namespace

void AugmentConfig::validate() const {
  if (!(max_rotation_deg >= 0.0 && max_rotation_deg <= 180.0)) {
    throw std::invalid_argument("augment: max_rotation_deg must be in [0, 180]");
  }
  if (!(max_translation >= 0.0 && max_translation < 1.0)) {
    throw std::invalid_argument("augment: max_translation must be in [0, 1)");
  }
  if (!(max_cutout >= 0.0 && max_cutout <= 1.0)) {
    throw std::invalid_argument("augment: max_cutout must be in [0, 1]");
  }
}

AugmentedSample augment(const RgbImage& image, const AVLabel& label, const AugmentConfig& cfg,
                        std::uint64_t seed, const SuperpixelMask* mask) {
  cfg.validate();
  validate_label(label);
  const std::size_t w = image.width, h = image.height;
  if (label.width() != w || label.height() != h) {
    throw ImageError("augment: image and label sizes differ");
  }
  if (mask && (mask->width != w || mask->height != h)) {
    throw ImageError("augment: image and mask sizes differ");
  }

  // Every draw happens regardless of the toggles so that switching one
  // transform off leaves the others unchanged.
  Rng rng(seed);
  const bool flip = rng.bernoulli(0.5);
  const double scale = rng.uniform(0.9, 1.1);
  const double shift = rng.uniform(-0.05, 0.05);
  const double angle = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg);
  const double tx = rng.uniform(-cfg.max_translation, cfg.max_translation) * static_cast<double>(w);
  const double ty = rng.uniform(-cfg.max_translation, cfg.max_translation) * static_cast<double>(h);
  const auto side = static_cast<std::size_t>(rng.uniform() * cfg.max_cutout * static_cast<double>(w));
  const std::size_t cut_x = rng.index(w);
  const std::size_t cut_y = rng.index(h);

  AugmentedSample out{image, label, {}};
  if (mask) out.mask = *mask;

  if (cfg.flip && flip) remap(out, flip_map(w, h));
  if (cfg.intensity) {
    for (auto& p : out.image.pixels) {
      const double v = std::clamp(p / 255.0 * scale + shift, 0.0, 1.0);
      p = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  }
  if (cfg.affine) {
    remap(out, affine_map(w, h, angle * std::numbers::pi / 180.0, tx, ty));
  }
  if (cfg.cutout && side > 0) {
    for (std::size_t y = cut_y; y < std::min(h, cut_y + side); ++y) {
      for (std::size_t x = cut_x; x < std::min(w, cut_x + side); ++x) {
        std::fill_n(out.image.pixels.begin() + 3 * (y * w + x), 3, std::uint8_t{0});
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  adam.validate();
  weights.validate();
  contrastive.validate();
  augment.validate();
  if (batch_size != 1) throw std::invalid_argument("train: only batch_size = 1 is supported");
  if (patience < 1) throw std::invalid_argument("train: patience must be >= 1");
  if (max_epochs < 1) throw std::invalid_argument("train: max_epochs must be >= 1");
}

void TrainConfig::apply_fast() {
  patience = 20;
  max_epochs = std::min<std::size_t>(max_epochs, 300);
}

void split_train_val(std::vector<TrainSample> all, double val_fraction, std::uint64_t seed,
                     std::vector<TrainSample>& train, std::vector<TrainSample>& val) {
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
    throw std::invalid_argument("val_fraction must be in [0, 1)");
  }
  Rng rng(seed);
  for (std::size_t i = all.size(); i > 1; --i) {
    std::swap(all[i - 1], all[rng.index(i)]);
  }
  std::size_t n_val = static_cast<std::size_t>(std::lround(val_fraction * static_cast<double>(all.size())));
  if (val_fraction > 0.0 && all.size() >= 2) n_val = std::clamp<std::size_t>(n_val, 1, all.size() - 1);
  train.clear();
  val.clear();
  for (std::size_t i = 0; i < all.size(); ++i) {
    (i < n_val ? val : train).push_back(std::move(all[i]));
  }
}

std::vector<bool> vessel_anchor_mask(const AVLabel& label, std::size_t h, std::size_t w) {
  const std::size_t H = label.height(), W = label.width();
  std::vector<bool> out(h * w, false);
  for (std::size_t r = 0; r < h; ++r) {
    const BlockRange rows = block_range(r, H, h);
    for (std::size_t c = 0; c < w; ++c) {
      const BlockRange cols = block_range(c, W, w);
      for (std::size_t y = rows.begin; y < rows.end && !out[r * w + c]; ++y) {
        for (std::size_t x = cols.begin; x < cols.end; ++x) {
          if (label.l_bv[y * W + x] > 0.5) {
            out[r * w + c] = true;
            break;
          }
        }
      }
    }
  }
  return out;
}

TrainResult train(const std::vector<TrainSample>& train_set,
                  const std::vector<TrainSample>& val, const NetConfig& net_cfg,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  net_cfg.validate();
  if (train_set.empty()) throw TrainError("train: empty training set");
  const std::size_t div = net_cfg.divisor();
  for (const auto* set : {&train_set, &val}) {
    for (const TrainSample& s : *set) {
      validate_label(s.label);
      if (s.image.width != s.label.width() || s.image.height != s.label.height() ||
          s.mask.width != s.image.width || s.mask.height != s.image.height) {
        throw TrainError("train: " + s.name + ": image, label and mask sizes differ");
      }
      if (s.image.width % div || s.image.height % div) {
        throw TrainError("train: " + s.name + ": size " + std::to_string(s.image.width) + "x" +
                         std::to_string(s.image.height) + " is not a multiple of " +
                         std::to_string(div));
      }
    }
  }

  UNet net(net_cfg, Rng::mix(cfg.seed, kInitTag));
  Adam opt(net.parameters(), cfg.adam);
  TrainResult result{net.clone(), 0, std::numeric_limits<double>::infinity(), {}, false, 0};

  struct Prepared {
    Tensor x;
    SuperpixelMask mask;
    std::vector<bool> eligible;
  };
  const std::size_t bh_div = div;
  auto prepare = [&](const RgbImage& img, const AVLabel& label, const SuperpixelMask& mask) {
    Prepared p;
    p.x = as_batch(preprocess(img, cfg.preprocess));
    const std::size_t bh = img.height / bh_div, bw = img.width / bh_div;
    p.mask = downsample_mask(mask, bh, bw, cfg.downsample);
    if (cfg.vessel_anchors) p.eligible = vessel_anchor_mask(label, bh, bw);
    return p;
  };
  std::vector<Prepared> val_inputs;
  for (const TrainSample& s : val) val_inputs.push_back(prepare(s.image, s.label, s.mask));
  std::vector<Prepared> plain_inputs;
  if (!cfg.augment.any()) {
    for (const TrainSample& s : train_set) plain_inputs.push_back(prepare(s.image, s.label, s.mask));
  }

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng order_rng(Rng::mix(Rng::mix(cfg.seed, kOrderTag), epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng.index(i)]);

    EpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
      const TrainSample& s = train_set[order[pos]];
      const std::uint64_t step_seed =
          Rng::mix(Rng::mix(cfg.seed, kStepTag), (epoch - 1) * order.size() + pos);
      Prepared in;
      AVLabel label;
      if (cfg.augment.any()) {
        AugmentedSample a = augment(s.image, s.label, cfg.augment, step_seed, &s.mask);
        in = prepare(a.image, a.label, *a.mask);
        label = std::move(a.label);
      } else {
        in = plain_inputs[order[pos]];
        label = s.label;
      }
      ContrastiveConfig cc = cfg.contrastive;
      cc.seed = Rng::mix(cfg.contrastive.seed, step_seed);
      const UNet::Output out = net.forward(in.x);
      LossBreakdown lb = total_loss(out.pred, label, out.bottleneck, in.mask, cfg.weights, cc,
                                    in.eligible);
      const double total = lb.total.item();
      if (!std::isfinite(total)) {
        Tape::current().clear();
        throw TrainError("train: non-finite loss at epoch " + std::to_string(epoch) + " on " +
                         s.name);
      }
      backward(lb.total);
      if (!opt.step()) {
        ++result.skipped_steps;
        std::fprintf(stderr, "warning: skipped step with non-finite gradient (epoch %zu, %s)\n",
                     epoch, s.name.c_str());
      }
      rec.bce += lb.bce;
      rec.c3 += lb.c3;
      rec.intra += lb.intra;
      rec.total += total;
    }
    const double steps = static_cast<double>(order.size());
    rec.bce /= steps;
    rec.c3 /= steps;
    rec.intra /= steps;
    rec.total /= steps;

    double monitored = rec.total;
    if (!val.empty()) {
      NoGradGuard no_grad;
      double val_total = 0.0;
      EvalSamples samples;
      for (std::size_t i = 0; i < val.size(); ++i) {
        ContrastiveConfig cc = cfg.contrastive;
        cc.seed = Rng::mix(Rng::mix(cfg.contrastive.seed, kValTag), i);
        const UNet::Output out = net.forward(val_inputs[i].x);
        val_total += total_loss(out.pred, val[i].label, out.bottleneck, val_inputs[i].mask,
                                cfg.weights, cc, val_inputs[i].eligible)
                         .total.item();
        samples.append(collect_av(out.pred, val[i].label, CrossingMode::kExclude));
      }
      rec.val_total = val_total / static_cast<double>(val.size());
      rec.av_acc = evaluate(samples, Protocol::kAV).accuracy;
      monitored = *rec.val_total;
    }

    if (monitored < result.best_val) {
      result.best_val = monitored;
      result.best_epoch = epoch;
      result.model = net.clone();
    }
    rec.best_val = result.best_val;
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (epoch - result.best_epoch >= cfg.patience) {
      result.early_stopped = epoch < cfg.max_epochs;
      break;
    }
  }
  return result;
}

void write_history_csv(const std::filesystem::path& path,
                       const std::vector<EpochRecord>& history) {
  std::FILE* f = std::fopen(path.string().c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  std::fprintf(f, "epoch,bce,c3,intra,total,val_total,av_acc\n");
  auto opt = [&](const std::optional<double>& v) {
    if (v) std::fprintf(f, "%.17g", *v);
  };
  for (const EpochRecord& r : history) {
    std::fprintf(f, "%zu,%.17g,%.17g,%.17g,%.17g,", r.epoch, r.bce, r.c3, r.intra, r.total);
    opt(r.val_total);
    std::fputc(',', f);
    opt(r.av_acc);
    std::fputc('\n', f);
  }
  const bool ok = std::ferror(f) == 0;
  if (std::fclose(f) != 0 || !ok) throw std::runtime_error("write failed for " + path.string());
}

UNet::Output predict(const UNet& net, const RgbImage& image, const PreprocessOptions& options) {
  NoGradGuard no_grad;
  const Tensor chw = preprocess(image, options);
  const std::size_t div = net.config().divisor();
  const std::size_t w = image.width, h = image.height;
  const std::size_t pw = (w + div - 1) / div * div, ph = (h + div - 1) / div * div;
  const std::size_t c = chw.dim(0);
  std::vector<double> padded(c * ph * pw, 0.0);
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t y = 0; y < h; ++y) {
      std::copy_n(chw.data().begin() + (k * h + y) * w, w, padded.begin() + (k * ph + y) * pw);
    }
  }
  UNet::Output out = net.forward(Tensor::from_data({1, c, ph, pw}, std::move(padded)));
  if (pw == w && ph == h) return out;
  auto crop = [&](const Tensor& t) {
    std::vector<double> v(h * w);
    for (std::size_t y = 0; y < h; ++y) {
      std::copy_n(t.data().begin() + y * pw, w, v.begin() + y * w);
    }
    return Tensor::from_data({h, w}, std::move(v));
  };
  out.pred = {crop(out.pred.y_a), crop(out.pred.y_v), crop(out.pred.y_bv)};
  return out;
}

}  // namespace vesselcouple

#include "vesselcouple/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_map>

#include "vesselcouple/ops.hpp"
#include "vesselcouple/rng.hpp"

namespace vesselcouple {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw TensorError(std::string(what) + ": shape mismatch " +
                      shape_to_string(a.shape()) + " vs " +
                      shape_to_string(b.shape()));
  }
}

void require_pred_label(const PredictionTriple& pred, const AVLabel& label) {
  require_same_shape(pred.y_a, pred.y_v, "prediction");
  require_same_shape(pred.y_a, pred.y_bv, "prediction");
  require_same_shape(pred.y_bv, label.l_bv, "prediction/label");
  require_same_shape(label.l_a, label.l_bv, "label");
  require_same_shape(label.l_v, label.l_bv, "label");
}

double log_sum_exp(const double* v, std::size_t n) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, v[i]);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(v[i] - m);
  return m + std::log(s);
}

}  // namespace

PixelClass classify(double l_a, double l_v, double l_bv) {
  const bool a = l_a > 0.5, v = l_v > 0.5;
  if (a && v) return PixelClass::kCrossing;
  if (a) return PixelClass::kArtery;
  if (v) return PixelClass::kVein;
  return l_bv > 0.5 ? PixelClass::kUncertain : PixelClass::kBackground;
}

void validate_label(const AVLabel& label) {
  require_same_shape(label.l_a, label.l_bv, "label");
  require_same_shape(label.l_v, label.l_bv, "label");
  auto a = label.l_a.data(), v = label.l_v.data(), bv = label.l_bv.data();
  for (std::size_t i = 0; i < bv.size(); ++i) {
    for (double x : {a[i], v[i], bv[i]}) {
      if (x != 0.0 && x != 1.0) throw TensorError("label: non-binary value");
    }
    if (a[i] > bv[i] || v[i] > bv[i]) {
      throw TensorError("label: artery/vein pixel " + std::to_string(i) +
                        " is not marked as vessel");
    }
  }
}

std::size_t repair_label(AVLabel& label) {
  require_same_shape(label.l_a, label.l_bv, "label");
  require_same_shape(label.l_v, label.l_bv, "label");
  std::vector<double> bv(label.l_bv.data().begin(), label.l_bv.data().end());
  auto a = label.l_a.data(), v = label.l_v.data();
  std::size_t fixed = 0;
  for (std::size_t i = 0; i < bv.size(); ++i) {
    if ((a[i] > 0.5 || v[i] > 0.5) && bv[i] < 0.5) {
      bv[i] = 1.0;
      ++fixed;
    }
  }
  if (fixed) label.l_bv = Tensor::from_data(label.l_bv.shape(), std::move(bv));
  return fixed;
}

void LossWeights::validate() const {
  if (!(std::isfinite(lambda1) && lambda1 >= 0.0 && std::isfinite(lambda2) &&
        lambda2 >= 0.0)) {
    throw std::invalid_argument("loss weights must be finite and >= 0");
  }
}

void ContrastiveConfig::validate() const {
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be > 0");
  if (anchors_per_image < 1 || positives_per_anchor < 1 || negatives_per_anchor < 1) {
    throw std::invalid_argument("contrastive sample counts must be >= 1");
  }
}

Tensor bce(const Tensor& y, const Tensor& l) {
  require_same_shape(y, l, "bce");
  std::vector<double> one_minus_l(l.numel());
  for (std::size_t i = 0; i < l.numel(); ++i) one_minus_l[i] = 1.0 - l[i];
  const Tensor not_l = Tensor::from_data(l.shape(), std::move(one_minus_l));

  const Tensor yc = ops::clamp(y, kLogClampEpsilon, 1.0 - kLogClampEpsilon);
  const Tensor log_y = ops::log(yc);
  const Tensor log_1my = ops::log(ops::add_scalar(ops::scalar_mul(yc, -1.0), 1.0));
  const Tensor pointwise = ops::add(ops::mul(l, log_y), ops::mul(not_l, log_1my));
  return ops::scalar_mul(ops::reduce_mean(pointwise), -1.0);
}

Tensor c3_fuse(const PredictionTriple& pred, const AVLabel& label) {
  require_pred_label(pred, label);
  if (checking_enabled()) validate_label(label);

  const Shape& shape = label.l_bv.shape();
  const std::size_t n = label.l_bv.numel();
  std::vector<double> artery(n, 0.0), vein(n, 0.0), crossing(n, 0.0), passthrough(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const bool a = label.l_a[i] > 0.5, v = label.l_v[i] > 0.5;
    if (a && v) {
      crossing[i] = 1.0;
    } else if (a) {
      artery[i] = 1.0;
    } else if (v) {
      vein[i] = 1.0;
    } else {
      passthrough[i] = 1.0;
    }
  }
  // Each pixel gets exactly one nonzero selector, so the masked sum equals
  // the selected branch bit-for-bit.
  const Tensor min_a = ops::elementwise_min(pred.y_a, pred.y_bv);
  const Tensor min_v = ops::elementwise_min(pred.y_v, pred.y_bv);
  const Tensor min_av = ops::elementwise_min(min_a, pred.y_v);
  Tensor fused = ops::mul(Tensor::from_data(shape, std::move(artery)), min_a);
  fused = ops::add(fused, ops::mul(Tensor::from_data(shape, std::move(vein)), min_v));
  fused = ops::add(fused, ops::mul(Tensor::from_data(shape, std::move(crossing)), min_av));
  fused = ops::add(fused, ops::mul(Tensor::from_data(shape, std::move(passthrough)), pred.y_bv));
  return fused;
}

Tensor c3_loss(const PredictionTriple& pred, const AVLabel& label) {
  return bce(c3_fuse(pred, label), label.l_bv);
}

Tensor base_bce_loss(const PredictionTriple& pred, const AVLabel& label) {
  require_pred_label(pred, label);
  const Tensor sum = ops::add(ops::add(bce(pred.y_a, label.l_a), bce(pred.y_v, label.l_v)),
                              bce(pred.y_bv, label.l_bv));
  return ops::scalar_mul(sum, 1.0 / 3.0);
}

IntraLossResult intra_loss(const Tensor& features, const SuperpixelMask& mask,
                           const ContrastiveConfig& cfg,
                           const std::vector<bool>& eligible) {
  cfg.validate();
  std::size_t channels = 0, h = 0, w = 0;
  if (features.rank() == 3) {
    channels = features.dim(0);
    h = features.dim(1);
    w = features.dim(2);
  } else if (features.rank() == 4 && features.dim(0) == 1) {
    channels = features.dim(1);
    h = features.dim(2);
    w = features.dim(3);
  } else {
    throw TensorError("intra_loss: features must be [C,h,w] or [1,C,h,w], got " +
                      shape_to_string(features.shape()));
  }
  if (mask.height != h || mask.width != w) {
    throw TensorError("intra_loss: mask is " + std::to_string(mask.height) + "x" +
                      std::to_string(mask.width) + ", features are " +
                      std::to_string(h) + "x" + std::to_string(w));
  }
  const std::size_t n = h * w;
  if (!eligible.empty() && eligible.size() != n) {
    throw TensorError("intra_loss: eligibility mask size mismatch");
  }

  // Members of each cluster in raster order; complements are built lazily.
  std::unordered_map<std::int32_t, std::vector<std::size_t>> members;
  for (std::size_t p = 0; p < n; ++p) members[mask.labels[p]].push_back(p);
  std::unordered_map<std::int32_t, std::vector<std::size_t>> outsiders;
  auto complement = [&](std::int32_t c) -> const std::vector<std::size_t>& {
    auto it = outsiders.find(c);
    if (it != outsiders.end()) return it->second;
    std::vector<std::size_t> out;
    out.reserve(n - members[c].size());
    for (std::size_t p = 0; p < n; ++p) {
      if (mask.labels[p] != c) out.push_back(p);
    }
    return outsiders.emplace(c, std::move(out)).first->second;
  };

  std::vector<std::size_t> candidates;
  for (std::size_t p = 0; p < n; ++p) {
    if (eligible.empty() || eligible[p]) candidates.push_back(p);
  }

  struct Anchor {
    std::size_t position;
    std::vector<std::size_t> others;  // positives first
  };
  const std::size_t num_pos = cfg.positives_per_anchor;
  const std::size_t num_neg = cfg.negatives_per_anchor;
  std::vector<Anchor> anchors;
  IntraLossResult result;
  Rng rng(cfg.seed);
  for (std::size_t a = 0; a < cfg.anchors_per_image && !candidates.empty(); ++a) {
    const std::size_t p = candidates[rng.index(candidates.size())];
    const std::int32_t c = mask.labels[p];
    const auto& same = members[c];
    if (same.size() < 2 || same.size() == n) {
      ++result.anchors_skipped;
      continue;
    }
    const std::size_t self = static_cast<std::size_t>(
        std::lower_bound(same.begin(), same.end(), p) - same.begin());
    Anchor anchor{p, {}};
    anchor.others.reserve(num_pos + num_neg);
    for (std::size_t k = 0; k < num_pos; ++k) {
      std::size_t r = rng.index(same.size() - 1);
      if (r >= self) ++r;
      anchor.others.push_back(same[r]);
    }
    const auto& other = complement(c);
    for (std::size_t k = 0; k < num_neg; ++k) {
      anchor.others.push_back(other[rng.index(other.size())]);
    }
    anchors.push_back(std::move(anchor));
  }
  if (candidates.empty()) result.anchors_skipped = cfg.anchors_per_image;
  result.anchors_used = anchors.size();

  if (anchors.empty()) {
    result.degenerate = true;
    // Keeps the loss on the tape with a zero gradient.
    result.loss = make_op_result({}, {0.0}, {features},
                                 [](std::span<const double>, std::span<std::vector<double>*>) {});
    return result;
  }

  // Channel vectors at each position, normalized with a smooth guard.
  constexpr double kNormEps = 1e-12;
  auto fd = features.data();
  auto feat = [&](std::size_t c, std::size_t p) { return fd[c * n + p]; };
  std::vector<double> unit(n * channels), norms(n);
  for (std::size_t p = 0; p < n; ++p) {
    double s = 0.0;
    for (std::size_t c = 0; c < channels; ++c) s += feat(c, p) * feat(c, p);
    norms[p] = std::sqrt(s + kNormEps);
    for (std::size_t c = 0; c < channels; ++c) unit[p * channels + c] = feat(c, p) / norms[p];
  }
  auto dot = [&](std::size_t p, std::size_t q) {
    double s = 0.0;
    for (std::size_t c = 0; c < channels; ++c) s += unit[p * channels + c] * unit[q * channels + c];
    return s;
  };

  const double inv_tau = 1.0 / cfg.temperature;
  const std::size_t m = num_pos + num_neg;
  // Per anchor, d loss / d similarity for each sampled partner.
  std::vector<std::vector<double>> dsim(anchors.size(), std::vector<double>(m));
  double total = 0.0;
  std::vector<double> sims(m);
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const Anchor& anc = anchors[i];
    for (std::size_t j = 0; j < m; ++j) sims[j] = dot(anc.position, anc.others[j]) * inv_tau;
    const double lse_all = log_sum_exp(sims.data(), m);
    const double lse_pos = log_sum_exp(sims.data(), num_pos);
    total += lse_all - lse_pos;
    for (std::size_t j = 0; j < m; ++j) {
      double g = std::exp(sims[j] - lse_all);
      if (j < num_pos) g -= std::exp(sims[j] - lse_pos);
      dsim[i][j] = g;
    }
  }
  const double inv_count = 1.0 / static_cast<double>(anchors.size());

  result.loss = make_op_result(
      {}, {total * inv_count}, {features},
      [anchors = std::move(anchors), dsim = std::move(dsim), unit = std::move(unit),
       norms = std::move(norms), channels, n, inv_tau,
       inv_count](std::span<const double> g, std::span<std::vector<double>*> grads) {
        auto& gf = *grads[0];
        // Gradient w.r.t. the normalized vectors first.
        std::vector<double> gu(n * channels, 0.0);
        const double scale = g[0] * inv_count * inv_tau;
        for (std::size_t i = 0; i < anchors.size(); ++i) {
          const std::size_t a = anchors[i].position;
          for (std::size_t j = 0; j < anchors[i].others.size(); ++j) {
            const std::size_t q = anchors[i].others[j];
            const double d = dsim[i][j] * scale;
            for (std::size_t c = 0; c < channels; ++c) {
              gu[a * channels + c] += d * unit[q * channels + c];
              gu[q * channels + c] += d * unit[a * channels + c];
            }
          }
        }
        // Through u = f / sqrt(|f|^2 + eps): df = (gu - u (u . gu)) / norm.
        for (std::size_t p = 0; p < n; ++p) {
          double ug = 0.0;
          for (std::size_t c = 0; c < channels; ++c) {
            ug += unit[p * channels + c] * gu[p * channels + c];
          }
          const double inv_norm = 1.0 / norms[p];
          for (std::size_t c = 0; c < channels; ++c) {
            gf[c * n + p] += (gu[p * channels + c] - unit[p * channels + c] * ug) * inv_norm;
          }
        }
      });
  return result;
}

LossBreakdown total_loss(const PredictionTriple& pred, const AVLabel& label,
                         const Tensor& features, const SuperpixelMask& mask,
                         const LossWeights& weights, const ContrastiveConfig& cfg,
                         const std::vector<bool>& eligible) {
  weights.validate();
  const Tensor base = base_bce_loss(pred, label);
  const Tensor c3 = c3_loss(pred, label);
  const IntraLossResult intra = intra_loss(features, mask, cfg, eligible);

  LossBreakdown out;
  out.bce = base.item();
  out.c3 = c3.item();
  out.intra = intra.loss.item();
  out.intra_degenerate = intra.degenerate;
  out.total = ops::add(ops::add(base, ops::scalar_mul(c3, weights.lambda1)),
                       ops::scalar_mul(intra.loss, weights.lambda2));
  return out;
}

}  // namespace vesselcouple

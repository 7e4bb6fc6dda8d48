#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "vesselcouple/superpixel.hpp"
#include "vesselcouple/tensor.hpp"

namespace vesselcouple {

/// Post-sigmoid probabilities, each [H, W].
struct PredictionTriple {
  Tensor y_a;
  Tensor y_v;
  Tensor y_bv;
};

/// Binary ground truth, each [H, W], with l_a <= l_bv and l_v <= l_bv.
struct AVLabel {
  Tensor l_a;
  Tensor l_v;
  Tensor l_bv;

  std::size_t height() const { return l_bv.dim(0); }
  std::size_t width() const { return l_bv.dim(1); }
};

enum class PixelClass : std::uint8_t {
  kBackground,
  kArtery,
  kVein,
  kCrossing,
  kUncertain,
};

PixelClass classify(double l_a, double l_v, double l_bv);

/// Throws TensorError when shapes differ, values are not 0/1, or an artery
/// or vein pixel is not marked as vessel.
void validate_label(const AVLabel& label);

/// Sets l_bv = 1 wherever l_a or l_v is set; returns the pixels changed.
std::size_t repair_label(AVLabel& label);

struct LossWeights {
  double lambda1 = 1.0;
  double lambda2 = 0.1;

  void validate() const;
};

struct ContrastiveConfig {
  double temperature = 0.1;
  std::size_t anchors_per_image = 256;
  std::size_t positives_per_anchor = 4;
  std::size_t negatives_per_anchor = 16;
  std::uint64_t seed = 0;

  void validate() const;
};

inline constexpr double kLogClampEpsilon = 1e-7;

/// Mean binary cross-entropy; y is clamped to [eps, 1 - eps] before the logs.
Tensor bce(const Tensor& y, const Tensor& l);

/// Channel-coupled fusion map:
///   artery (1,0)      -> min(y_a, y_bv)
///   vein (0,1)        -> min(y_v, y_bv)
///   crossing (1,1)    -> min(y_a, y_v, y_bv)
///   otherwise (0,0)   -> y_bv
Tensor c3_fuse(const PredictionTriple& pred, const AVLabel& label);

/// bce(c3_fuse(pred, label), l_bv).
Tensor c3_loss(const PredictionTriple& pred, const AVLabel& label);

/// Equal-weight mean of the three per-channel BCE terms.
Tensor base_bce_loss(const PredictionTriple& pred, const AVLabel& label);

struct IntraLossResult {
  Tensor loss;
  std::size_t anchors_used = 0;
  std::size_t anchors_skipped = 0;
  /// Set when every anchor was skipped and the loss is a constant zero.
  bool degenerate = false;
};

/// Superpixel-guided pixel contrastive loss over a [C, h, w] (or [1, C, h, w])
/// feature map. Channel vectors are L2-normalized; similarities are dot
/// products over the temperature; per anchor the loss is
///   -log(sum_pos exp(s) / (sum_pos exp(s) + sum_neg exp(s)))
/// and the result is the mean over anchors that had both positives and
/// negatives. `eligible`, when non-empty, restricts anchor positions.
IntraLossResult intra_loss(const Tensor& features, const SuperpixelMask& mask,
                           const ContrastiveConfig& cfg,
                           const std::vector<bool>& eligible = {});

struct LossBreakdown {
  Tensor total;
  double bce = 0.0;
  double c3 = 0.0;
  double intra = 0.0;
  bool intra_degenerate = false;
};

/// base_bce_loss + lambda1 * c3_loss + lambda2 * intra_loss.
LossBreakdown total_loss(const PredictionTriple& pred, const AVLabel& label,
                         const Tensor& features, const SuperpixelMask& mask,
                         const LossWeights& weights, const ContrastiveConfig& cfg,
                         const std::vector<bool>& eligible = {});

}  // namespace vesselcouple

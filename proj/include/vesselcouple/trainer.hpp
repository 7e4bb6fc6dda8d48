#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vesselcouple/data_io.hpp"
#include "vesselcouple/image.hpp"
#include "vesselcouple/losses.hpp"
#include "vesselcouple/model.hpp"
#include "vesselcouple/superpixel.hpp"

namespace vesselcouple {

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentConfig {
  bool flip = true;
  bool intensity = true;
  bool affine = true;
  bool cutout = true;
  double max_rotation_deg = 15.0;
  double max_translation = 0.05;  // fraction of each dimension
  double max_cutout = 0.10;       // side as a fraction of the width

  void validate() const;
  bool any() const { return flip || intensity || affine || cutout; }
};

struct AugmentedSample {
  RgbImage image;
  AVLabel label;
  std::optional<SuperpixelMask> mask;
};

/// Random flip, intensity jitter, rotation + translation and cutout, all
/// drawn from `seed`. Geometric transforms apply to the image, label and
/// (when given) superpixel mask; intensity and cutout touch the image only.
/// Labels and masks are warped nearest-neighbor; pixels mapped from outside
/// the frame become background in the label and a fresh cluster in the mask.
AugmentedSample augment(const RgbImage& image, const AVLabel& label, const AugmentConfig& cfg,
                        std::uint64_t seed, const SuperpixelMask* mask = nullptr);

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  AdamConfig adam;
  std::size_t batch_size = 1;
  std::size_t patience = 200;
  std::size_t max_epochs = 1000;
  LossWeights weights;
  ContrastiveConfig contrastive;
  std::uint64_t seed = 0;
  AugmentConfig augment;
  /// Restrict contrastive anchors to bottleneck cells whose block contains
  /// a vessel pixel.
  bool vessel_anchors = false;
  DownsampleMethod downsample = DownsampleMethod::kMajority;
  PreprocessOptions preprocess;

  void validate() const;
  /// Desk-scale schedule: patience 20, at most 300 epochs.
  void apply_fast();
};

struct TrainSample {
  std::string name;
  RgbImage image;
  AVLabel label;
  SuperpixelMask mask;
  std::optional<Tensor> fov;  // [H, W]
};

/// Deterministic split: a seeded shuffle, then the first
/// round(val_fraction * n) samples (at least one when n >= 2) go to
/// validation.
void split_train_val(std::vector<TrainSample> all, double val_fraction, std::uint64_t seed,
                     std::vector<TrainSample>& train, std::vector<TrainSample>& val);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double bce = 0.0;       // means over the epoch's training steps
  double c3 = 0.0;
  double intra = 0.0;
  double total = 0.0;
  std::optional<double> val_total;  // empty without a validation set
  std::optional<double> av_acc;  // validation A/V accuracy, micro-averaged
  double best_val = 0.0;         // best monitored value so far
};

struct TrainResult {
  UNet model;  // parameters from the best monitored epoch
  std::size_t best_epoch = 0;
  double best_val = 0.0;
  std::vector<EpochRecord> history;
  bool early_stopped = false;
  std::size_t skipped_steps = 0;  // optimizer steps dropped for non-finite grads
};

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Batch-size-1 training loop. Early stopping monitors the mean validation
/// total loss, or the training total when `val` is empty. Image sizes must
/// be multiples of the network divisor.
TrainResult train(const std::vector<TrainSample>& train_set,
                  const std::vector<TrainSample>& val, const NetConfig& net_cfg,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Writes epoch,bce,c3,intra,total,val_total,av_acc with %.17g values.
void write_history_csv(const std::filesystem::path& path,
                       const std::vector<EpochRecord>& history);

/// Gradient-free inference on an RGB image of any size; the input is
/// zero-padded to the network divisor and the outputs cropped back.
UNet::Output predict(const UNet& net, const RgbImage& image,
                     const PreprocessOptions& options = {});

/// Contrastive anchors eligible under `vessel_anchors`: bottleneck cells
/// (h x w) whose source block contains any vessel pixel.
std::vector<bool> vessel_anchor_mask(const AVLabel& label, std::size_t h, std::size_t w);

}  // namespace vesselcouple

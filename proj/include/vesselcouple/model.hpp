#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "vesselcouple/losses.hpp"
#include "vesselcouple/tensor.hpp"

namespace vesselcouple {

struct NetConfig {
  std::size_t depth = 3;          // encoder levels L
  std::size_t base_channels = 8;  // channels at level 1; doubles per level
  std::size_t in_channels = 3;
  std::size_t out_channels = 3;   // artery, vein, vessel

  void validate() const;
  /// Spatial dims must be divisible by this.
  std::size_t divisor() const { return std::size_t{1} << (depth - 1); }
  bool operator==(const NetConfig&) const = default;
};

struct Conv {
  Tensor weight;  // [out, in, k, k]
  Tensor bias;    // [out]
};

/// UNet-style encoder-decoder. Each encoder level is two 3x3 conv + ReLU
/// blocks followed by 2x2 max pooling (except the last level); the decoder
/// upsamples, concatenates the matching skip, and applies two conv blocks; a
/// final 1x1 conv + sigmoid gives the three probability maps.
class UNet {
 public:
  UNet(const NetConfig& config, std::uint64_t seed);

  struct Output {
    PredictionTriple pred;
    /// Deepest encoder feature map, [1, c_L, H / 2^(L-1), W / 2^(L-1)].
    Tensor bottleneck;
  };

  /// x: [1, in_channels, H, W].
  Output forward(const Tensor& x) const;

  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;
  static std::size_t expected_parameter_count(const NetConfig& config);
  const NetConfig& config() const { return config_; }

  /// Independent copy of all parameters.
  UNet clone() const;

  void save(const std::filesystem::path& path) const;
  static UNet load(const std::filesystem::path& path);

 private:
  UNet() = default;

  NetConfig config_;
  std::vector<Conv> encoder_;  // 2 per level
  std::vector<Conv> decoder_;  // 2 per upsampling level, deepest first
  Conv head_;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;
};

/// One bias-corrected Adam update of `param` in place.
void adam_step(std::span<double> param, std::span<const double> grad, AdamState& state,
               const AdamConfig& cfg);

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg);

  /// Applies one update from the accumulated grads and clears them. A
  /// non-finite gradient skips the whole step and returns false (throws
  /// TensorError in checking mode).
  bool step();
  void zero_grad();
  std::uint64_t steps() const { return steps_; }

 private:
  std::vector<Tensor> params_;
  std::vector<AdamState> states_;
  AdamConfig cfg_;
  std::uint64_t steps_ = 0;
};

}  // namespace vesselcouple

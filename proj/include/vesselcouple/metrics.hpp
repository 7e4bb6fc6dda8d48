#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vesselcouple/losses.hpp"
#include "vesselcouple/tensor.hpp"

namespace vesselcouple {

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o);
  bool operator==(const ConfusionCounts&) const = default;
};

enum class Protocol { kAV, kBV };
std::string to_string(Protocol p);

/// Version tag for the evaluation protocol definitions below.
inline constexpr const char* kProtocolVersion = "av-excl-crossing/bv-thr0.5/v1";

/// Every metric is nullopt when its denominator is zero.
struct MetricReport {
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  std::optional<double> accuracy;
  std::optional<double> f1;
  std::optional<double> miou;
  std::optional<double> auroc;
  std::size_t evaluated_pixels = 0;
  Protocol protocol = Protocol::kAV;
  ConfusionCounts counts;
};

/// Mann-Whitney AUROC from average ranks; ties count one half. nullopt when
/// either class is absent.
std::optional<double> auroc(std::span<const double> scores,
                            std::span<const std::uint8_t> labels);

/// Per-pixel decisions of one protocol: binary truth, binary prediction, and a
/// ranking score (NaN excludes the pixel from AUROC only). Samples from
/// several images concatenate for micro-averaging.
struct EvalSamples {
  std::vector<std::uint8_t> truth;
  std::vector<std::uint8_t> predicted;
  std::vector<double> scores;

  void append(const EvalSamples& other);
};

ConfusionCounts count(const EvalSamples& s);
MetricReport evaluate(const EvalSamples& s, Protocol protocol);

enum class CrossingMode {
  kExclude,  // crossing pixels are not evaluated
  kBoth,     // crossing pixels count as correct for either prediction
};

/// Evaluation set: ground-truth artery-only and vein-only pixels. Predicted
/// artery iff y_a > y_v; artery is the positive class; score y_a - y_v.
EvalSamples collect_av(const PredictionTriple& pred, const AVLabel& label,
                       CrossingMode crossing = CrossingMode::kExclude);

/// Evaluation set: pixels inside the FOV (all when `fov` is null). Vessel is
/// positive; y_bv thresholded at 0.5; score y_bv.
EvalSamples collect_bv(const Tensor& y_bv, const Tensor& l_bv,
                       const Tensor* fov = nullptr);

MetricReport av_classification_metrics(const PredictionTriple& pred,
                                       const AVLabel& label,
                                       CrossingMode crossing = CrossingMode::kExclude);
MetricReport bv_segmentation_metrics(const Tensor& y_bv, const Tensor& l_bv,
                                     const Tensor* fov = nullptr);

/// Mean of each metric across reports, skipping undefined entries.
MetricReport macro_average(std::span<const MetricReport> reports);

}  // namespace vesselcouple

#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "vesselcouple/config.hpp"
#include "vesselcouple/data_io.hpp"
#include "vesselcouple/metrics.hpp"
#include "vesselcouple/trainer.hpp"

namespace vesselcouple {

struct LoadOptions {
  SlicConfig slic;
  bool strict = false;          // reject non-{0,255} label channels
  std::size_t resize_width = 0; // 0 keeps the native size
  std::size_t pad_multiple = 1; // zero-pad images and labels up to a multiple
  bool use_cached_masks = true;
  bool slic_on_raw = false;     // segment the raw RGB instead of the enhanced image
  PreprocessOptions preprocess;
};

/// SLIC on the contrast-enhanced image the network sees, or on the raw RGB.
SuperpixelMask superpixels_for(const RgbImage& img, const SlicConfig& slic,
                               const PreprocessOptions& preprocess, bool raw = false);

/// Decodes every entry and attaches a superpixel mask (cached mask file when
/// present and allowed, otherwise SLIC on the possibly resized and padded
/// image). Resizing is bilinear for images and nearest for labels and FOVs.
std::vector<TrainSample> load_samples(const std::vector<DatasetEntry>& entries,
                                      const LoadOptions& options,
                                      std::size_t* repaired = nullptr);

std::vector<DatasetEntry> entries_with_split(const std::vector<DatasetEntry>& all, Split split);

struct DataSplits {
  std::vector<TrainSample> train, val, test;
};

/// Train/val/test samples. Without val entries, validation is split off the
/// train entries by cfg.val_fraction (seeded by cfg.train.seed).
DataSplits prepare_splits(const std::vector<DatasetEntry>& entries, const RunConfig& cfg,
                          const LoadOptions& options, std::size_t* repaired = nullptr);

// ---------------------------------------------------------------------------
// Evaluation

struct ImageEvaluation {
  std::string name;
  MetricReport av;
  MetricReport bv;
};

struct EvaluationReport {
  std::vector<ImageEvaluation> images;
  MetricReport av_micro, av_macro, bv_micro, bv_macro;
  CrossingMode crossing = CrossingMode::kExclude;
};

class Evaluator {
 public:
  explicit Evaluator(CrossingMode crossing) : crossing_(crossing) {}
  void add(const std::string& name, const PredictionTriple& pred, const AVLabel& label,
           const Tensor* fov);
  EvaluationReport finish() const;

 private:
  CrossingMode crossing_;
  std::vector<ImageEvaluation> images_;
  EvalSamples av_all_, bv_all_;
};

std::string report_to_json(const EvaluationReport& report, int indent = 2);
std::string metric_to_json(const MetricReport& report);

/// Predicts with `net` on every sample and evaluates.
EvaluationReport evaluate_model(const UNet& net, const std::vector<TrainSample>& samples,
                                const PreprocessOptions& preprocess, CrossingMode crossing);

// ---------------------------------------------------------------------------
// Runs and sweeps

struct RunOutcome {
  TrainResult train;
  EvaluationReport eval;  // on the test samples, or validation when none
};

/// Train on `train_set` (validation `val`), then evaluate the best model.
RunOutcome run_experiment(const RunConfig& cfg, const std::vector<TrainSample>& train_set,
                          const std::vector<TrainSample>& val,
                          const std::vector<TrainSample>& test,
                          const EpochCallback& on_epoch = {});

enum class SweepParam { kLambda1, kLambda2, kClusters };
SweepParam sweep_param_from_string(const std::string& s);
std::string to_string(SweepParam p);

/// Comma-separated numbers; empty items or an empty list are errors.
std::vector<double> parse_value_list(const std::string& text);

struct SweepRow {
  double value = 0.0;
  bool ok = false;
  std::string error;
  std::size_t best_epoch = 0;
  std::size_t epochs = 0;
  double best_val = 0.0;
  MetricReport av;  // micro-averaged
  MetricReport bv;
};

/// One seeded run per value, `jobs` at a time; rows in value order. A failing
/// run is recorded and the sweep continues.
std::vector<SweepRow> run_sweep(const RunConfig& base, SweepParam param,
                                const std::vector<double>& values,
                                const std::vector<DatasetEntry>& entries,
                                const LoadOptions& load, std::size_t jobs = 1);

std::string sweep_csv_header();
std::string sweep_csv_row(SweepParam param, const SweepRow& row);

// ---------------------------------------------------------------------------
// Fusion-map rendering

struct FuseVisualization {
  GrayImage c3;      // 8-bit fused map
  RgbImage branches; // per-pixel branch in the label palette
};

/// Fused map as grayscale plus the branch taken per pixel: artery magenta,
/// vein cyan, crossing white, any other pixel blue.
FuseVisualization render_fuse_viz(const PredictionTriple& pred, const AVLabel& label);

}  // namespace vesselcouple

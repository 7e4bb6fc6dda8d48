// vesselcouple command-line entry point.
//
// Exit codes: 0 success, 1 validation error (bad flags, config or inputs
// rejected before work starts), 2 runtime failure.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "vesselcouple/config.hpp"
#include "vesselcouple/data_io.hpp"
#include "vesselcouple/grad_suite.hpp"
#include "vesselcouple/losses.hpp"
#include "vesselcouple/model.hpp"
#include "vesselcouple/ops.hpp"
#include "vesselcouple/pipeline.hpp"
#include "vesselcouple/rng.hpp"
#include "vesselcouple/superpixel.hpp"
#include "vesselcouple/trainer.hpp"
#include "vesselcouple/vtsr.hpp"

namespace fs = std::filesystem;
using namespace vesselcouple;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

void require_file(const fs::path& p, const char* what) {
  if (!fs::is_regular_file(p)) throw UsageError(std::string(what) + " not found: " + p.string());
}

PredictionTriple read_prediction(const std::string& composite, const std::string& a,
                                 const std::string& v, const std::string& bv) {
  if (!composite.empty()) {
    require_file(composite, "prediction");
    return decode_prediction(png::read_rgb(composite));
  }
  if (a.empty() || v.empty() || bv.empty()) {
    throw UsageError("give --pred or all of --pred-a, --pred-v, --pred-bv");
  }
  auto plane = [](const std::string& path) {
    require_file(path, "prediction channel");
    const GrayImage g = png::read_gray(path);
    const double scale = g.bit_depth == 16 ? 65535.0 : 255.0;
    std::vector<double> out(g.pixels.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = g.pixels[i] / scale;
    return Tensor::from_data({g.height, g.width}, std::move(out));
  };
  return {plane(a), plane(v), plane(bv)};
}

AVLabel read_label(const std::string& path, bool strict) {
  require_file(path, "label");
  LabelDecodeReport report;
  AVLabel label = decode_av_label(png::read_rgb(path), &report, strict);
  if (report.repaired) {
    std::fprintf(stderr, "warning: %s: %zu artery/vein pixels lacked the vessel bit (repaired)\n",
                 path.c_str(), report.repaired);
  }
  if (report.non_binary) {
    std::fprintf(stderr, "warning: %s: %zu channel samples outside {0, 255} (binarized at 128)\n",
                 path.c_str(), report.non_binary);
  }
  return label;
}

void check_same_shape(const PredictionTriple& p, const AVLabel& l) {
  if (p.y_a.shape() != l.l_bv.shape()) {
    throw UsageError("prediction " + shape_to_string(p.y_a.shape()) + " and label " +
                     shape_to_string(l.l_bv.shape()) + " sizes differ");
  }
}

// Training options shared by train and sweep: config file, then explicit
// flags on top.
struct TrainFlags {
  std::string data;
  std::string layout = "flat";
  std::string config;
  bool fast = false;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr, lambda1, lambda2;
  std::optional<std::size_t> epochs, patience, clusters;
  bool vessel_anchors = false;
  bool no_augment = false;
  bool strict = false;
  std::size_t resize_width = 0;
  bool print_config = false;
  bool slic_raw = false;

  void add_to(CLI::App* app) {
    app->add_option("--data", data, "Dataset root")->required();
    app->add_option("--layout", layout, "Dataset layout: rite, lesav, hrf, flat")
        ->check(CLI::IsMember({"rite", "lesav", "hrf", "flat"}));
    app->add_option("--config", config, "TOML-like config file");
    app->add_flag("--fast", fast, "Desk-scale schedule (patience 20, at most 300 epochs)");
    app->add_option("--seed", seed, "Run seed");
    app->add_option("--lr", lr, "Adam learning rate");
    app->add_option("--lambda1", lambda1, "C3 loss weight");
    app->add_option("--lambda2", lambda2, "Contrastive loss weight");
    app->add_option("--epochs", epochs, "Maximum epochs");
    app->add_option("--patience", patience, "Early-stopping patience in epochs");
    app->add_option("--clusters", clusters, "SLIC superpixel count");
    app->add_flag("--vessel-anchors", vessel_anchors,
                  "Draw contrastive anchors only near vessel pixels");
    app->add_flag("--no-augment", no_augment, "Disable all augmentations");
    app->add_flag("--strict", strict, "Reject label channels outside {0, 255}");
    app->add_option("--resize-width", resize_width,
                    "Resize images to this width (bilinear; labels nearest)");
    app->add_flag("--slic-raw", slic_raw, "Segment the raw RGB instead of the enhanced image");
    app->add_flag("--print-config", print_config, "Print the resolved config and exit");
  }

  RunConfig resolve() const {
    RunConfig cfg;
    if (!config.empty()) {
      require_file(config, "config");
      cfg = load_config(config, cfg);
    }
    if (fast) cfg.fast = true;
    if (seed) cfg.train.seed = *seed;
    if (lr) cfg.train.adam.lr = *lr;
    if (lambda1) cfg.train.weights.lambda1 = *lambda1;
    if (lambda2) cfg.train.weights.lambda2 = *lambda2;
    if (epochs) cfg.train.max_epochs = *epochs;
    if (patience) cfg.train.patience = *patience;
    if (clusters) cfg.slic.k = *clusters;
    if (vessel_anchors) cfg.train.vessel_anchors = true;
    if (no_augment) cfg.train.augment.flip = cfg.train.augment.intensity =
        cfg.train.augment.affine = cfg.train.augment.cutout = false;
    if (cfg.fast) cfg.train.apply_fast();
    cfg.validate();
    return cfg;
  }

  LoadOptions load_options(const RunConfig& cfg) const {
    LoadOptions opt;
    opt.slic = cfg.slic;
    opt.strict = strict;
    opt.resize_width = resize_width;
    opt.pad_multiple = cfg.net.divisor();
    opt.slic_on_raw = slic_raw;
    opt.preprocess = cfg.train.preprocess;
    return opt;
  }
};

// ---------------------------------------------------------------------------

int cmd_slic(const std::string& input, const SlicConfig& cfg, std::uint64_t seed, bool raw,
             const std::string& out) {
  require_file(input, "input image");
  cfg.validate();
  const RgbImage img = raw ? png::read_rgb(input) : contrast_enhanced(png::read_rgb(input));
  const SlicResult r = slic_segment(img, cfg, seed);
  save_mask(out, r.mask);
  std::cout << json{{"clusters", r.mask.clusters},
                    {"seeds", r.seeds},
                    {"iterations", r.iterations},
                    {"width", r.mask.width},
                    {"height", r.mask.height}}
                   .dump()
            << "\n";
  return kExitOk;
}

struct LossFlags {
  std::string pred, pred_a, pred_v, pred_bv, label, features, mask, out, config;
  std::optional<double> lambda1, lambda2;
  std::uint64_t seed = 0;
  bool strict = false;
};

int cmd_loss(const LossFlags& f) {
  RunConfig cfg;
  if (!f.config.empty()) {
    require_file(f.config, "config");
    cfg = load_config(f.config, cfg);
  }
  if (f.lambda1) cfg.train.weights.lambda1 = *f.lambda1;
  if (f.lambda2) cfg.train.weights.lambda2 = *f.lambda2;
  cfg.train.weights.validate();
  if (f.features.empty() != f.mask.empty()) {
    throw UsageError("--features and --mask go together");
  }
  const PredictionTriple pred = read_prediction(f.pred, f.pred_a, f.pred_v, f.pred_bv);
  const AVLabel label = read_label(f.label, f.strict);
  check_same_shape(pred, label);

  NoGradGuard no_grad;
  const double base = base_bce_loss(pred, label).item();
  const double c3 = c3_loss(pred, label).item();
  json j{{"bce", base}, {"c3", c3}};
  const auto& w = cfg.train.weights;
  if (!f.features.empty()) {
    require_file(f.features, "features");
    require_file(f.mask, "mask");
    Tensor feat = vtsr::load(f.features);
    if (feat.rank() != 3 && !(feat.rank() == 4 && feat.dim(0) == 1)) {
      throw UsageError("features must be [C, h, w] or [1, C, h, w], got " +
                       shape_to_string(feat.shape()));
    }
    const std::size_t fh = feat.dim(feat.rank() - 2), fw = feat.dim(feat.rank() - 1);
    const SuperpixelMask mask = downsample_mask(load_mask(f.mask), fh, fw);
    ContrastiveConfig cc = cfg.train.contrastive;
    cc.seed = f.seed;
    const IntraLossResult intra = intra_loss(feat, mask, cc);
    if (intra.degenerate) {
      std::fprintf(stderr, "warning: contrastive loss degenerate (no anchor had both positives "
                           "and negatives); reported as 0\n");
    }
    j["intra"] = intra.loss.item();
    j["total"] = base + w.lambda1 * c3 + w.lambda2 * intra.loss.item();
  } else {
    j["intra"] = nullptr;
    j["total"] = base + w.lambda1 * c3;
  }
  const std::string text = j.dump(2);
  if (!f.out.empty()) write_text(f.out, text + "\n");
  std::cout << text << "\n";
  return kExitOk;
}

struct EvalFlags {
  std::string data, layout = "flat", split = "test", pred_dir, gt_dir, fov_dir, checkpoint, out;
  std::string protocol = "both";
  std::string include_crossing = "exclude";
  bool strict = false;
  std::size_t resize_width = 0;
  bool local_contrast = true;
};

// Drops the protocol that was not asked for from every level of the report.
json filter_protocol(json report, const std::string& protocol) {
  if (protocol == "both") return report;
  const char* drop = protocol == "av" ? "bv" : "av";
  for (auto& img : report["images"]) img.erase(drop);
  for (auto& [_, agg] : report["aggregate"].items()) agg.erase(drop);
  return report;
}

int cmd_eval(const EvalFlags& f) {
  CrossingMode crossing;
  if (f.include_crossing == "both") crossing = CrossingMode::kBoth;
  else if (f.include_crossing == "exclude") crossing = CrossingMode::kExclude;
  else throw UsageError("--include-crossing takes both or exclude");

  Evaluator ev(crossing);
  if (!f.gt_dir.empty()) {
    if (!f.data.empty() || !f.checkpoint.empty()) {
      throw UsageError("--gt-dir goes with --pred-dir, not with --data or --checkpoint");
    }
    if (f.pred_dir.empty()) throw UsageError("--gt-dir needs --pred-dir");
    if (!fs::is_directory(f.gt_dir)) throw UsageError("label directory not found: " + f.gt_dir);
    std::vector<fs::path> labels;
    for (const auto& de : fs::directory_iterator(f.gt_dir)) {
      if (de.is_regular_file() && de.path().extension() == ".png") labels.push_back(de.path());
    }
    std::sort(labels.begin(), labels.end());
    if (labels.empty()) throw UsageError("no label PNGs under " + f.gt_dir);
    for (const fs::path& lp : labels) {
      const std::string name = lp.stem().string();
      const fs::path pp = fs::path(f.pred_dir) / (name + ".png");
      require_file(pp, "prediction");
      const PredictionTriple pred = decode_prediction(png::read_rgb(pp));
      const AVLabel label = read_label(lp.string(), f.strict);
      check_same_shape(pred, label);
      std::optional<Tensor> fov;
      if (!f.fov_dir.empty()) {
        const fs::path fp = fs::path(f.fov_dir) / (name + ".png");
        require_file(fp, "FOV mask");
        fov = load_fov(fp);
      }
      ev.add(name, pred, label, fov ? &*fov : nullptr);
    }
  } else {
    if (f.data.empty()) throw UsageError("give --gt-dir or --data");
    if (f.pred_dir.empty() == f.checkpoint.empty()) {
      throw UsageError("give exactly one of --pred-dir or --checkpoint");
    }
    const Split split = split_from_string(f.split);
    const auto entries =
        entries_with_split(load_dataset(f.data, layout_from_string(f.layout)), split);
    if (entries.empty()) throw UsageError("no " + f.split + " entries under " + f.data);
    if (!f.checkpoint.empty()) {
      require_file(f.checkpoint, "checkpoint");
      const UNet net = UNet::load(f.checkpoint);
      LoadOptions opt;
      opt.strict = f.strict;
      opt.resize_width = f.resize_width;
      opt.use_cached_masks = true;
      PreprocessOptions pp;
      pp.local_contrast = f.local_contrast;
      for (const TrainSample& s : load_samples(entries, opt)) {
        const UNet::Output out = predict(net, s.image, pp);
        ev.add(s.name, out.pred, s.label, s.fov ? &*s.fov : nullptr);
      }
    } else {
      for (const DatasetEntry& e : entries) {
        const fs::path p = fs::path(f.pred_dir) / (e.name + ".png");
        require_file(p, "prediction");
        const PredictionTriple pred = decode_prediction(png::read_rgb(p));
        const AVLabel label = read_label(e.label.string(), f.strict);
        check_same_shape(pred, label);
        std::optional<Tensor> fov;
        if (e.fov) fov = load_fov(*e.fov);
        ev.add(e.name, pred, label, fov ? &*fov : nullptr);
      }
    }
  }
  const json report = filter_protocol(json::parse(report_to_json(ev.finish(), -1)), f.protocol);
  const std::string text = report.dump(2);
  if (!f.out.empty()) write_text(f.out, text + "\n");
  std::cout << text << "\n";
  return kExitOk;
}

int cmd_train(const TrainFlags& f, const std::string& out_dir) {
  const RunConfig cfg = f.resolve();
  if (f.print_config) {
    std::cout << format_config(cfg);
    return kExitOk;
  }
  if (out_dir.empty()) throw UsageError("--out is required");
  if (!fs::is_directory(f.data)) throw UsageError("dataset directory not found: " + f.data);
  const auto entries = load_dataset(f.data, layout_from_string(f.layout), true);
  std::size_t repaired = 0;
  const DataSplits d = prepare_splits(entries, cfg, f.load_options(cfg), &repaired);
  if (repaired) std::fprintf(stderr, "warning: repaired %zu label pixels\n", repaired);
  std::fprintf(stderr, "train %zu, val %zu, test %zu images\n", d.train.size(), d.val.size(),
               d.test.size());

  fs::create_directories(out_dir);
  write_text(fs::path(out_dir) / "config.toml", format_config(cfg));
  const RunOutcome o = run_experiment(cfg, d.train, d.val, d.test, [](const EpochRecord& r) {
    std::fprintf(stderr, "epoch %zu total %.6f val %s\n", r.epoch, r.total,
                 r.val_total ? std::to_string(*r.val_total).c_str() : "-");
  });
  o.train.model.save(fs::path(out_dir) / "checkpoint.vckp");
  write_history_csv(fs::path(out_dir) / "history.csv", o.train.history);
  const json summary{{"best_epoch", o.train.best_epoch},
                     {"best_val", o.train.best_val},
                     {"epochs", o.train.history.size()},
                     {"early_stopped", o.train.early_stopped},
                     {"skipped_steps", o.train.skipped_steps},
                     {"evaluated_on", !d.test.empty() ? "test" : "val"},
                     {"evaluation", json::parse(report_to_json(o.eval, -1))}};
  write_text(fs::path(out_dir) / "summary.json", summary.dump(2) + "\n");
  std::cout << summary.dump(2) << "\n";
  return kExitOk;
}

int cmd_sweep(const TrainFlags& f, const std::string& param_name, const std::string& values_text,
              const std::string& out, std::size_t jobs) {
  const SweepParam param = sweep_param_from_string(param_name);
  const std::vector<double> values = parse_value_list(values_text);
  const RunConfig cfg = f.resolve();
  if (f.print_config) {
    std::cout << format_config(cfg);
    return kExitOk;
  }
  if (!fs::is_directory(f.data)) throw UsageError("dataset directory not found: " + f.data);
  const auto entries = load_dataset(f.data, layout_from_string(f.layout), true);
  const auto rows = run_sweep(cfg, param, values, entries, f.load_options(cfg), jobs);

  std::string csv = sweep_csv_header() + "\n";
  for (const auto& r : rows) csv += sweep_csv_row(param, r) + "\n";
  if (!out.empty()) {
    write_text(out, csv);
  }
  std::cout << csv;
  return std::all_of(rows.begin(), rows.end(), [](const SweepRow& r) { return r.ok; })
             ? kExitOk
             : kExitRuntime;
}

struct SynthFlags {
  std::size_t n = 25;
  std::size_t size = 128;
  std::string out;
  std::uint64_t seed = 0;
  double val_fraction = 0.2;
  double test_fraction = 0.0;
  double noise = 0.03;
  std::size_t depth = 4;
  std::size_t k = 20;
  bool masks = true;
  bool slic_raw = false;
};

int cmd_synth(const SynthFlags& f) {
  if (f.n == 0) throw UsageError("--n must be >= 1");
  if (!(f.val_fraction >= 0 && f.test_fraction >= 0 && f.val_fraction + f.test_fraction < 1.0)) {
    throw UsageError("--val-fraction and --test-fraction must be >= 0 and sum below 1");
  }
  SyntheticTreeConfig base;
  base.width = base.height = f.size;
  base.noise = f.noise;
  base.branching_depth = f.depth;
  base.validate();
  SlicConfig slic;
  slic.k = f.k;
  slic.validate();

  const fs::path root = f.out;
  fs::create_directories(root / "images");
  fs::create_directories(root / "labels");
  if (f.masks) fs::create_directories(root / "masks");
  const auto n_val = static_cast<std::size_t>(std::lround(f.val_fraction * static_cast<double>(f.n)));
  const auto n_test = static_cast<std::size_t>(std::lround(f.test_fraction * static_cast<double>(f.n)));
  std::vector<DatasetEntry> entries;
  for (std::size_t i = 0; i < f.n; ++i) {
    SyntheticTreeConfig cfg = base;
    cfg.seed = Rng::mix(f.seed, i);
    const SyntheticSample s = generate_synthetic(cfg);
    char name[32];
    std::snprintf(name, sizeof name, "synth_%03zu", i);
    DatasetEntry e;
    e.name = name;
    e.image = root / "images" / (e.name + ".png");
    e.label = root / "labels" / (e.name + ".png");
    png::write_rgb(e.image, s.image);
    png::write_rgb(e.label, encode_av_label(s.label));
    if (f.masks) {
      e.mask = root / "masks" / (e.name + ".png");
      save_mask(*e.mask, superpixels_for(s.image, slic, {}, f.slic_raw));
    }
    // Trailing images are held out so that a prefix of the dataset keeps
    // its role when --n grows.
    e.split = i + n_test + n_val < f.n ? Split::kTrain : i + n_test < f.n ? Split::kVal : Split::kTest;
    entries.push_back(std::move(e));
  }
  write_manifest(root, entries);
  std::cout << json{{"images", f.n}, {"out", root.string()}}.dump() << "\n";
  return kExitOk;
}

int cmd_fuse_viz(const std::string& pred, const std::string& pa, const std::string& pv,
                 const std::string& pbv, const std::string& label_path, const std::string& out,
                 std::string overlay) {
  const PredictionTriple p = read_prediction(pred, pa, pv, pbv);
  const AVLabel label = read_label(label_path, false);
  check_same_shape(p, label);
  if (overlay.empty()) {
    const fs::path o(out);
    overlay = (o.parent_path() / (o.stem().string() + "_branches.png")).string();
  }
  const FuseVisualization viz = render_fuse_viz(p, label);
  png::write_gray(out, viz.c3);
  png::write_rgb(overlay, viz.branches);
  std::cout << json{{"c3", out}, {"branches", overlay}}.dump() << "\n";
  return kExitOk;
}

int cmd_grad_check(const std::string& scope_name, std::size_t seeds, std::uint64_t seed,
                   bool corrupt_min) {
  const GradScope scope = grad_scope_from_string(scope_name);
  if (seeds == 0) throw UsageError("--seeds must be >= 1");
  ops::testing::set_corrupt_min_backward(corrupt_min);
  const auto results = run_grad_suite(scope, seeds, seed);
  ops::testing::set_corrupt_min_backward(false);
  bool all = true;
  for (const auto& r : results) {
    std::printf("%-20s max_rel_err %.3e  tol %.0e  trials %zu  rejected %zu  %s\n",
                r.name.c_str(), r.max_rel_error, r.tolerance, r.trials, r.rejected,
                r.passed ? "PASS" : "FAIL");
    all = all && r.passed;
  }
  std::printf("%s\n", all ? "all gradient checks passed" : "gradient check FAILED");
  return all ? kExitOk : kExitRuntime;
}

int cmd_features(const std::string& checkpoint, const std::string& input, const std::string& out,
                 const std::string& dtype, bool local_contrast) {
  require_file(checkpoint, "checkpoint");
  require_file(input, "input image");
  const UNet net = UNet::load(checkpoint);
  PreprocessOptions pp;
  pp.local_contrast = local_contrast;
  const UNet::Output o = predict(net, png::read_rgb(input), pp);
  const Tensor& b = o.bottleneck;
  const Tensor chw = Tensor::from_data({b.dim(1), b.dim(2), b.dim(3)},
                                       std::vector<double>(b.data().begin(), b.data().end()));
  vtsr::save(out, chw, dtype == "f32" ? vtsr::DType::kF32 : vtsr::DType::kF64);
  std::cout << json{{"shape", chw.shape()}, {"out", out}}.dump() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Channel-coupled vessel consistency and superpixel contrastive losses for "
               "retinal artery/vein classification"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  // slic
  auto* slic = app.add_subcommand("slic", "Superpixel mask of an RGB image");
  std::string slic_in, slic_out;
  SlicConfig slic_cfg;
  std::uint64_t slic_seed = 0;
  slic->add_option("--input", slic_in, "Input PNG")->required();
  slic->add_option("--out", slic_out, "Output 16-bit mask PNG")->required();
  slic->add_option("--k", slic_cfg.k, "Requested superpixel count");
  slic->add_option("--m", slic_cfg.compactness, "Compactness");
  slic->add_option("--max-iters", slic_cfg.max_iters, "Maximum k-means iterations");
  slic->add_option("--min-region", slic_cfg.min_region_ratio,
                   "Smallest kept region as a fraction of the mean cluster size");
  slic->add_option("--seed", slic_seed, "Seed (recorded; SLIC is deterministic)");
  bool slic_raw = false;
  slic->add_flag("--raw", slic_raw, "Segment the raw RGB instead of the enhanced image");

  // loss
  auto* loss = app.add_subcommand("loss", "Loss terms for a prediction/label pair");
  LossFlags lf;
  loss->add_option("--pred", lf.pred, "Prediction composite PNG (R=artery, G=vein, B=vessel)");
  loss->add_option("--pred-a", lf.pred_a, "Artery probability PNG");
  loss->add_option("--pred-v", lf.pred_v, "Vein probability PNG");
  loss->add_option("--pred-bv", lf.pred_bv, "Vessel probability PNG");
  loss->add_option("--label", lf.label, "Label PNG")->required();
  loss->add_option("--features", lf.features, "Feature map (VTSR) for the contrastive term");
  loss->add_option("--mask", lf.mask, "Superpixel mask PNG for the contrastive term");
  loss->add_option("--lambda1", lf.lambda1, "C3 loss weight");
  loss->add_option("--lambda2", lf.lambda2, "Contrastive loss weight");
  loss->add_option("--seed", lf.seed, "Contrastive sampling seed");
  loss->add_option("--config", lf.config, "Config file");
  loss->add_option("--out", lf.out, "Also write the JSON here");
  loss->add_flag("--strict", lf.strict, "Reject label channels outside {0, 255}");

  // eval
  auto* eval = app.add_subcommand("eval", "A/V classification and vessel segmentation metrics");
  EvalFlags ef;
  eval->add_option("--pred-dir", ef.pred_dir, "Directory of <name>.png prediction composites");
  eval->add_option("--gt-dir", ef.gt_dir, "Directory of <name>.png labels");
  eval->add_option("--fov-dir", ef.fov_dir, "Directory of <name>.png FOV masks");
  eval->add_option("--data", ef.data, "Dataset root (instead of --gt-dir)");
  eval->add_option("--layout", ef.layout, "Dataset layout")
      ->check(CLI::IsMember({"rite", "lesav", "hrf", "flat"}));
  eval->add_option("--split", ef.split, "Split to evaluate")
      ->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--checkpoint", ef.checkpoint, "Predict with this checkpoint (with --data)");
  eval->add_option("--protocol", ef.protocol, "av, bv or both")
      ->check(CLI::IsMember({"av", "bv", "both"}));
  eval->add_option("--out", ef.out, "Write report.json here");
  eval->add_flag("--include-crossing{both}", ef.include_crossing,
                 "Crossing pixels: both (correct under either class) or exclude");
  eval->add_flag("--strict", ef.strict, "Reject label channels outside {0, 255}");
  eval->add_option("--resize-width", ef.resize_width, "Resize before predicting");
  eval->add_flag("!--no-local-contrast", ef.local_contrast, "Plain standardization only");

  // train
  auto* tr = app.add_subcommand("train", "Train the network");
  TrainFlags tf;
  std::string train_out;
  tf.add_to(tr);
  tr->add_option("--out", train_out, "Run directory");

  // sweep
  auto* sw = app.add_subcommand("sweep", "One training run per parameter value");
  TrainFlags sf;
  std::string sweep_param, sweep_values, sweep_out;
  std::size_t jobs = 1;
  sf.add_to(sw);
  sw->add_option("--param", sweep_param, "lambda1, lambda2 or clusters")
      ->required()
      ->check(CLI::IsMember({"lambda1", "lambda2", "clusters"}));
  sw->add_option("--values", sweep_values, "Comma-separated values")->required();
  sw->add_option("--out", sweep_out, "CSV output path");
  sw->add_option("--jobs", jobs, "Concurrent runs")->check(CLI::PositiveNumber);

  // synth
  auto* syn = app.add_subcommand("synth", "Synthetic vascular-tree dataset (flat layout)");
  SynthFlags yf;
  syn->add_option("--n", yf.n, "Number of images");
  syn->add_option("--size", yf.size, "Image width and height");
  syn->add_option("--out", yf.out, "Output directory")->required();
  syn->add_option("--seed", yf.seed, "Dataset seed");
  syn->add_option("--val-fraction", yf.val_fraction, "Fraction marked val");
  syn->add_option("--test-fraction", yf.test_fraction, "Fraction marked test");
  syn->add_option("--noise", yf.noise, "Gaussian noise sigma");
  syn->add_option("--depth", yf.depth, "Branching depth");
  syn->add_option("--k", yf.k, "Superpixel count for the cached masks");
  syn->add_flag("!--no-masks", yf.masks, "Skip cached superpixel masks");
  syn->add_flag("--slic-raw", yf.slic_raw, "Cached masks from the raw RGB");

  // fuse-viz
  auto* fv = app.add_subcommand("fuse-viz", "Render the fused C3 map and its branch overlay");
  std::string fv_pred, fv_a, fv_v, fv_bv, fv_label, fv_out, fv_overlay;
  fv->add_option("--pred", fv_pred, "Prediction composite PNG");
  fv->add_option("--pred-a", fv_a, "Artery probability PNG");
  fv->add_option("--pred-v", fv_v, "Vein probability PNG");
  fv->add_option("--pred-bv", fv_bv, "Vessel probability PNG");
  fv->add_option("--label", fv_label, "Label PNG")->required();
  fv->add_option("--out", fv_out, "Fused map PNG")->required();
  fv->add_option("--overlay", fv_overlay, "Branch overlay PNG (default <out>_branches.png)");

  // grad-check
  auto* gc = app.add_subcommand("grad-check", "Finite-difference gradient suites");
  std::string gc_scope = "ops";
  std::size_t gc_seeds = 100;
  std::uint64_t gc_seed = 0;
  bool gc_corrupt = false;
  gc->add_option("--scope", gc_scope, "ops, losses or end2end")
      ->check(CLI::IsMember({"ops", "losses", "end2end"}));
  gc->add_option("--seeds", gc_seeds, "Random fixtures per entry");
  gc->add_option("--seed", gc_seed, "Base seed");
  gc->add_flag("--corrupt-min-backward", gc_corrupt,
               "Mutation fixture: swap the routing of min gradients");

  // features
  auto* ft = app.add_subcommand("features", "Dump the deepest encoder feature map as VTSR");
  std::string ft_ckpt, ft_in, ft_out, ft_dtype = "f64";
  bool ft_lc = true;
  ft->add_option("--checkpoint", ft_ckpt, "Checkpoint")->required();
  ft->add_option("--input", ft_in, "Input PNG")->required();
  ft->add_option("--out", ft_out, "Output VTSR")->required();
  ft->add_option("--dtype", ft_dtype, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
  ft->add_flag("!--no-local-contrast", ft_lc, "Plain standardization only");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (*slic) return cmd_slic(slic_in, slic_cfg, slic_seed, slic_raw, slic_out);
    if (*loss) return cmd_loss(lf);
    if (*eval) return cmd_eval(ef);
    if (*tr) return cmd_train(tf, train_out);
    if (*sw) return cmd_sweep(sf, sweep_param, sweep_values, sweep_out, jobs);
    if (*syn) return cmd_synth(yf);
    if (*fv) return cmd_fuse_viz(fv_pred, fv_a, fv_v, fv_bv, fv_label, fv_out, fv_overlay);
    if (*gc) return cmd_grad_check(gc_scope, gc_seeds, gc_seed, gc_corrupt);
    if (*ft) return cmd_features(ft_ckpt, ft_in, ft_out, ft_dtype, ft_lc);
  } catch (const std::invalid_argument& e) {
    // UsageError, ConfigError and option validation all derive from this.
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitValidation;
}

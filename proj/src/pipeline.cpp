#include "vesselcouple/pipeline.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "vesselcouple/losses.hpp"

namespace vesselcouple {

namespace {

using nlohmann::json;

RgbImage pad_image(const RgbImage& img, std::size_t w, std::size_t h) {
  if (img.width == w && img.height == h) return img;
  RgbImage out(w, h);
  for (std::size_t y = 0; y < img.height; ++y) {
    std::copy_n(img.at(0, y), 3 * img.width, out.at(0, y));
  }
  return out;
}

std::size_t round_up(std::size_t v, std::size_t m) { return (v + m - 1) / m * m; }

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json metric_json(const MetricReport& r) {
  return json{{"protocol", to_string(r.protocol)},
              {"sensitivity", opt_json(r.sensitivity)},
              {"specificity", opt_json(r.specificity)},
              {"accuracy", opt_json(r.accuracy)},
              {"f1", opt_json(r.f1)},
              {"miou", opt_json(r.miou)},
              {"auroc", opt_json(r.auroc)},
              {"evaluated_pixels", r.evaluated_pixels},
              {"counts",
               {{"tp", r.counts.tp}, {"fp", r.counts.fp}, {"tn", r.counts.tn}, {"fn", r.counts.fn}}}};
}

std::string csv_opt(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", *v);
  return buf;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

}  // namespace

SuperpixelMask superpixels_for(const RgbImage& img, const SlicConfig& slic,
                               const PreprocessOptions& preprocess, bool raw) {
  if (raw) return slic_segment(img, slic).mask;
  return slic_segment(contrast_enhanced(img, preprocess), slic).mask;
}

std::vector<TrainSample> load_samples(const std::vector<DatasetEntry>& entries,
                                      const LoadOptions& options, std::size_t* repaired) {
  options.slic.validate();
  if (options.pad_multiple == 0) throw std::invalid_argument("load_samples: pad_multiple is 0");
  std::vector<TrainSample> out;
  for (const DatasetEntry& e : entries) {
    RgbImage img = png::read_rgb(e.image);
    RgbImage lab = png::read_rgb(e.label);
    if (img.width != lab.width || img.height != lab.height) {
      throw ImageError(e.name + ": image and label sizes differ");
    }
    std::optional<RgbImage> fov_img;
    if (e.fov) fov_img = png::read_rgb(*e.fov);
    const bool resized = options.resize_width != 0 && options.resize_width != img.width;
    if (resized) {
      const std::size_t rw = options.resize_width;
      const auto rh = static_cast<std::size_t>(std::max<long>(
          1, std::lround(static_cast<double>(img.height) * static_cast<double>(rw) /
                         static_cast<double>(img.width))));
      img = resize_bilinear(img, rw, rh);
      lab = resize_nearest(lab, rw, rh);
      if (fov_img) fov_img = resize_nearest(*fov_img, rw, rh);
    }
    const std::size_t pw = round_up(img.width, options.pad_multiple);
    const std::size_t ph = round_up(img.height, options.pad_multiple);
    const bool padded = pw != img.width || ph != img.height;
    img = pad_image(img, pw, ph);
    lab = pad_image(lab, pw, ph);

    TrainSample s;
    s.name = e.name;
    LabelDecodeReport report;
    s.label = decode_av_label(lab, &report, options.strict);
    if (repaired) *repaired += report.repaired;
    if (fov_img) {
      const RgbImage f = pad_image(*fov_img, pw, ph);
      std::vector<double> v(pw * ph);
      for (std::size_t i = 0; i < v.size(); ++i) {
        const std::uint8_t* p = f.pixels.data() + 3 * i;
        v[i] = (p[0] | p[1] | p[2]) ? 1.0 : 0.0;
      }
      s.fov = Tensor::from_data({ph, pw}, std::move(v));
    }
    if (options.use_cached_masks && e.mask && !resized && !padded) {
      s.mask = load_mask(*e.mask);
      if (s.mask.width != pw || s.mask.height != ph) {
        throw ImageError(e.name + ": cached mask size differs from the image");
      }
    } else {
      s.mask = superpixels_for(img, options.slic, options.preprocess, options.slic_on_raw);
    }
    s.image = std::move(img);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<DatasetEntry> entries_with_split(const std::vector<DatasetEntry>& all, Split split) {
  std::vector<DatasetEntry> out;
  for (const auto& e : all) {
    if (e.split == split) out.push_back(e);
  }
  return out;
}

DataSplits prepare_splits(const std::vector<DatasetEntry>& entries, const RunConfig& cfg,
                          const LoadOptions& options, std::size_t* repaired) {
  DataSplits d;
  std::vector<TrainSample> train = load_samples(entries_with_split(entries, Split::kTrain), options, repaired);
  d.val = load_samples(entries_with_split(entries, Split::kVal), options, repaired);
  d.test = load_samples(entries_with_split(entries, Split::kTest), options, repaired);
  if (d.val.empty()) {
    split_train_val(std::move(train), cfg.val_fraction, cfg.train.seed, d.train, d.val);
  } else {
    d.train = std::move(train);
  }
  return d;
}

// ---------------------------------------------------------------------------

void Evaluator::add(const std::string& name, const PredictionTriple& pred, const AVLabel& label,
                    const Tensor* fov) {
  const EvalSamples av = collect_av(pred, label, crossing_);
  const EvalSamples bv = collect_bv(pred.y_bv, label.l_bv, fov);
  images_.push_back({name, evaluate(av, Protocol::kAV), evaluate(bv, Protocol::kBV)});
  av_all_.append(av);
  bv_all_.append(bv);
}

EvaluationReport Evaluator::finish() const {
  EvaluationReport r;
  r.images = images_;
  r.crossing = crossing_;
  r.av_micro = evaluate(av_all_, Protocol::kAV);
  r.bv_micro = evaluate(bv_all_, Protocol::kBV);
  std::vector<MetricReport> av, bv;
  for (const auto& im : images_) {
    av.push_back(im.av);
    bv.push_back(im.bv);
  }
  r.av_macro = macro_average(av);
  r.bv_macro = macro_average(bv);
  r.av_macro.protocol = Protocol::kAV;
  r.bv_macro.protocol = Protocol::kBV;
  return r;
}

std::string metric_to_json(const MetricReport& report) { return metric_json(report).dump(); }

std::string report_to_json(const EvaluationReport& report, int indent) {
  json images = json::array();
  for (const auto& im : report.images) {
    images.push_back({{"name", im.name}, {"av", metric_json(im.av)}, {"bv", metric_json(im.bv)}});
  }
  const json j{
      {"protocol_version", kProtocolVersion},
      {"crossing", report.crossing == CrossingMode::kBoth ? "both" : "exclude"},
      {"images", images},
      {"aggregate",
       {{"micro", {{"av", metric_json(report.av_micro)}, {"bv", metric_json(report.bv_micro)}}},
        {"macro", {{"av", metric_json(report.av_macro)}, {"bv", metric_json(report.bv_macro)}}}}}};
  return j.dump(indent);
}

EvaluationReport evaluate_model(const UNet& net, const std::vector<TrainSample>& samples,
                                const PreprocessOptions& preprocess, CrossingMode crossing) {
  Evaluator ev(crossing);
  for (const TrainSample& s : samples) {
    const UNet::Output out = predict(net, s.image, preprocess);
    ev.add(s.name, out.pred, s.label, s.fov ? &*s.fov : nullptr);
  }
  return ev.finish();
}

RunOutcome run_experiment(const RunConfig& cfg, const std::vector<TrainSample>& train_set,
                          const std::vector<TrainSample>& val,
                          const std::vector<TrainSample>& test, const EpochCallback& on_epoch) {
  cfg.validate();
  TrainConfig tc = cfg.train;
  if (cfg.fast) tc.apply_fast();
  TrainResult result = train(train_set, val, cfg.net, tc, on_epoch);
  const auto& eval_set = !test.empty() ? test : !val.empty() ? val : train_set;
  EvaluationReport eval =
      evaluate_model(result.model, eval_set, tc.preprocess, CrossingMode::kExclude);
  return {std::move(result), std::move(eval)};
}

SweepParam sweep_param_from_string(const std::string& s) {
  if (s == "lambda1") return SweepParam::kLambda1;
  if (s == "lambda2") return SweepParam::kLambda2;
  if (s == "clusters") return SweepParam::kClusters;
  throw std::invalid_argument("unknown sweep parameter '" + s + "' (lambda1, lambda2, clusters)");
}

std::string to_string(SweepParam p) {
  switch (p) {
    case SweepParam::kLambda1: return "lambda1";
    case SweepParam::kLambda2: return "lambda2";
    case SweepParam::kClusters: return "clusters";
  }
  return "";
}

std::vector<double> parse_value_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) throw std::invalid_argument("empty item in value list '" + text + "'");
    item = item.substr(b, e - b + 1);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || !std::isfinite(v)) {
      throw std::invalid_argument("not a number in value list: '" + item + "'");
    }
    out.push_back(v);
  }
  if (out.empty() || (!text.empty() && text.back() == ',')) {
    throw std::invalid_argument("value list is empty or has an empty item");
  }
  return out;
}

std::vector<SweepRow> run_sweep(const RunConfig& base, SweepParam param,
                                const std::vector<double>& values,
                                const std::vector<DatasetEntry>& entries,
                                const LoadOptions& load, std::size_t jobs) {
  if (values.empty()) throw std::invalid_argument("sweep: no values");
  for (double v : values) {
    if (param == SweepParam::kClusters && (v < 1.0 || v != std::floor(v))) {
      throw std::invalid_argument("sweep: cluster counts must be positive integers");
    }
    if (param != SweepParam::kClusters && !(v >= 0.0)) {
      throw std::invalid_argument("sweep: loss weights must be >= 0");
    }
  }
  base.validate();

  // Samples are shared across values except for the cluster sweep, where the
  // masks depend on the value.
  std::mutex cache_mutex;
  std::map<std::size_t, std::shared_ptr<const DataSplits>> cache;
  auto splits_for = [&](std::size_t k) {
    std::lock_guard lock(cache_mutex);
    auto it = cache.find(k);
    if (it != cache.end()) return it->second;
    LoadOptions opt = load;
    opt.slic.k = k;
    if (param == SweepParam::kClusters) opt.use_cached_masks = false;
    auto d = std::make_shared<const DataSplits>(prepare_splits(entries, base, opt));
    cache.emplace(k, d);
    return d;
  };

  std::vector<SweepRow> rows(values.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < values.size(); i = next++) {
      SweepRow& row = rows[i];
      row.value = values[i];
      try {
        RunConfig cfg = base;
        std::size_t k = load.slic.k;
        switch (param) {
          case SweepParam::kLambda1: cfg.train.weights.lambda1 = values[i]; break;
          case SweepParam::kLambda2: cfg.train.weights.lambda2 = values[i]; break;
          case SweepParam::kClusters:
            k = static_cast<std::size_t>(values[i]);
            cfg.slic.k = k;
            break;
        }
        const auto d = splits_for(k);
        RunOutcome o = run_experiment(cfg, d->train, d->val, d->test);
        row.ok = true;
        row.best_epoch = o.train.best_epoch;
        row.epochs = o.train.history.size();
        row.best_val = o.train.best_val;
        row.av = o.eval.av_micro;
        row.bv = o.eval.bv_micro;
      } catch (const std::exception& e) {
        row.ok = false;
        row.error = e.what();
      }
    }
  };
  jobs = std::clamp<std::size_t>(jobs, 1, values.size());
  std::vector<std::thread> pool;
  for (std::size_t j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return rows;
}

std::string sweep_csv_header() {
  return "param,value,status,best_epoch,epochs,best_val,"
         "av_accuracy,av_sensitivity,av_specificity,av_f1,av_miou,av_auroc,"
         "bv_accuracy,bv_sensitivity,bv_specificity,bv_f1,bv_miou,bv_auroc,error";
}

std::string sweep_csv_row(SweepParam param, const SweepRow& row) {
  std::ostringstream o;
  o << to_string(param) << ',' << csv_opt(row.value) << ',' << (row.ok ? "ok" : "failed") << ',';
  if (row.ok) {
    o << row.best_epoch << ',' << row.epochs << ',' << csv_opt(row.best_val);
  } else {
    o << ",,";
  }
  for (const MetricReport* m : {&row.av, &row.bv}) {
    for (const auto& v : {m->accuracy, m->sensitivity, m->specificity, m->f1, m->miou, m->auroc}) {
      o << ',' << (row.ok ? csv_opt(v) : "");
    }
  }
  o << ',' << csv_escape(row.error);
  return o.str();
}

// ---------------------------------------------------------------------------

FuseVisualization render_fuse_viz(const PredictionTriple& pred, const AVLabel& label) {
  NoGradGuard no_grad;
  const Tensor fused = c3_fuse(pred, label);
  const std::size_t h = label.height(), w = label.width();
  FuseVisualization viz;
  viz.c3.width = w;
  viz.c3.height = h;
  viz.c3.bit_depth = 8;
  viz.c3.pixels.resize(w * h);
  viz.branches = RgbImage(w, h);
  for (std::size_t i = 0; i < w * h; ++i) {
    viz.c3.pixels[i] =
        static_cast<std::uint16_t>(std::lround(std::clamp(fused[i], 0.0, 1.0) * 255.0));
    std::uint8_t rgb[3] = {0, 0, 255};
    switch (classify(label.l_a[i], label.l_v[i], label.l_bv[i])) {
      case PixelClass::kArtery: rgb[0] = 255; break;
      case PixelClass::kVein: rgb[1] = 255; break;
      case PixelClass::kCrossing: rgb[0] = rgb[1] = 255; break;
      default: break;
    }
    std::copy_n(rgb, 3, viz.branches.pixels.data() + 3 * i);
  }
  return viz;
}

}  // namespace vesselcouple

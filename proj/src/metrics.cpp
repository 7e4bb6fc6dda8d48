#include "vesselcouple/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace vesselcouple {

namespace {

std::optional<double> ratio(double num, double den) {
  if (den == 0.0) return std::nullopt;
  return num / den;
}

}  // namespace

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
  tp += o.tp;
  fp += o.fp;
  tn += o.tn;
  fn += o.fn;
  return *this;
}

std::string to_string(Protocol p) { return p == Protocol::kAV ? "av" : "bv"; }

std::optional<double> auroc(std::span<const double> scores,
                            std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) {
    throw std::invalid_argument("auroc: scores and labels differ in length");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double positive_rank_sum = 0.0;
  std::uint64_t positives = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    // Ranks i+1 .. j share their average.
    const double rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]]) {
        positive_rank_sum += rank;
        ++positives;
      }
    }
    i = j;
  }
  const std::uint64_t negatives = scores.size() - positives;
  if (positives == 0 || negatives == 0) return std::nullopt;
  const double p = static_cast<double>(positives), n = static_cast<double>(negatives);
  return (positive_rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

void EvalSamples::append(const EvalSamples& other) {
  truth.insert(truth.end(), other.truth.begin(), other.truth.end());
  predicted.insert(predicted.end(), other.predicted.begin(), other.predicted.end());
  scores.insert(scores.end(), other.scores.begin(), other.scores.end());
}

ConfusionCounts count(const EvalSamples& s) {
  ConfusionCounts c;
  for (std::size_t i = 0; i < s.truth.size(); ++i) {
    if (s.truth[i]) {
      s.predicted[i] ? ++c.tp : ++c.fn;
    } else {
      s.predicted[i] ? ++c.fp : ++c.tn;
    }
  }
  return c;
}

MetricReport evaluate(const EvalSamples& s, Protocol protocol) {
  MetricReport r;
  r.protocol = protocol;
  r.counts = count(s);
  r.evaluated_pixels = s.truth.size();
  const auto& c = r.counts;
  const double tp = c.tp, fp = c.fp, tn = c.tn, fn = c.fn;
  r.sensitivity = ratio(tp, tp + fn);
  r.specificity = ratio(tn, tn + fp);
  r.accuracy = ratio(tp + tn, tp + tn + fp + fn);
  r.f1 = ratio(2.0 * tp, 2.0 * tp + fp + fn);
  const auto iou_pos = ratio(tp, tp + fp + fn);
  const auto iou_neg = ratio(tn, tn + fn + fp);
  if (iou_pos && iou_neg) r.miou = 0.5 * (*iou_pos + *iou_neg);

  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
  for (std::size_t i = 0; i < s.scores.size(); ++i) {
    if (std::isnan(s.scores[i])) continue;
    scores.push_back(s.scores[i]);
    labels.push_back(s.truth[i]);
  }
  r.auroc = auroc(scores, labels);
  return r;
}

EvalSamples collect_av(const PredictionTriple& pred, const AVLabel& label,
                       CrossingMode crossing) {
  if (pred.y_a.shape() != label.l_bv.shape() || pred.y_v.shape() != label.l_bv.shape()) {
    throw TensorError("collect_av: shape mismatch");
  }
  EvalSamples s;
  for (std::size_t i = 0; i < label.l_bv.numel(); ++i) {
    const PixelClass cls = classify(label.l_a[i], label.l_v[i], label.l_bv[i]);
    const double ya = pred.y_a[i], yv = pred.y_v[i];
    const std::uint8_t says_artery = ya > yv ? 1 : 0;
    if (cls == PixelClass::kArtery || cls == PixelClass::kVein) {
      s.truth.push_back(cls == PixelClass::kArtery ? 1 : 0);
      s.predicted.push_back(says_artery);
      s.scores.push_back(ya - yv);
    } else if (cls == PixelClass::kCrossing && crossing == CrossingMode::kBoth) {
      s.truth.push_back(says_artery);
      s.predicted.push_back(says_artery);
      s.scores.push_back(std::nan(""));
    }
  }
  return s;
}

EvalSamples collect_bv(const Tensor& y_bv, const Tensor& l_bv, const Tensor* fov) {
  if (y_bv.shape() != l_bv.shape() || (fov && fov->shape() != l_bv.shape())) {
    throw TensorError("collect_bv: shape mismatch");
  }
  EvalSamples s;
  for (std::size_t i = 0; i < l_bv.numel(); ++i) {
    if (fov && (*fov)[i] < 0.5) continue;
    s.truth.push_back(l_bv[i] > 0.5 ? 1 : 0);
    s.predicted.push_back(y_bv[i] >= 0.5 ? 1 : 0);
    s.scores.push_back(y_bv[i]);
  }
  return s;
}

MetricReport av_classification_metrics(const PredictionTriple& pred,
                                       const AVLabel& label, CrossingMode crossing) {
  return evaluate(collect_av(pred, label, crossing), Protocol::kAV);
}

MetricReport bv_segmentation_metrics(const Tensor& y_bv, const Tensor& l_bv,
                                     const Tensor* fov) {
  return evaluate(collect_bv(y_bv, l_bv, fov), Protocol::kBV);
}

MetricReport macro_average(std::span<const MetricReport> reports) {
  MetricReport out;
  if (!reports.empty()) out.protocol = reports.front().protocol;
  auto mean_of = [&](std::optional<double> MetricReport::*field) -> std::optional<double> {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : reports) {
      if (r.*field) {
        sum += *(r.*field);
        ++n;
      }
    }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
  };
  out.sensitivity = mean_of(&MetricReport::sensitivity);
  out.specificity = mean_of(&MetricReport::specificity);
  out.accuracy = mean_of(&MetricReport::accuracy);
  out.f1 = mean_of(&MetricReport::f1);
  out.miou = mean_of(&MetricReport::miou);
  out.auroc = mean_of(&MetricReport::auroc);
  for (const auto& r : reports) {
    out.evaluated_pixels += r.evaluated_pixels;
    out.counts += r.counts;
  }
  return out;
}

}  // namespace vesselcouple

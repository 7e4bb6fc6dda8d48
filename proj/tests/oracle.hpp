#pragma once

// Reference implementations used by the tests and the acceptance binary.
// They recount everything per pixel and share no code with the library.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "vesselcouple/losses.hpp"
#include "vesselcouple/rng.hpp"

namespace oracle {

/// P*N concordance count; ties count one half.
inline std::optional<double> pairwise_auroc(const std::vector<double>& scores,
                                            const std::vector<int>& labels) {
  double concordant = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) concordant += 1.0;
      else if (scores[i] == scores[j]) concordant += 0.5;
    }
  }
  if (pairs == 0) return std::nullopt;
  return concordant / static_cast<double>(pairs);
}

struct Metrics {
  std::optional<double> sens, spec, acc, f1, miou, auroc;
  std::size_t n = 0;
};

inline std::optional<double> frac(double num, double den) {
  if (den == 0.0) return std::nullopt;
  return num / den;
}

inline Metrics from_decisions(const std::vector<int>& truth, const std::vector<int>& pred,
                              const std::vector<double>& scores) {
  double tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] && pred[i]) ++tp;
    else if (!truth[i] && pred[i]) ++fp;
    else if (!truth[i] && !pred[i]) ++tn;
    else ++fn;
  }
  Metrics m;
  m.n = truth.size();
  m.sens = frac(tp, tp + fn);
  m.spec = frac(tn, tn + fp);
  m.acc = frac(tp + tn, tp + tn + fp + fn);
  m.f1 = frac(2 * tp, 2 * tp + fp + fn);
  const auto a = frac(tp, tp + fp + fn), b = frac(tn, tn + fp + fn);
  if (a && b) m.miou = (*a + *b) / 2;
  m.auroc = pairwise_auroc(scores, truth);
  return m;
}

/// Artery-vs-vein over pixels that are exactly artery or exactly vein.
inline Metrics av(const vesselcouple::PredictionTriple& p, const vesselcouple::AVLabel& l) {
  std::vector<int> truth, pred;
  std::vector<double> scores;
  for (std::size_t i = 0; i < l.l_bv.numel(); ++i) {
    const bool a = l.l_a[i] == 1, v = l.l_v[i] == 1, bv = l.l_bv[i] == 1;
    if (!bv || a == v) continue;
    truth.push_back(a ? 1 : 0);
    pred.push_back(p.y_a[i] > p.y_v[i] ? 1 : 0);
    scores.push_back(p.y_a[i] - p.y_v[i]);
  }
  return from_decisions(truth, pred, scores);
}

inline Metrics bv(const vesselcouple::Tensor& y, const vesselcouple::Tensor& l) {
  std::vector<int> truth, pred;
  std::vector<double> scores;
  for (std::size_t i = 0; i < l.numel(); ++i) {
    truth.push_back(l[i] == 1 ? 1 : 0);
    pred.push_back(y[i] >= 0.5 ? 1 : 0);
    scores.push_back(y[i]);
  }
  return from_decisions(truth, pred, scores);
}

/// Random label with every class present in proportion, and predictions
/// drawn on a coarse grid so that ties occur.
struct Fixture {
  vesselcouple::PredictionTriple pred;
  vesselcouple::AVLabel label;
};

inline Fixture random_fixture(vesselcouple::Rng& rng, std::size_t h, std::size_t w,
                              bool coarse = true) {
  const std::size_t n = h * w;
  std::vector<double> la(n), lv(n), lb(n), ya(n), yv(n), yb(n);
  for (std::size_t i = 0; i < n; ++i) {
    switch (rng.index(6)) {
      case 0:
      case 1: break;
      case 2: la[i] = lb[i] = 1; break;
      case 3: lv[i] = lb[i] = 1; break;
      case 4: la[i] = lv[i] = lb[i] = 1; break;
      default: lb[i] = 1; break;
    }
    auto draw = [&] { return coarse ? static_cast<double>(rng.index(11)) / 10.0 : rng.uniform(); };
    ya[i] = draw();
    yv[i] = draw();
    yb[i] = draw();
  }
  auto t = [&](std::vector<double>& v) { return vesselcouple::Tensor::from_data({h, w}, v); };
  return {{t(ya), t(yv), t(yb)}, {t(la), t(lv), t(lb)}};
}

}  // namespace oracle

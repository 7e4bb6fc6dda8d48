#include <doctest.h>

#include <vector>

#include "oracle.hpp"
#include "vesselcouple/metrics.hpp"
#include "vesselcouple/pipeline.hpp"

using namespace vesselcouple;

namespace {

Tensor row(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor::from_data({1, n}, std::move(v));
}

void check_same(const MetricReport& r, const oracle::Metrics& m) {
  CHECK(r.evaluated_pixels == m.n);
  CHECK(r.sensitivity == m.sens);
  CHECK(r.specificity == m.spec);
  CHECK(r.accuracy == m.acc);
  CHECK(r.f1 == m.f1);
  CHECK(r.miou == m.miou);
  REQUIRE(r.auroc.has_value() == m.auroc.has_value());
  if (m.auroc) CHECK(std::abs(*r.auroc - *m.auroc) <= 1e-9);
}

}  // namespace

TEST_CASE("worked four-pixel A/V example") {
  // Truths A, A, V, V; the second artery is predicted vein.
  const AVLabel l{row({1, 1, 0, 0}), row({0, 0, 1, 1}), row({1, 1, 1, 1})};
  const PredictionTriple p{row({0.9, 0.35, 0.2, 0.1}), row({0.1, 0.5, 0.6, 0.9}),
                           row({1, 1, 1, 1})};
  const MetricReport r = av_classification_metrics(p, l);
  CHECK(r.evaluated_pixels == 4);
  CHECK(*r.sensitivity == 0.5);
  CHECK(*r.specificity == 1.0);
  CHECK(*r.accuracy == 0.75);
  CHECK(*r.f1 == doctest::Approx(0.6667).epsilon(1e-4));
  CHECK(*r.miou == doctest::Approx(0.5833).epsilon(1e-4));
  CHECK(r.counts == ConfusionCounts{1, 0, 2, 1});
}

TEST_CASE("auroc examples") {
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  const std::vector<std::uint8_t> l{0, 0, 1, 1};
  CHECK(*auroc(s, l) == 0.75);
  const std::vector<double> same(6, 0.3);
  const std::vector<std::uint8_t> l6{0, 1, 0, 1, 1, 0};
  CHECK(*auroc(same, l6) == 0.5);
  const std::vector<double> sep{0.1, 0.9, 0.2, 0.8, 0.7, 0.0};
  CHECK(*auroc(sep, l6) == 1.0);
  const std::vector<std::uint8_t> one_class(6, 1);
  CHECK_FALSE(auroc(sep, one_class).has_value());
}

TEST_CASE("A/V scores give the worked AUROC") {
  const AVLabel l{row({1, 1, 0, 0}), row({0, 0, 1, 1}), row({1, 1, 1, 1})};
  // Scores y_a - y_v = 0.8, 0.35, 0.4, 0.1.
  const PredictionTriple p{row({0.9, 0.4, 0.5, 0.1}), row({0.1, 0.05, 0.1, 0.0}),
                           row({1, 1, 1, 1})};
  CHECK(*av_classification_metrics(p, l).auroc == 0.75);
}

TEST_CASE("perfect A/V prediction") {
  Rng rng(1);
  const auto f = oracle::random_fixture(rng, 16, 16);
  PredictionTriple p{f.label.l_a, f.label.l_v, f.label.l_bv};
  const MetricReport r = av_classification_metrics(p, f.label);
  for (auto m : {r.sensitivity, r.specificity, r.accuracy, r.f1, r.miou, r.auroc}) {
    CHECK(*m == 1.0);
  }
  const MetricReport b = bv_segmentation_metrics(f.label.l_bv, f.label.l_bv);
  CHECK(*b.accuracy == 1.0);
  CHECK(*b.auroc == 1.0);
}

TEST_CASE("ties go to vein") {
  const AVLabel l{row({1}), row({0}), row({1})};
  const PredictionTriple p{row({0.5}), row({0.5}), row({1})};
  CHECK(av_classification_metrics(p, l).counts == ConfusionCounts{0, 0, 0, 1});
}

TEST_CASE("all-background vessel prediction") {
  std::vector<double> lab(100, 0.0);
  for (int i = 0; i < 10; ++i) lab[i * 7] = 1;
  const Tensor l = Tensor::from_data({10, 10}, lab);
  const MetricReport r = bv_segmentation_metrics(Tensor::zeros({10, 10}), l);
  CHECK(*r.accuracy == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(*r.sensitivity == 0.0);
  CHECK(*r.specificity == 1.0);
  REQUIRE(r.f1.has_value());
  CHECK(*r.f1 == 0.0);
}

TEST_CASE("empty evaluation set is undefined everywhere") {
  const AVLabel l{row({0, 1}), row({0, 1}), row({0, 1})};  // background + crossing
  const PredictionTriple p{row({0.3, 0.3}), row({0.2, 0.2}), row({0.1, 0.1})};
  const MetricReport r = av_classification_metrics(p, l);
  CHECK(r.evaluated_pixels == 0);
  for (auto m : {r.sensitivity, r.specificity, r.accuracy, r.f1, r.miou, r.auroc}) {
    CHECK_FALSE(m.has_value());
  }
  const std::string j = metric_to_json(r);
  CHECK(j.find("\"accuracy\":null") != std::string::npos);
}

TEST_CASE("crossing mode counts crossings as correct") {
  const AVLabel l{row({1, 1, 0}), row({0, 1, 1}), row({1, 1, 1})};
  const PredictionTriple p{row({0.9, 0.1, 0.2}), row({0.1, 0.9, 0.8}), row({1, 1, 1})};
  const MetricReport ex = av_classification_metrics(p, l, CrossingMode::kExclude);
  const MetricReport both = av_classification_metrics(p, l, CrossingMode::kBoth);
  CHECK(ex.evaluated_pixels == 2);
  CHECK(both.evaluated_pixels == 3);
  CHECK(*both.accuracy == 1.0);
  CHECK(*both.auroc == *ex.auroc);
}

TEST_CASE("metrics match the brute-force oracle") {
  Rng rng(2024);
  for (int t = 0; t < 100; ++t) {
    const auto f = oracle::random_fixture(rng, 32, 32, t % 2 == 0);
    check_same(av_classification_metrics(f.pred, f.label), oracle::av(f.pred, f.label));
    check_same(bv_segmentation_metrics(f.pred.y_bv, f.label.l_bv),
               oracle::bv(f.pred.y_bv, f.label.l_bv));
  }
}

TEST_CASE("rank AUROC equals the pairwise count") {
  Rng rng(99);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 2 + rng.index(499);
    std::vector<double> s(n);
    std::vector<std::uint8_t> l(n);
    std::vector<int> li(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = t % 3 == 0 ? static_cast<double>(rng.index(7)) : rng.normal();
      l[i] = li[i] = rng.bernoulli(0.3) ? 1 : 0;
    }
    l[0] = li[0] = 1;
    l[1] = li[1] = 0;
    CHECK(std::abs(*auroc(s, l) - *oracle::pairwise_auroc(s, li)) <= 1e-9);
  }
}

TEST_CASE("accuracy is symmetric under swapping prediction and truth") {
  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> a(64), b(64);
    for (std::size_t i = 0; i < 64; ++i) {
      a[i] = rng.bernoulli(0.3) ? 1 : 0;
      b[i] = rng.bernoulli(0.4) ? 1 : 0;
    }
    const Tensor ta = Tensor::from_data({8, 8}, a), tb = Tensor::from_data({8, 8}, b);
    const MetricReport ab = bv_segmentation_metrics(ta, tb), ba = bv_segmentation_metrics(tb, ta);
    CHECK(ab.accuracy == ba.accuracy);
    CHECK(ab.f1 == ba.f1);
    CHECK(ab.miou == ba.miou);
    CHECK(ab.counts.tp == ba.counts.tp);
    CHECK(ab.counts.fp == ba.counts.fn);
    // Sensitivity of one direction is the precision of the other.
    const double precision_ba = double(ba.counts.tp) / double(ba.counts.tp + ba.counts.fp);
    if (ab.sensitivity) CHECK(*ab.sensitivity == precision_ba);
  }
}

TEST_CASE("metrics are invariant under a shared pixel permutation") {
  Rng rng(17);
  for (int t = 0; t < 20; ++t) {
    const auto f = oracle::random_fixture(rng, 12, 12, false);
    std::vector<std::size_t> perm(144);
    for (std::size_t i = 0; i < 144; ++i) perm[i] = i;
    for (std::size_t i = 143; i > 0; --i) std::swap(perm[i], perm[rng.index(i + 1)]);
    auto shuffle = [&](const Tensor& x) {
      std::vector<double> v(144);
      for (std::size_t i = 0; i < 144; ++i) v[i] = x[perm[i]];
      return Tensor::from_data({12, 12}, v);
    };
    const PredictionTriple p{shuffle(f.pred.y_a), shuffle(f.pred.y_v), shuffle(f.pred.y_bv)};
    const AVLabel l{shuffle(f.label.l_a), shuffle(f.label.l_v), shuffle(f.label.l_bv)};
    const MetricReport a = av_classification_metrics(f.pred, f.label);
    const MetricReport b = av_classification_metrics(p, l);
    CHECK(a.counts == b.counts);
    CHECK(a.accuracy == b.accuracy);
    CHECK(a.miou == b.miou);
    CHECK(std::abs(*a.auroc - *b.auroc) <= 1e-12);
  }
}

TEST_CASE("F1 equals the harmonic mean of precision and recall") {
  Rng rng(41);
  for (int t = 0; t < 100; ++t) {
    const auto f = oracle::random_fixture(rng, 10, 10, false);
    const MetricReport r = bv_segmentation_metrics(f.pred.y_bv, f.label.l_bv);
    const auto& c = r.counts;
    if (c.tp == 0) continue;
    const double precision = double(c.tp) / double(c.tp + c.fp);
    const double recall = double(c.tp) / double(c.tp + c.fn);
    CHECK(*r.f1 == doctest::Approx(2 * precision * recall / (precision + recall)).epsilon(1e-14));
  }
}

TEST_CASE("FOV restricts vessel evaluation") {
  const Tensor y = row({1, 0, 1, 0});
  const Tensor l = row({1, 1, 0, 0});
  const Tensor fov = row({1, 1, 0, 0});
  const MetricReport r = bv_segmentation_metrics(y, l, &fov);
  CHECK(r.evaluated_pixels == 2);
  CHECK(*r.sensitivity == 0.5);
  CHECK_FALSE(r.specificity.has_value());
}

TEST_CASE("evaluator aggregates micro and macro") {
  Rng rng(3);
  Evaluator ev(CrossingMode::kExclude);
  std::vector<MetricReport> per_image;
  ConfusionCounts total;
  for (int i = 0; i < 4; ++i) {
    const auto f = oracle::random_fixture(rng, 8, 8, false);
    ev.add("img" + std::to_string(i), f.pred, f.label, nullptr);
    per_image.push_back(av_classification_metrics(f.pred, f.label));
    total += per_image.back().counts;
  }
  const EvaluationReport r = ev.finish();
  CHECK(r.images.size() == 4);
  CHECK(r.av_micro.counts == total);
  CHECK(r.av_macro.accuracy == macro_average(per_image).accuracy);
  const std::string j = report_to_json(r);
  CHECK(j.find(kProtocolVersion) != std::string::npos);
  CHECK(j.find("\"micro\"") != std::string::npos);
}

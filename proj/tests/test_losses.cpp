#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "vesselcouple/losses.hpp"
#include "vesselcouple/ops.hpp"
#include "vesselcouple/rng.hpp"

using namespace vesselcouple;

namespace {

Tensor px(double v) { return Tensor::from_data({1, 1}, {v}); }

PredictionTriple triple(double a, double v, double bv) { return {px(a), px(v), px(bv)}; }
AVLabel label1(double a, double v, double bv) { return {px(a), px(v), px(bv)}; }

struct Fixture {
  PredictionTriple pred;
  AVLabel label;
};

Fixture random_fixture(Rng& rng, std::size_t h, std::size_t w) {
  const std::size_t n = h * w;
  std::vector<double> la(n), lv(n), lb(n), ya(n), yv(n), yb(n);
  for (std::size_t i = 0; i < n; ++i) {
    switch (rng.index(5)) {
      case 0: break;
      case 1: la[i] = lb[i] = 1; break;
      case 2: lv[i] = lb[i] = 1; break;
      case 3: la[i] = lv[i] = lb[i] = 1; break;
      default: lb[i] = 1; break;
    }
    ya[i] = rng.uniform();
    yv[i] = rng.uniform();
    yb[i] = rng.uniform();
  }
  auto t = [&](std::vector<double>& v) { return Tensor::from_data({h, w}, v); };
  return {{t(ya), t(yv), t(yb)}, {t(la), t(lv), t(lb)}};
}

double ref_bce(const std::vector<double>& y, const std::vector<double>& l) {
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double p = std::clamp(y[i], 1e-7, 1 - 1e-7);
    s -= l[i] * std::log(p) + (1 - l[i]) * std::log(1 - p);
  }
  return s / static_cast<double>(y.size());
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("bce examples") {
  CHECK(bce(px(0.5), px(1)).item() == doctest::Approx(0.693147).epsilon(1e-6));
  CHECK(bce(px(0.9), px(0)).item() == doctest::Approx(2.302585).epsilon(1e-6));
  CHECK(bce(px(1.0), px(1)).item() <= 2e-7);
  CHECK(bce(px(0.0), px(0)).item() <= 2e-7);
}

TEST_CASE("c3_fuse examples") {
  CHECK(c3_fuse(triple(0.3, 0.9, 0.8), label1(1, 0, 1)).item() == 0.3);
  CHECK(c3_fuse(triple(0.7, 0.6, 0.9), label1(1, 1, 1)).item() == 0.6);
  CHECK(c3_fuse(triple(0.1, 0.2, 0.42), label1(0, 0, 0)).item() == 0.42);
  CHECK(c3_fuse(triple(0.1, 0.2, 0.42), label1(0, 0, 1)).item() == 0.42);
  CHECK(c3_fuse(triple(0.9, 0.2, 0.6), label1(0, 1, 1)).item() == 0.2);
}

TEST_CASE("c3_loss penalizes the inconsistent channel") {
  const auto pred = triple(0.1, 0.5, 0.9);
  const auto lab = label1(1, 0, 1);
  CHECK(c3_loss(pred, lab).item() == doctest::Approx(2.302585).epsilon(1e-6));
  CHECK(bce(pred.y_bv, lab.l_bv).item() == doctest::Approx(0.105361).epsilon(1e-5));

  Tensor ya = px(0.1).clone(true);
  backward(c3_loss({ya, pred.y_v, pred.y_bv}, lab));
  CHECK(ya.grad()[0] < 0);
}

TEST_CASE("perfect predictions sit at the clamp floor") {
  Rng rng(8);
  Fixture f = random_fixture(rng, 6, 6);
  const PredictionTriple perfect{f.label.l_a, f.label.l_v, f.label.l_bv};
  const AVLabel& l = f.label;
  // Uncertain pixels have l_a = l_v = 0 and l_bv = 1; fusion still gives y_bv.
  CHECK(c3_loss(perfect, l).item() <= 2e-7);
  CHECK(base_bce_loss(perfect, l).item() <= 2e-7);
}

TEST_CASE("base_bce_loss") {
  AVLabel lab{Tensor::from_data({2, 2}, {1, 0, 0, 0}), Tensor::from_data({2, 2}, {0, 1, 0, 0}),
              Tensor::from_data({2, 2}, {1, 1, 0, 1})};
  const Tensor half = Tensor::full({2, 2}, 0.5);
  CHECK(base_bce_loss({half, half, half}, lab).item() == doctest::Approx(0.693147).epsilon(1e-6));

  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    const Fixture f = random_fixture(rng, 5, 7);
    const double expected = (ref_bce(values(f.pred.y_a), values(f.label.l_a)) +
                             ref_bce(values(f.pred.y_v), values(f.label.l_v)) +
                             ref_bce(values(f.pred.y_bv), values(f.label.l_bv))) /
                            3.0;
    CHECK(base_bce_loss(f.pred, f.label).item() == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("c3_fuse bound and branch table on random fixtures") {
  Rng rng(13);
  for (int t = 0; t < 200; ++t) {
    const Fixture f = random_fixture(rng, 4, 4);
    const Tensor c = c3_fuse(f.pred, f.label);
    for (std::size_t i = 0; i < c.numel(); ++i) {
      const double a = f.pred.y_a[i], v = f.pred.y_v[i], b = f.pred.y_bv[i];
      const bool la = f.label.l_a[i] == 1, lv = f.label.l_v[i] == 1;
      const double expected = la && lv ? std::min({a, v, b}) : la ? std::min(a, b)
                                                         : lv ? std::min(v, b) : b;
      REQUIRE(c[i] == expected);
      REQUIRE(c[i] <= b);
    }
  }
}

TEST_CASE("labels violating the subset rule are rejected") {
  const auto bad = label1(1, 0, 0);
  CHECK_THROWS_AS(c3_fuse(triple(0.3, 0.3, 0.3), bad), TensorError);
  AVLabel fix = bad;
  CHECK(repair_label(fix) == 1);
  CHECK(fix.l_bv[0] == 1.0);
  CHECK_NOTHROW(validate_label(fix));
}

TEST_CASE("classify") {
  CHECK(classify(0, 0, 0) == PixelClass::kBackground);
  CHECK(classify(1, 0, 1) == PixelClass::kArtery);
  CHECK(classify(0, 1, 1) == PixelClass::kVein);
  CHECK(classify(1, 1, 1) == PixelClass::kCrossing);
  CHECK(classify(0, 0, 1) == PixelClass::kUncertain);
}

TEST_CASE("intra loss closed form with one positive and one negative") {
  // Positions 0 and 1 share a cluster and a feature; position 2 is orthogonal.
  const Tensor feat = Tensor::from_data({2, 1, 3}, {1, 1, 0, 0, 0, 1});
  const SuperpixelMask mask{3, 1, {0, 0, 1}, 2};
  ContrastiveConfig cfg;
  cfg.positives_per_anchor = 1;
  cfg.negatives_per_anchor = 1;
  cfg.anchors_per_image = 64;
  const std::vector<bool> eligible{true, true, false};
  const auto r = intra_loss(feat, mask, cfg, eligible);
  CHECK(r.anchors_used == 64);
  CHECK(r.loss.item() == doctest::Approx(std::log1p(std::exp(-10.0))).epsilon(1e-9));
  CHECK(r.loss.item() > 0);
}

TEST_CASE("intra loss with identical features is log 2 per anchor") {
  Rng rng(4);
  std::vector<double> f(4 * 6 * 6);
  for (std::size_t c = 0; c < 4; ++c) {
    const double v = rng.normal();
    for (std::size_t p = 0; p < 36; ++p) f[c * 36 + p] = v;
  }
  SuperpixelMask mask{6, 6, std::vector<std::int32_t>(36), 3};
  for (std::size_t p = 0; p < 36; ++p) mask.labels[p] = static_cast<std::int32_t>((p % 6) / 2);
  ContrastiveConfig cfg;
  cfg.positives_per_anchor = 1;
  cfg.negatives_per_anchor = 1;
  const auto r = intra_loss(Tensor::from_data({4, 6, 6}, f), mask, cfg);
  CHECK(std::abs(r.loss.item() - std::log(2.0)) <= 1e-9);
}

TEST_CASE("single-cluster mask is degenerate") {
  const SuperpixelMask mask{4, 4, std::vector<std::int32_t>(16, 0), 1};
  Tensor feat = Tensor::full({3, 4, 4}, 0.5, true);
  const auto r = intra_loss(feat, mask, {});
  CHECK(r.degenerate);
  CHECK(r.loss.item() == 0.0);
  CHECK(r.anchors_used == 0);
  backward(r.loss);
  for (double g : feat.grad()) CHECK(g == 0.0);
}

TEST_CASE("intra loss ignores cluster id relabeling") {
  Rng rng(31);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> f(8 * 8 * 8);
    for (auto& v : f) v = rng.normal();
    const Tensor feat = Tensor::from_data({8, 8, 8}, f);
    SuperpixelMask mask{8, 8, std::vector<std::int32_t>(64), 5};
    for (std::int32_t l = 0; l < 5; ++l) mask.labels[l] = l;
    for (std::size_t p = 5; p < 64; ++p) mask.labels[p] = static_cast<std::int32_t>(rng.index(5));
    std::vector<std::int32_t> perm(5);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = 4; i > 0; --i) std::swap(perm[i], perm[rng.index(i + 1)]);
    SuperpixelMask relabeled = mask;
    for (auto& l : relabeled.labels) l = perm[l];
    ContrastiveConfig cfg;
    cfg.seed = 100 + t;
    CHECK(intra_loss(feat, mask, cfg).loss.item() == intra_loss(feat, relabeled, cfg).loss.item());
  }
}

TEST_CASE("intra loss per anchor is non-negative") {
  Rng rng(12);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> f(3 * 5 * 5);
    for (auto& v : f) v = rng.normal();
    SuperpixelMask mask{5, 5, std::vector<std::int32_t>(25), 4};
    for (std::int32_t l = 0; l < 4; ++l) mask.labels[l] = l;
    for (std::size_t p = 4; p < 25; ++p) mask.labels[p] = static_cast<std::int32_t>(rng.index(4));
    ContrastiveConfig cfg;
    cfg.anchors_per_image = 1;
    cfg.seed = t;
    CHECK(intra_loss(Tensor::from_data({3, 5, 5}, f), mask, cfg).loss.item() >= 0.0);
  }
}

TEST_CASE("total loss composition") {
  Rng rng(6);
  const Fixture f = random_fixture(rng, 8, 8);
  std::vector<double> fv(4 * 2 * 2);
  for (auto& v : fv) v = rng.normal();
  const Tensor feat = Tensor::from_data({4, 2, 2}, fv);
  const SuperpixelMask mask{2, 2, {0, 0, 1, 1}, 2};

  const auto zero = total_loss(f.pred, f.label, feat, mask, {0.0, 0.0}, {});
  CHECK(zero.total.item() == base_bce_loss(f.pred, f.label).item());

  const LossWeights w{0.7, 0.3};
  const auto b = total_loss(f.pred, f.label, feat, mask, w, {});
  CHECK(std::abs(b.total.item() - (b.bce + w.lambda1 * b.c3 + w.lambda2 * b.intra)) <= 1e-12);

  const auto one = total_loss(triple(0.1, 0.5, 0.9), label1(1, 0, 1), Tensor::zeros({2, 1, 1}),
                              SuperpixelMask{1, 1, {0}, 1}, {1.0, 0.0}, {});
  CHECK(one.total.item() ==
        doctest::Approx(base_bce_loss(triple(0.1, 0.5, 0.9), label1(1, 0, 1)).item() + 2.302585)
            .epsilon(1e-6));
}

TEST_CASE("loss weight and contrastive config validation") {
  CHECK_THROWS(LossWeights{-1.0, 0.0}.validate());
  CHECK_THROWS(LossWeights{std::nan(""), 0.0}.validate());
  ContrastiveConfig c;
  c.temperature = 0;
  CHECK_THROWS(c.validate());
  c = {};
  c.negatives_per_anchor = 0;
  CHECK_THROWS(c.validate());
}

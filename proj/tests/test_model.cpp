#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "vesselcouple/data_io.hpp"
#include "vesselcouple/model.hpp"
#include "vesselcouple/ops.hpp"
#include "vesselcouple/rng.hpp"
#include "vesselcouple/superpixel.hpp"
#include "vesselcouple/trainer.hpp"

using namespace vesselcouple;
namespace fs = std::filesystem;

namespace {

Tensor random_input(std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(3 * h * w);
  for (auto& x : v) x = rng.normal();
  return Tensor::from_data({1, 3, h, w}, v);
}

std::size_t closed_form_params(std::size_t depth, std::size_t base) {
  auto conv = [](std::size_t in, std::size_t out, std::size_t k) { return in * out * k * k + out; };
  std::size_t total = 0, in = 3;
  for (std::size_t l = 0; l < depth; ++l) {
    const std::size_t c = base << l;
    total += conv(in, c, 3) + conv(c, c, 3);
    in = c;
  }
  for (std::size_t l = depth - 1; l-- > 0;) {
    const std::size_t c = base << l;
    total += conv((base << (l + 1)) + c, c, 3) + conv(c, c, 3);
  }
  return total + conv(base, 3, 1);
}

TrainSample synthetic_sample(std::uint64_t seed, std::size_t size) {
  SyntheticTreeConfig cfg;
  cfg.width = cfg.height = size;
  cfg.seed = seed;
  const SyntheticSample s = generate_synthetic(cfg);
  SlicConfig slic;
  TrainSample t;
  t.name = "s" + std::to_string(seed);
  t.image = s.image;
  t.label = s.label;
  t.mask = slic_segment(s.image, slic).mask;
  return t;
}

std::vector<double> flat(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("forward shapes and ranges") {
  for (std::size_t depth : {2, 3, 4}) {
    NetConfig cfg;
    cfg.depth = depth;
    cfg.base_channels = 4;
    const UNet net(cfg, 1);
    const std::size_t h = 16, w = 24;
    const UNet::Output out = net.forward(random_input(h, w, 2));
    for (const Tensor* t : {&out.pred.y_a, &out.pred.y_v, &out.pred.y_bv}) {
      REQUIRE(t->shape() == Shape{h, w});
      for (double v : t->data()) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
      }
    }
    const std::size_t div = std::size_t{1} << (depth - 1);
    CHECK(out.bottleneck.shape() == Shape{1, 4u << (depth - 1), h / div, w / div});
  }
}

TEST_CASE("forward rejects incompatible input") {
  const UNet net(NetConfig{}, 0);
  CHECK_THROWS(net.forward(random_input(10, 16, 0)));
  CHECK_THROWS(net.forward(Tensor::zeros({1, 1, 16, 16})));
}

TEST_CASE("parameter count matches the closed form") {
  for (std::size_t depth : {2, 3, 5}) {
    for (std::size_t base : {1, 4, 8}) {
      NetConfig cfg;
      cfg.depth = depth;
      cfg.base_channels = base;
      const UNet net(cfg, 3);
      CHECK(net.parameter_count() == closed_form_params(depth, base));
      CHECK(UNet::expected_parameter_count(cfg) == closed_form_params(depth, base));
    }
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  NetConfig cfg;
  cfg.base_channels = 4;
  const UNet net(cfg, 9);
  const auto path = fs::temp_directory_path() / "vc_ckpt.vckp";
  net.save(path);
  const UNet back = UNet::load(path);
  CHECK(back.config() == cfg);
  const Tensor x = random_input(16, 16, 4);
  const auto a = net.forward(x), b = back.forward(x);
  CHECK(flat(a.pred.y_a) == flat(b.pred.y_a));
  CHECK(flat(a.pred.y_v) == flat(b.pred.y_v));
  CHECK(flat(a.pred.y_bv) == flat(b.pred.y_bv));
  CHECK(flat(a.bottleneck) == flat(b.bottleneck));

  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  CHECK_THROWS_AS(UNet::load(path), CheckpointError);
  {
    std::ofstream f(path, std::ios::binary);
    f.write("VCKP", 4);
  }
  CHECK_THROWS_AS(UNet::load(path), CheckpointError);
  fs::remove(path);
}

TEST_CASE("different seeds initialize differently; clones are independent") {
  const UNet a(NetConfig{}, 1), b(NetConfig{}, 2);
  CHECK(flat(a.parameters()[0]) != flat(b.parameters()[0]));
  UNet c = a.clone();
  c.parameters()[0].mutable_data()[0] += 1.0;
  CHECK(a.parameters()[0][0] != c.parameters()[0][0]);
  for (double v : a.parameters()[1].data()) CHECK(v == 0.0);  // first bias
}

TEST_CASE("adam step") {
  AdamConfig cfg;
  SUBCASE("zero gradient from fresh state leaves parameters") {
    std::vector<double> p{1.0, -2.0};
    AdamState st;
    adam_step(p, std::vector<double>{0.0, 0.0}, st, cfg);
    CHECK(p == std::vector<double>{1.0, -2.0});
    CHECK(st.m == std::vector<double>{0.0, 0.0});
  }
  SUBCASE("zero gradient decays moments and coasts on momentum") {
    std::vector<double> p{1.0, -2.0};
    AdamState st{{0.5, 0.5}, {0.25, 0.25}, 3};
    adam_step(p, std::vector<double>{0.0, 0.0}, st, cfg);
    CHECK(st.m[0] == doctest::Approx(0.45).epsilon(1e-15));
    CHECK(st.v[0] == doctest::Approx(0.25 * 0.999).epsilon(1e-15));
    CHECK(st.t == 4);
    const double m_hat = 0.45 / (1 - std::pow(0.9, 4));
    const double v_hat = 0.25 * 0.999 / (1 - std::pow(0.999, 4));
    CHECK(p[0] == doctest::Approx(1.0 - cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps)));
  }
  SUBCASE("first step has magnitude alpha") {
    std::vector<double> p{0.0};
    AdamState st;
    adam_step(p, std::vector<double>{1.0}, st, cfg);
    CHECK(p[0] == doctest::Approx(-cfg.lr / (1.0 + cfg.eps)).epsilon(1e-15));
    CHECK(st.t == 1);
  }
  SUBCASE("constant gradient steps approach alpha") {
    std::vector<double> p{0.0};
    AdamState st;
    double prev = 0.0, last = 0.0;
    for (int i = 0; i < 500; ++i) {
      prev = p[0];
      adam_step(p, std::vector<double>{-3.0}, st, cfg);
      last = p[0] - prev;
    }
    CHECK(last == doctest::Approx(cfg.lr).epsilon(1e-3));
  }
  SUBCASE("config validation") {
    AdamConfig bad;
    bad.lr = 0;
    CHECK_THROWS(bad.validate());
    bad = {};
    bad.beta2 = 1.0;
    CHECK_THROWS(bad.validate());
  }
}

TEST_CASE("adam skips non-finite gradients") {
  Tensor w = Tensor::from_data({2}, {1.0, 2.0}, true);
  Adam opt({w}, AdamConfig{});
  {
    CheckingScope off(false);
    backward(ops::reduce_sum(ops::log(ops::sub(w, Tensor::scalar(1.0)))));
    CHECK_FALSE(opt.step());
    CHECK(w[0] == 1.0);
    CHECK(opt.steps() == 0);
  }
  backward(ops::reduce_sum(ops::mul(w, w)));
  CHECK(opt.step());
  CHECK(opt.steps() == 1);
  CHECK(w[0] < 1.0);
}

TEST_CASE("augmentation pairs flips with the label") {
  RgbImage img(8, 4);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 8; ++x) img.at(x, y)[0] = static_cast<std::uint8_t>(x * 30);
  std::vector<double> la(32, 0.0), lb(32, 0.0);
  la[0] = lb[0] = lb[1] = 1;  // asymmetric
  const AVLabel label{Tensor::from_data({4, 8}, la), Tensor::zeros({4, 8}),
                      Tensor::from_data({4, 8}, lb)};
  AugmentConfig cfg;
  cfg.intensity = cfg.affine = cfg.cutout = false;
  int flipped = 0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const AugmentedSample s = augment(img, label, cfg, seed);
    const bool img_flipped = s.image.at(0, 0)[0] == 7 * 30;
    const bool lab_flipped = s.label.l_a[7] == 1.0;
    CHECK(img_flipped == lab_flipped);
    if (!img_flipped) CHECK(s.image == img);
    flipped += img_flipped;
  }
  CHECK(flipped > 5);
  CHECK(flipped < 35);
}

TEST_CASE("augmentation keeps labels binary and is deterministic") {
  const TrainSample t = synthetic_sample(3, 64);
  const AugmentConfig cfg;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const AugmentedSample a = augment(t.image, t.label, cfg, seed, &t.mask);
    const AugmentedSample b = augment(t.image, t.label, cfg, seed, &t.mask);
    CHECK(a.image == b.image);
    CHECK(flat(a.label.l_bv) == flat(b.label.l_bv));
    CHECK(*a.mask == *b.mask);
    for (const Tensor* l : {&a.label.l_a, &a.label.l_v, &a.label.l_bv}) {
      for (double v : l->data()) REQUIRE((v == 0.0 || v == 1.0));
    }
    CHECK_NOTHROW(validate_label(a.label));
    const SuperpixelMask& m = *a.mask;
    std::vector<bool> used(m.clusters, false);
    for (auto l : m.labels) {
      REQUIRE(l >= 0);
      REQUIRE(static_cast<std::size_t>(l) < m.clusters);
      used[l] = true;
    }
    for (bool u : used) CHECK(u);
  }
}

TEST_CASE("split_train_val") {
  std::vector<TrainSample> all;
  for (int i = 0; i < 25; ++i) {
    TrainSample s;
    s.name = std::to_string(i);
    all.push_back(s);
  }
  std::vector<TrainSample> tr, va, tr2, va2;
  split_train_val(all, 0.2, 7, tr, va);
  CHECK(tr.size() == 20);
  CHECK(va.size() == 5);
  split_train_val(all, 0.2, 7, tr2, va2);
  for (std::size_t i = 0; i < 5; ++i) CHECK(va[i].name == va2[i].name);
  split_train_val(std::vector<TrainSample>(all.begin(), all.begin() + 2), 0.1, 1, tr, va);
  CHECK(va.size() == 1);
  CHECK(tr.size() == 1);
  split_train_val(std::vector<TrainSample>(all.begin(), all.begin() + 2), 0.0, 1, tr, va);
  CHECK(va.empty());
}

TEST_CASE("training loss decreases on a single image") {
  const TrainSample s = synthetic_sample(11, 64);
  TrainConfig cfg;
  cfg.max_epochs = 50;
  cfg.augment = {false, false, false, false};
  const TrainResult r = train({s}, {}, NetConfig{}, cfg);
  REQUIRE(r.history.size() == 50);
  double first = 0, last = 0;
  for (std::size_t i = 0; i < 5; ++i) {
    first += r.history[i].total;
    last += r.history[45 + i].total;
  }
  CHECK(last < first);
  CHECK(r.history.back().total < r.history.front().total);
}

TEST_CASE("zero weights reproduce the BCE baseline") {
  const TrainSample s = synthetic_sample(2, 32);
  TrainConfig cfg;
  cfg.max_epochs = 3;
  cfg.weights = {0.0, 0.0};
  NetConfig net;
  net.base_channels = 4;
  const TrainResult r = train({s}, {}, net, cfg);
  for (const auto& e : r.history) {
    CHECK(e.total == e.bce);
    CHECK(e.c3 > 0.0);
  }
}

TEST_CASE("training is deterministic and honors early stopping") {
  std::vector<TrainSample> tr{synthetic_sample(1, 32), synthetic_sample(2, 32)};
  std::vector<TrainSample> va{synthetic_sample(3, 32)};
  TrainConfig cfg;
  cfg.adam.lr = 1e-2;
  cfg.max_epochs = 25;
  cfg.patience = 3;
  NetConfig net;
  net.base_channels = 4;
  const TrainResult a = train(tr, va, net, cfg);
  const TrainResult b = train(tr, va, net, cfg);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].total == b.history[i].total);
    CHECK(a.history[i].val_total == b.history[i].val_total);
    CHECK(a.history[i].av_acc == b.history[i].av_acc);
  }
  const auto dir = fs::temp_directory_path();
  write_history_csv(dir / "vc_h1.csv", a.history);
  write_history_csv(dir / "vc_h2.csv", b.history);
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  const std::string csv = slurp(dir / "vc_h1.csv");
  CHECK(csv == slurp(dir / "vc_h2.csv"));
  CHECK(csv.rfind("epoch,bce,c3,intra,total,val_total,av_acc\n", 0) == 0);
  fs::remove(dir / "vc_h1.csv");
  fs::remove(dir / "vc_h2.csv");

  CHECK(a.history.size() - a.best_epoch <= cfg.patience);
  if (a.early_stopped) CHECK(a.history.size() - a.best_epoch == cfg.patience);
  for (std::size_t i = 1; i < a.history.size(); ++i) {
    CHECK(a.history[i].best_val <= a.history[i - 1].best_val);
  }
  CHECK(a.best_val == a.history[a.best_epoch - 1].val_total.value());

  // The returned model is the best epoch's.
  const UNet::Output o = predict(a.model, va[0].image, cfg.preprocess);
  CHECK(o.pred.y_a.shape() == Shape{32, 32});
}

TEST_CASE("training input validation") {
  TrainConfig cfg;
  CHECK_THROWS(train({}, {}, NetConfig{}, cfg));
  TrainSample odd = synthetic_sample(1, 32);
  odd.image = RgbImage(30, 30);
  CHECK_THROWS(train({odd}, {}, NetConfig{}, cfg));
  cfg.patience = 0;
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("fast schedule") {
  TrainConfig cfg;
  cfg.apply_fast();
  CHECK(cfg.patience == 20);
  CHECK(cfg.max_epochs == 300);
  cfg.max_epochs = 40;
  cfg.apply_fast();
  CHECK(cfg.max_epochs == 40);
}

TEST_CASE("predict pads and crops") {
  const UNet net(NetConfig{}, 5);
  RgbImage img(30, 18);
  const UNet::Output o = predict(net, img);
  CHECK(o.pred.y_bv.shape() == Shape{18, 30});
}

TEST_CASE("vessel anchor eligibility") {
  std::vector<double> b(16, 0.0);
  b[0] = 1;
  const AVLabel l{Tensor::zeros({4, 4}), Tensor::zeros({4, 4}), Tensor::from_data({4, 4}, b)};
  const auto e = vessel_anchor_mask(l, 2, 2);
  CHECK(e == std::vector<bool>{true, false, false, false});
}

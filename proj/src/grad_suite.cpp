#include "vesselcouple/grad_suite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "vesselcouple/grad_check.hpp"
#include "vesselcouple/losses.hpp"
#include "vesselcouple/model.hpp"
#include "vesselcouple/ops.hpp"
#include "vesselcouple/rng.hpp"

namespace vesselcouple {

namespace {

constexpr double kStep = 1e-6;
constexpr double kMargin = 1e-3;  // distance kept from kinks and ties
constexpr double kKinkSlack = 1e-4;

using Unary = std::function<Tensor(const Tensor&)>;

Tensor uniform(Rng& rng, const Shape& shape, double lo, double hi) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_data(shape, std::move(v));
}

// Uniform values with |x - k| > margin for every kink k.
Tensor away_from(Rng& rng, const Shape& shape, double lo, double hi,
                 const std::vector<double>& kinks) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) {
    do {
      x = rng.uniform(lo, hi);
    } while (std::any_of(kinks.begin(), kinks.end(),
                         [&](double k) { return std::abs(x - k) <= kMargin; }));
  }
  return Tensor::from_data(shape, std::move(v));
}

// b is a with a random offset of magnitude > margin, so min(a, b) has no ties.
Tensor untied_with(Rng& rng, const Tensor& a, double lo, double hi) {
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) {
    do {
      v[i] = rng.uniform(lo, hi);
    } while (std::abs(v[i] - a[i]) <= kMargin);
  }
  return Tensor::from_data(a.shape(), std::move(v));
}

Tensor binary_labels(Rng& rng, const Shape& shape) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.bernoulli(0.5) ? 1.0 : 0.0;
  return Tensor::from_data(shape, std::move(v));
}

// Pooling windows of [N, C, H, W] with all entries separated by > margin.
Tensor untied_windows(Rng& rng, const Shape& shape) {
  for (;;) {
    Tensor t = uniform(rng, shape, -1.0, 1.0);
    const std::size_t h = shape[2], w = shape[3];
    bool ok = true;
    for (std::size_t p = 0; p < shape[0] * shape[1] && ok; ++p) {
      for (std::size_t y = 0; y < h && ok; y += 2) {
        for (std::size_t x = 0; x < w && ok; x += 2) {
          double vals[4];
          for (std::size_t k = 0; k < 4; ++k) vals[k] = t[p * h * w + (y + k / 2) * w + x + k % 2];
          for (int i = 0; i < 4; ++i) {
            for (int j = i + 1; j < 4; ++j) ok = ok && std::abs(vals[i] - vals[j]) > kMargin;
          }
        }
      }
    }
    if (ok) return t;
  }
}

// Scalar probe of a tensor-valued op: sum(op(x) * r) for a fixed random r.
Unary weighted(const std::function<Tensor(const Tensor&)>& op, const Tensor& r) {
  return [op, r](const Tensor& x) { return ops::reduce_sum(ops::mul(op(x), r)); };
}

struct Accumulator {
  GradSuiteResult result;

  Accumulator(std::string name, double tol) {
    result.name = std::move(name);
    result.tolerance = tol;
    result.passed = true;
  }
  void add(const GradCheckReport& r) {
    result.max_rel_error = std::max(result.max_rel_error, r.max_rel_error);
    result.passed = result.passed && r.passed;
  }
  void check(const Unary& f, const Tensor& x) {
    add(grad_check(f, x, kStep, result.tolerance));
  }
};

Tensor random_weights(Rng& rng, const Shape& shape) { return uniform(rng, shape, -1.0, 1.0); }

void run_ops(std::vector<GradSuiteResult>& out, std::size_t seeds, std::uint64_t base) {
  const Shape s{3, 4};
  const double tol = kOpGradTolerance;
  struct Entry {
    const char* name;
    std::function<void(Rng&, Accumulator&)> run;
  };
  const std::vector<Entry> entries = {
      {"add",
       [&](Rng& rng, Accumulator& acc) {
         const Tensor a = uniform(rng, s, -2, 2), b = uniform(rng, s, -2, 2);
         const Tensor r = random_weights(rng, s);
         acc.check(weighted([&](const Tensor& x) { return ops::add(x, b); }, r), a);
         acc.check(weighted([&](const Tensor& x) { return ops::add(a, x); }, r), b);
         const Tensor c = uniform(rng, {1}, -2, 2);
         acc.check(weighted([&](const Tensor& x) { return ops::add(a, x); }, r), c);
       }},
      {"sub",
       [&](Rng& rng, Accumulator& acc) {
         const Tensor a = uniform(rng, s, -2, 2), b = uniform(rng, s, -2, 2);
         const Tensor r = random_weights(rng, s);
         acc.check(weighted([&](const Tensor& x) { return ops::sub(x, b); }, r), a);
         acc.check(weighted([&](const Tensor& x) { return ops::sub(a, x); }, r), b);
         const Tensor c = uniform(rng, {1}, -2, 2);
         acc.check(weighted([&](const Tensor& x) { return ops::sub(x, a); }, r), c);
       }},
      {"mul",
       [&](Rng& rng, Accumulator& acc) {
         const Tensor a = uniform(rng, s, -2, 2), b = uniform(rng, s, -2, 2);
         const Tensor r = random_weights(rng, s);
         acc.check(weighted([&](const Tensor& x) { return ops::mul(x, b); }, r), a);
         acc.check(weighted([&](const Tensor& x) { return ops::mul(a, x); }, r), b);
         const Tensor c = uniform(rng, {1}, -2, 2);
         acc.check(weighted([&](const Tensor& x) { return ops::mul(a, x); }, r), c);
       }},
      {"scalar_mul",
       [&](Rng& rng, Accumulator& acc) {
         const Tensor a = uniform(rng, s, -2, 2), r = random_weights(rng, s);
         const double k = rng.uniform(-3, 3);
         acc.check(weighted([&](const Tensor& x) { return ops::scalar_mul(x, k); }, r), a);
       }},
      {"add_scalar",
       [&](Rng& rng, Accumulator& acc) {
         const Tensor a = uniform(rng, s, -2, 2), r = random_weights(rng, s);
         const double k = rng.uniform(-3, 3);
         acc.check(weighted([&](const Tensor& x) { return ops::add_scalar(x, k); }, r), a);
       }},
      {"sigmoid",
       [&](Rng& rng, Accumulator& acc) {
         const Tensor a = uniform(rng, s, -4, 4), r = random_weights(rng, s);
         acc.check(weighted(ops::sigmoid, r), a);
       }},
      {"log",
       [&](Rng& rng, Accumulator& acc) {
         const Tensor a = uniform(rng, s, 0.2, 3.0), r = random_weights(rng, s);
         acc.check(weighted([](const Tensor& x) { return ops::log(x); }, r), a);
       }},
      {"relu",
       [&](Rng& rng, Accumulator& acc) {
         const Tensor a = away_from(rng, s, -2, 2, {0.0}), r = random_weights(rng, s);
         acc.check(weighted(ops::relu, r), a);
       }},
      {"clamp",
       [&](Rng& rng, Accumulator& acc) {
         const Tensor a = away_from(rng, s, -1, 1, {-0.5, 0.5}), r = random_weights(rng, s);
         acc.check(weighted([](const Tensor& x) { return ops::clamp(x, -0.5, 0.5); }, r), a);
       }},
      {"elementwise_min",
       [&](Rng& rng, Accumulator& acc) {
         const Tensor a = uniform(rng, s, 0, 1), b = untied_with(rng, a, 0, 1);
         const Tensor r = random_weights(rng, s);
         acc.check(weighted([&](const Tensor& x) { return ops::elementwise_min(x, b); }, r), a);
         acc.check(weighted([&](const Tensor& x) { return ops::elementwise_min(a, x); }, r), b);
       }},
      {"reduce_mean",
       [&](Rng& rng, Accumulator& acc) {
         const Tensor a = uniform(rng, s, -2, 2);
         acc.check([](const Tensor& x) { return ops::reduce_mean(x); }, a);
       }},
      {"reduce_sum",
       [&](Rng& rng, Accumulator& acc) {
         const Tensor a = uniform(rng, s, -2, 2);
         acc.check([](const Tensor& x) { return ops::reduce_sum(x); }, a);
       }},
      {"conv2d",
       [&](Rng& rng, Accumulator& acc) {
         const Tensor x = uniform(rng, {1, 2, 5, 6}, -1, 1);
         const Tensor w = uniform(rng, {3, 2, 3, 3}, -1, 1);
         const Tensor b = uniform(rng, {3}, -1, 1);
         for (const ops::Conv2dOptions opt : {ops::Conv2dOptions{1, 1}, ops::Conv2dOptions{2, 0}}) {
           const std::size_t oh = (5 + 2 * opt.padding - 3) / opt.stride + 1;
           const std::size_t ow = (6 + 2 * opt.padding - 3) / opt.stride + 1;
           const Tensor r = random_weights(rng, {1, 3, oh, ow});
           acc.check(weighted([&](const Tensor& t) { return ops::conv2d(t, w, b, opt); }, r), x);
           acc.check(weighted([&](const Tensor& t) { return ops::conv2d(x, t, b, opt); }, r), w);
           acc.check(weighted([&](const Tensor& t) { return ops::conv2d(x, w, t, opt); }, r), b);
         }
       }},
      {"maxpool2x",
       [&](Rng& rng, Accumulator& acc) {
         const Tensor x = untied_windows(rng, {1, 2, 4, 6});
         const Tensor r = random_weights(rng, {1, 2, 2, 3});
         acc.check(weighted(ops::maxpool2x, r), x);
       }},
      {"upsample2x_nearest",
       [&](Rng& rng, Accumulator& acc) {
         const Tensor x = uniform(rng, {1, 2, 3, 2}, -1, 1);
         const Tensor r = random_weights(rng, {1, 2, 6, 4});
         acc.check(weighted(ops::upsample2x_nearest, r), x);
       }},
      {"concat_channels",
       [&](Rng& rng, Accumulator& acc) {
         const Tensor a = uniform(rng, {1, 2, 3, 3}, -1, 1), b = uniform(rng, {1, 1, 3, 3}, -1, 1);
         const Tensor r = random_weights(rng, {1, 3, 3, 3});
         acc.check(weighted([&](const Tensor& t) { return ops::concat_channels(t, b); }, r), a);
         acc.check(weighted([&](const Tensor& t) { return ops::concat_channels(a, t); }, r), b);
       }},
      {"channel",
       [&](Rng& rng, Accumulator& acc) {
         const Tensor x = uniform(rng, {1, 3, 3, 4}, -1, 1);
         const Tensor r = random_weights(rng, {3, 4});
         const std::size_t c = rng.index(3);
         acc.check(weighted([c](const Tensor& t) { return ops::channel(t, c); }, r), x);
       }},
  };
  for (std::size_t e = 0; e < entries.size(); ++e) {
    Accumulator acc(entries[e].name, tol);
    for (std::size_t k = 0; k < seeds; ++k) {
      Rng rng(Rng::mix(Rng::mix(base, e), k));
      entries[e].run(rng, acc);
      ++acc.result.trials;
    }
    out.push_back(acc.result);
  }
}

// Random valid label with every class present in quantity.
AVLabel random_label(Rng& rng, std::size_t h, std::size_t w) {
  std::vector<double> a(h * w), v(h * w), bv(h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    switch (rng.index(5)) {
      case 0: a[i] = 1, v[i] = 0, bv[i] = 1; break;
      case 1: a[i] = 0, v[i] = 1, bv[i] = 1; break;
      case 2: a[i] = 1, v[i] = 1, bv[i] = 1; break;
      case 3: a[i] = 0, v[i] = 0, bv[i] = 1; break;
      default: a[i] = 0, v[i] = 0, bv[i] = 0; break;
    }
  }
  return {Tensor::from_data({h, w}, std::move(a)), Tensor::from_data({h, w}, std::move(v)),
          Tensor::from_data({h, w}, std::move(bv))};
}

// Probabilities inside the BCE clamp with every pair separated by > margin,
// so each min picks a unique argument.
PredictionTriple random_prediction(Rng& rng, std::size_t h, std::size_t w) {
  std::vector<double> a(h * w), v(h * w), bv(h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    do {
      a[i] = rng.uniform(0.05, 0.95);
      v[i] = rng.uniform(0.05, 0.95);
      bv[i] = rng.uniform(0.05, 0.95);
    } while (std::abs(a[i] - v[i]) <= kMargin || std::abs(a[i] - bv[i]) <= kMargin ||
             std::abs(v[i] - bv[i]) <= kMargin);
  }
  return {Tensor::from_data({h, w}, std::move(a)), Tensor::from_data({h, w}, std::move(v)),
          Tensor::from_data({h, w}, std::move(bv))};
}

SuperpixelMask random_mask(Rng& rng, std::size_t h, std::size_t w, std::size_t clusters) {
  std::vector<std::int32_t> raw(h * w);
  for (auto& l : raw) l = static_cast<std::int32_t>(rng.index(clusters));
  return compact_labels(w, h, raw);
}

void run_losses(std::vector<GradSuiteResult>& out, std::size_t seeds, std::uint64_t base) {
  const std::size_t h = 6, w = 7;
  const double tol = kLossGradTolerance;
  ContrastiveConfig cc;
  cc.anchors_per_image = 16;
  cc.positives_per_anchor = 3;
  cc.negatives_per_anchor = 6;

  // Replaces one channel of a prediction by the probed tensor.
  auto with = [](PredictionTriple p, std::size_t which, const Tensor& t) {
    (which == 0 ? p.y_a : which == 1 ? p.y_v : p.y_bv) = t;
    return p;
  };
  auto channel_of = [](const PredictionTriple& p, std::size_t which) {
    return which == 0 ? p.y_a : which == 1 ? p.y_v : p.y_bv;
  };

  struct Entry {
    const char* name;
    std::function<void(Rng&, Accumulator&)> run;
  };
  const std::vector<Entry> entries = {
      {"bce",
       [&](Rng& rng, Accumulator& acc) {
         const Tensor y = uniform(rng, {h, w}, 0.05, 0.95), l = binary_labels(rng, {h, w});
         acc.check([&](const Tensor& t) { return bce(t, l); }, y);
       }},
      {"c3_loss",
       [&](Rng& rng, Accumulator& acc) {
         const AVLabel label = random_label(rng, h, w);
         const PredictionTriple pred = random_prediction(rng, h, w);
         for (std::size_t c = 0; c < 3; ++c) {
           acc.check([&](const Tensor& t) { return c3_loss(with(pred, c, t), label); },
                     channel_of(pred, c));
         }
       }},
      {"base_bce_loss",
       [&](Rng& rng, Accumulator& acc) {
         const AVLabel label = random_label(rng, h, w);
         const PredictionTriple pred = random_prediction(rng, h, w);
         for (std::size_t c = 0; c < 3; ++c) {
           acc.check([&](const Tensor& t) { return base_bce_loss(with(pred, c, t), label); },
                     channel_of(pred, c));
         }
       }},
      {"intra_loss",
       [&](Rng& rng, Accumulator& acc) {
         const Tensor f = uniform(rng, {5, 4, 4}, -1, 1);
         const SuperpixelMask mask = random_mask(rng, 4, 4, 3);
         ContrastiveConfig cfg = cc;
         cfg.seed = rng.next();
         acc.check([&](const Tensor& t) { return intra_loss(t, mask, cfg).loss; }, f);
       }},
      {"total_loss",
       [&](Rng& rng, Accumulator& acc) {
         const AVLabel label = random_label(rng, h, w);
         const PredictionTriple pred = random_prediction(rng, h, w);
         const Tensor f = uniform(rng, {1, 5, 3, 4}, -1, 1);
         const SuperpixelMask mask = random_mask(rng, 3, 4, 3);
         ContrastiveConfig cfg = cc;
         cfg.seed = rng.next();
         const LossWeights lw{rng.uniform(0.0, 2.0), rng.uniform(0.0, 1.0)};
         for (std::size_t c = 0; c < 3; ++c) {
           acc.check(
               [&](const Tensor& t) {
                 return total_loss(with(pred, c, t), label, f, mask, lw, cfg).total;
               },
               channel_of(pred, c));
         }
         acc.check([&](const Tensor& t) { return total_loss(pred, label, t, mask, lw, cfg).total; },
                   f);
       }},
  };
  for (std::size_t e = 0; e < entries.size(); ++e) {
    Accumulator acc(entries[e].name, tol);
    for (std::size_t k = 0; k < seeds; ++k) {
      Rng rng(Rng::mix(Rng::mix(base ^ 0x105535ULL, e), k));
      entries[e].run(rng, acc);
      ++acc.result.trials;
    }
    out.push_back(acc.result);
  }
}

void run_end2end(std::vector<GradSuiteResult>& out, std::size_t seeds, std::uint64_t base) {
  Accumulator acc("end2end_total_loss", kEnd2EndGradTolerance);
  const std::size_t size = 16;
  for (std::size_t k = 0; k < seeds; ++k) {
    Rng rng(Rng::mix(base ^ 0xe2eULL, k));
    const UNet net(NetConfig{}, rng.next());
    // Zero biases put dead regions exactly on relu kinks and make the three
    // heads tie in the min fusion, so draw them at random instead.
    for (Tensor p : net.parameters()) {
      if (p.shape().size() != 1) continue;
      for (double& b : p.mutable_data()) b = rng.uniform(-0.1, 0.1);
    }
    const Tensor x = uniform(rng, {1, 3, size, size}, -1, 1);
    const AVLabel label = random_label(rng, size, size);
    const std::size_t bh = size / net.config().divisor();
    const SuperpixelMask mask = random_mask(rng, bh, bh, 4);
    ContrastiveConfig cfg;
    cfg.anchors_per_image = 8;
    cfg.seed = rng.next();
    const LossWeights lw;

    const auto loss = [&] {
      const UNet::Output o = net.forward(x);
      return total_loss(o.pred, label, o.bottleneck, mask, lw, cfg).total;
    };
    const double center = [&] {
      NoGradGuard no_grad;
      return loss().item();
    }();
    // A relu or pool kink within one step of the probe makes the one-sided
    // slopes disagree; central differences are meaningless there, so redraw.
    auto smooth = [&](const GradProbe& probe) {
      NoGradGuard no_grad;
      Tensor t = probe.tensor;
      auto values = t.mutable_data();
      const double original = values[probe.index];
      values[probe.index] = original + kStep;
      const double up = loss().item();
      values[probe.index] = original - kStep;
      const double down = loss().item();
      values[probe.index] = original;
      const double fwd = (up - center) / kStep, bwd = (center - down) / kStep;
      return std::abs(fwd - bwd) <= kKinkSlack * std::max({std::abs(fwd), std::abs(bwd), 1e-3});
    };

    std::vector<GradProbe> probes;
    const auto params = net.parameters();
    std::size_t total = 0;
    for (const Tensor& p : params) total += p.numel();
    for (std::size_t draws = 0; probes.size() < 50 && draws < 500; ++draws) {
      std::size_t flat = rng.index(total);
      for (const Tensor& p : params) {
        if (flat < p.numel()) {
          if (smooth({p, flat})) probes.push_back({p, flat});
          else ++acc.result.rejected;
          break;
        }
        flat -= p.numel();
      }
    }
    acc.add(grad_check_params(loss, probes, kStep, acc.result.tolerance));
    ++acc.result.trials;
  }
  out.push_back(acc.result);
}

}  // namespace

GradScope grad_scope_from_string(const std::string& s) {
  if (s == "ops") return GradScope::kOps;
  if (s == "losses") return GradScope::kLosses;
  if (s == "end2end") return GradScope::kEnd2End;
  throw std::invalid_argument("unknown grad-check scope '" + s + "' (ops, losses, end2end)");
}

std::vector<GradSuiteResult> run_grad_suite(GradScope scope, std::size_t seeds,
                                            std::uint64_t base_seed) {
  std::vector<GradSuiteResult> out;
  switch (scope) {
    case GradScope::kOps: run_ops(out, seeds, base_seed); break;
    case GradScope::kLosses: run_losses(out, seeds, base_seed); break;
    case GradScope::kEnd2End: run_end2end(out, seeds, base_seed); break;
  }
  return out;
}

}  // namespace vesselcouple

#include <doctest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "vesselcouple/grad_check.hpp"
#include "vesselcouple/losses.hpp"
#include "vesselcouple/ops.hpp"
#include "vesselcouple/rng.hpp"
#include "vesselcouple/tensor.hpp"
#include "vesselcouple/vtsr.hpp"

using namespace vesselcouple;

namespace {

Tensor vec(std::vector<double> v, bool grad = false) {
  const std::size_t n = v.size();
  return Tensor::from_data({n}, std::move(v), grad);
}

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_data(std::move(shape), std::move(v));
}

// Direct seven-loop cross-correlation.
std::vector<double> naive_conv(const Tensor& x, const Tensor& w, const Tensor& b,
                               std::size_t stride, std::size_t pad) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t o = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1;
  const std::size_t ow = (wd + 2 * pad - kw) / stride + 1;
  std::vector<double> out(n * o * oh * ow, 0.0);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t oc = 0; oc < o; ++oc)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xo = 0; xo < ow; ++xo) {
          double acc = b.numel() ? b[oc] : 0.0;
          for (std::size_t ic = 0; ic < c; ++ic)
            for (std::size_t i = 0; i < kh; ++i)
              for (std::size_t j = 0; j < kw; ++j) {
                const long yy = static_cast<long>(y * stride + i) - static_cast<long>(pad);
                const long xx = static_cast<long>(xo * stride + j) - static_cast<long>(pad);
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(wd))
                  continue;
                acc += x[((s * c + ic) * h + yy) * wd + xx] * w[((oc * c + ic) * kh + i) * kw + j];
              }
          out[((s * o + oc) * oh + y) * ow + xo] = acc;
        }
  return out;
}

}  // namespace

TEST_CASE("elementwise_min values and gradient routing") {
  SUBCASE("values") {
    const Tensor r = ops::elementwise_min(vec({0.3, 0.9}), vec({0.8, 0.8}));
    CHECK(r[0] == 0.3);
    CHECK(r[1] == 0.8);
  }
  SUBCASE("tie splits the gradient") {
    Tensor a = vec({0.5}, true), b = vec({0.5}, true);
    backward(ops::reduce_sum(ops::elementwise_min(a, b)));
    CHECK(a.grad()[0] == 0.5);
    CHECK(b.grad()[0] == 0.5);
  }
  SUBCASE("gradient goes to the smaller operand") {
    Tensor a = vec({0.2}, true), b = vec({0.7}, true);
    backward(ops::scalar_mul(ops::reduce_sum(ops::elementwise_min(a, b)), 2.0));
    CHECK(a.grad()[0] == 2.0);
    CHECK(b.grad()[0] == 0.0);
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(ops::elementwise_min(vec({1, 2}), vec({1, 2, 3})), TensorError);
  }
}

TEST_CASE("elementwise_min never exceeds either input") {
  Rng rng(11);
  for (int t = 0; t < 100; ++t) {
    const Tensor a = random_tensor({7, 5}, rng), b = random_tensor({7, 5}, rng);
    const Tensor m = ops::elementwise_min(a, b);
    for (std::size_t i = 0; i < m.numel(); ++i) {
      REQUIRE(m[i] <= a[i]);
      REQUIRE(m[i] <= b[i]);
    }
  }
}

TEST_CASE("scalar op values") {
  CHECK(ops::sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  CHECK(ops::reduce_mean(vec({1, 2, 3})).item() == 2.0);
}

TEST_CASE("sigmoid derivative at zero") {
  Tensor x = Tensor::scalar(0.0, true);
  backward(ops::sigmoid(x));
  CHECK(x.grad()[0] == doctest::Approx(0.25).epsilon(1e-15));
  const double h = 1e-5;
  const double fd = (1.0 / (1.0 + std::exp(-h)) - 1.0 / (1.0 + std::exp(h))) / (2 * h);
  CHECK(std::abs(x.grad()[0] - fd) < 1e-8);
}

TEST_CASE("conv2d and upsample examples") {
  const Tensor ones = Tensor::full({1, 1, 3, 3}, 1.0);
  const Tensor r = ops::conv2d(ones, ones, Tensor());
  CHECK(r.shape() == Shape{1, 1, 1, 1});
  CHECK(r.item() == 9.0);

  const Tensor u = ops::upsample2x_nearest(Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4}));
  const std::vector<double> expected{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  CHECK(std::vector<double>(u.data().begin(), u.data().end()) == expected);
}

TEST_CASE("conv2d matches a direct loop") {
  Rng rng(5);
  struct Case { std::size_t n, c, h, w, o, k, stride, pad; };
  for (const Case cs : {Case{1, 3, 8, 8, 4, 3, 1, 1}, Case{2, 2, 7, 5, 3, 3, 2, 0},
                        Case{1, 4, 6, 6, 2, 1, 1, 0}, Case{1, 1, 9, 9, 2, 5, 2, 2}}) {
    const Tensor x = random_tensor({cs.n, cs.c, cs.h, cs.w}, rng);
    const Tensor w = random_tensor({cs.o, cs.c, cs.k, cs.k}, rng);
    const Tensor b = random_tensor({cs.o}, rng);
    const Tensor y = ops::conv2d(x, w, b, {cs.stride, cs.pad});
    const auto expected = naive_conv(x, w, b, cs.stride, cs.pad);
    REQUIRE(y.numel() == expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) {
      CHECK(y[i] == doctest::Approx(expected[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("conv2d gradient against finite differences") {
  Rng rng(9);
  const Tensor w = random_tensor({2, 1, 3, 3}, rng);
  const Tensor r = random_tensor({1, 2, 5, 5}, rng);
  const Tensor x = random_tensor({1, 1, 5, 5}, rng);
  auto f = [&](const Tensor& in) {
    return ops::reduce_sum(ops::mul(ops::conv2d(in, w, Tensor(), {1, 1}), r));
  };
  const GradCheckReport rep = grad_check(f, x, 1e-5, 1e-6);
  CHECK(rep.max_rel_error < 1e-6);
  CHECK(rep.checked == 25);
}

TEST_CASE("conv2d rejects incompatible shapes") {
  CHECK_THROWS_AS(ops::conv2d(Tensor::zeros({1, 2, 5, 5}), Tensor::zeros({1, 3, 3, 3}), Tensor()),
                  TensorError);
  CHECK_THROWS_AS(ops::maxpool2x(Tensor::zeros({1, 1, 3, 4})), TensorError);
  CHECK_THROWS_AS(
      ops::concat_channels(Tensor::zeros({1, 1, 4, 4}), Tensor::zeros({1, 1, 2, 4})),
      TensorError);
}

TEST_CASE("backward of mean of squares") {
  Tensor x = vec({1, 2}, true);
  backward(ops::reduce_mean(ops::mul(x, x)));
  CHECK(x.grad() == std::vector<double>{1.0, 2.0});
}

TEST_CASE("backward on a non-scalar is an error") {
  Tensor x = vec({1, 2}, true);
  CHECK_THROWS_AS(backward(ops::mul(x, x)), TensorError);
  Tape::current().clear();
}

TEST_CASE("grad_check on bce of sigmoid") {
  Rng rng(3);
  for (int t = 0; t < 10; ++t) {
    const Tensor z = random_tensor({6, 6}, rng, -3.0, 3.0);
    std::vector<double> lv(36);
    for (auto& v : lv) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
    const Tensor l = Tensor::from_data({6, 6}, lv);
    const auto rep = grad_check([&](const Tensor& in) { return bce(ops::sigmoid(in), l); }, z,
                                1e-5, 1e-6);
    CHECK(rep.max_rel_error < 1e-6);
  }
}

TEST_CASE("backward is linear") {
  Rng rng(21);
  for (int t = 0; t < 20; ++t) {
    const Tensor x0 = random_tensor({4, 4}, rng, 0.1, 2.0);
    const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);
    auto f = [](const Tensor& x) { return ops::reduce_mean(ops::mul(ops::sigmoid(x), x)); };
    auto g = [](const Tensor& x) { return ops::reduce_sum(ops::log(x)); };
    auto grad_of = [&](auto fn) {
      Tensor x = x0.clone(true);
      backward(fn(x));
      return x.grad();
    };
    const auto gf = grad_of(f), gg = grad_of(g);
    const auto gc = grad_of([&](const Tensor& x) {
      return ops::add(ops::scalar_mul(f(x), a), ops::scalar_mul(g(x), b));
    });
    for (std::size_t i = 0; i < gc.size(); ++i) {
      CHECK(std::abs(gc[i] - (a * gf[i] + b * gg[i])) <= 1e-10);
    }
  }
}

TEST_CASE("maxpool routes to the first maximum") {
  Tensor x = Tensor::from_data({1, 1, 2, 2}, {1, 3, 3, 2}, true);
  const Tensor y = ops::maxpool2x(x);
  CHECK(y.item() == 3.0);
  backward(ops::reduce_sum(y));
  CHECK(x.grad() == std::vector<double>{0, 1, 0, 0});
}

TEST_CASE("concat and channel") {
  const Tensor a = Tensor::from_data({1, 1, 1, 2}, {1, 2});
  const Tensor b = Tensor::from_data({1, 2, 1, 2}, {3, 4, 5, 6});
  const Tensor c = ops::concat_channels(a, b);
  CHECK(c.shape() == Shape{1, 3, 1, 2});
  const Tensor ch = ops::channel(c, 2);
  CHECK(ch.shape() == Shape{1, 2});
  CHECK(ch[0] == 5.0);
  CHECK(ch[1] == 6.0);
}

TEST_CASE("checking mode rejects log of non-positive values") {
  CHECK_THROWS_AS(ops::log(vec({0.0})), TensorError);
  CheckingScope off(false);
  CHECK(std::isinf(ops::log(vec({0.0}))[0]));
}

TEST_CASE("no-grad guard records nothing") {
  Tape::current().clear();
  Tensor x = vec({1, 2}, true);
  {
    NoGradGuard g;
    ops::mul(x, x);
  }
  CHECK(Tape::current().size() == 0);
}

TEST_CASE("VTSR round trip") {
  Rng rng(1);
  const Tensor t = random_tensor({2, 3, 4}, rng);
  std::stringstream ss;
  vtsr::write(ss, t);
  const std::string bytes = ss.str();
  CHECK(bytes.substr(0, 4) == "VTSR");
  CHECK(static_cast<int>(bytes[4]) == 2);
  CHECK(static_cast<int>(bytes[5]) == 3);
  CHECK(bytes.size() == 6 + 3 * 8 + 24 * 8);
  const Tensor back = vtsr::read(ss);
  CHECK(back.shape() == t.shape());
  for (std::size_t i = 0; i < t.numel(); ++i) CHECK(back[i] == t[i]);

  std::stringstream s32;
  vtsr::write(s32, t, vtsr::DType::kF32);
  const Tensor b32 = vtsr::read(s32);
  for (std::size_t i = 0; i < t.numel(); ++i) CHECK(b32[i] == static_cast<float>(t[i]));

  std::stringstream bad("XXXX");
  CHECK_THROWS(vtsr::read(bad));
}

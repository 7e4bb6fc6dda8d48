#include "vesselcouple/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <utility>

#include <cblas.h>

namespace vesselcouple::ops {

namespace {

std::atomic<bool> g_corrupt_min{false};

struct ConvGeometry {
  std::size_t c, h, w, kh, kw, stride, pad, oh, ow;

  // Output index range [lo, hi) whose input coordinate o*stride + k - pad
  // lies inside [0, extent).
  std::pair<std::size_t, std::size_t> valid(std::size_t k, std::size_t extent,
                                            std::size_t out_extent) const {
    std::size_t lo = 0;
    while (lo < out_extent && lo * stride + k < pad) ++lo;
    std::size_t hi = out_extent;
    while (hi > lo && (hi - 1) * stride + k - pad >= extent) --hi;
    return {lo, hi};
  }
};

// patches[(ic*kh + ky)*kw + kx][oy*ow + ox] = x[ic][oy*s + ky - p][ox*s + kx - p]
void im2col(const double* x, const ConvGeometry& g, double* patches) {
  const std::size_t cols = g.oh * g.ow;
  for (std::size_t ic = 0; ic < g.c; ++ic) {
    const double* plane = x + ic * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      const auto [y0, y1] = g.valid(ky, g.h, g.oh);
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const auto [x0, x1] = g.valid(kx, g.w, g.ow);
        double* dst = patches + ((ic * g.kh + ky) * g.kw + kx) * cols;
        std::fill_n(dst, cols, 0.0);
        for (std::size_t oy = y0; oy < y1; ++oy) {
          const double* src = plane + (oy * g.stride + ky - g.pad) * g.w + kx - g.pad;
          double* row = dst + oy * g.ow;
          for (std::size_t ox = x0; ox < x1; ++ox) row[ox] = src[ox * g.stride];
        }
      }
    }
  }
}

void col2im_add(const double* patches, const ConvGeometry& g, double* gx) {
  const std::size_t cols = g.oh * g.ow;
  for (std::size_t ic = 0; ic < g.c; ++ic) {
    double* plane = gx + ic * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      const auto [y0, y1] = g.valid(ky, g.h, g.oh);
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const auto [x0, x1] = g.valid(kx, g.w, g.ow);
        const double* src = patches + ((ic * g.kh + ky) * g.kw + kx) * cols;
        for (std::size_t oy = y0; oy < y1; ++oy) {
          double* dst = plane + (oy * g.stride + ky - g.pad) * g.w + kx - g.pad;
          const double* row = src + oy * g.ow;
          for (std::size_t ox = x0; ox < x1; ++ox) dst[ox * g.stride] += row[ox];
        }
      }
    }
  }
}


enum class Broadcast { kNone, kScalarA, kScalarB };

Broadcast binary_layout(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::kNone;
  if (b.numel() == 1) return Broadcast::kScalarB;
  if (a.numel() == 1) return Broadcast::kScalarA;
  throw TensorError(std::string(op) + ": shape mismatch " +
                    shape_to_string(a.shape()) + " vs " +
                    shape_to_string(b.shape()));
}

// Applies f(a_i, b_i) with scalar broadcasting; grad_fn(a_i, b_i) returns the
// pair of local partial derivatives.
template <typename F, typename G>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, F f,
                 G partials) {
  const Broadcast layout = binary_layout(a, b, name);
  const Shape shape = layout == Broadcast::kScalarA ? b.shape() : a.shape();
  const std::size_t n = shape_numel(shape);
  auto da = a.data();
  auto db = b.data();
  auto ia = [layout](std::size_t i) { return layout == Broadcast::kScalarA ? 0 : i; };
  auto ib = [layout](std::size_t i) { return layout == Broadcast::kScalarB ? 0 : i; };

  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(da[ia(i)], db[ib(i)]);

  return make_op_result(
      shape, std::move(out), {a, b},
      [a, b, ia, ib, n, partials](std::span<const double> g,
                                  std::span<std::vector<double>*> grads) {
        auto va = a.data();
        auto vb = b.data();
        for (std::size_t i = 0; i < n; ++i) {
          const auto [pa, pb] = partials(va[ia(i)], vb[ib(i)]);
          if (grads[0]) (*grads[0])[ia(i)] += g[i] * pa;
          if (grads[1]) (*grads[1])[ib(i)] += g[i] * pb;
        }
      });
}

template <typename F, typename D>
Tensor unary_op(const Tensor& x, F f, D derivative) {
  auto dx = x.data();
  std::vector<double> out(dx.size());
  for (std::size_t i = 0; i < dx.size(); ++i) out[i] = f(dx[i]);
  return make_op_result(
      x.shape(), std::move(out), {x},
      [x, derivative](std::span<const double> g,
                      std::span<std::vector<double>*> grads) {
        auto vx = x.data();
        auto& gx = *grads[0];
        for (std::size_t i = 0; i < vx.size(); ++i) gx[i] += g[i] * derivative(vx[i]);
      });
}

void require_rank4(const Tensor& x, const char* op) {
  if (x.rank() != 4) {
    throw TensorError(std::string(op) + ": expected [N,C,H,W], got " +
                      shape_to_string(x.shape()));
  }
}

}  // namespace

namespace testing {
void set_corrupt_min_backward(bool corrupt) { g_corrupt_min = corrupt; }
bool corrupt_min_backward() { return g_corrupt_min; }
}  // namespace testing

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double) { return std::pair{1.0, 1.0}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double) { return std::pair{1.0, -1.0}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double x, double y) { return std::pair{y, x}; });
}

Tensor elementwise_min(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw TensorError("elementwise_min: shape mismatch " +
                      shape_to_string(a.shape()) + " vs " +
                      shape_to_string(b.shape()));
  }
  const bool corrupt = g_corrupt_min;
  return binary_op(
      a, b, "elementwise_min", [](double x, double y) { return std::min(x, y); },
      [corrupt](double x, double y) {
        if (x == y) return std::pair{0.5, 0.5};
        const bool a_smaller = x < y;
        return (a_smaller != corrupt) ? std::pair{1.0, 0.0} : std::pair{0.0, 1.0};
      });
}

Tensor scalar_mul(const Tensor& x, double factor) {
  return unary_op(
      x, [factor](double v) { return v * factor; },
      [factor](double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double offset) {
  return unary_op(
      x, [offset](double v) { return v + offset; }, [](double) { return 1.0; });
}

Tensor sigmoid(const Tensor& x) {
  auto s = [](double v) {
    // Branches keep exp() from overflowing for large |v|.
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  };
  return unary_op(x, s, [s](double v) {
    const double y = s(v);
    return y * (1.0 - y);
  });
}

Tensor log(const Tensor& x) {
  if (checking_enabled()) {
    for (double v : x.data()) {
      if (!(v > 0.0)) throw TensorError("log: non-positive input");
    }
  }
  return unary_op(
      x, [](double v) { return std::log(v); }, [](double v) { return 1.0 / v; });
}

Tensor relu(const Tensor& x) {
  return unary_op(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (!(lo <= hi)) throw TensorError("clamp: lo > hi");
  return unary_op(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Tensor reduce_sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  const std::size_t n = x.numel();
  return make_op_result({}, {s}, {x},
                        [n](std::span<const double> g,
                            std::span<std::vector<double>*> grads) {
                          auto& gx = *grads[0];
                          for (std::size_t i = 0; i < n; ++i) gx[i] += g[0];
                        });
}

Tensor reduce_mean(const Tensor& x) {
  const std::size_t n = x.numel();
  if (n == 0) throw TensorError("reduce_mean of empty tensor");
  double s = 0.0;
  for (double v : x.data()) s += v;
  const double inv = 1.0 / static_cast<double>(n);
  return make_op_result({}, {s * inv}, {x},
                        [n, inv](std::span<const double> g,
                                 std::span<std::vector<double>*> grads) {
                          auto& gx = *grads[0];
                          const double gi = g[0] * inv;
                          for (std::size_t i = 0; i < n; ++i) gx[i] += gi;
                        });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              Conv2dOptions options) {
  require_rank4(x, "conv2d");
  require_rank4(weight, "conv2d weight");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t o = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  const std::size_t stride = options.stride, pad = options.padding;
  if (weight.dim(1) != c) {
    throw TensorError("conv2d: input has " + std::to_string(c) +
                      " channels, kernel expects " + std::to_string(weight.dim(1)));
  }
  const bool has_bias = bias.rank() == 1;
  if (has_bias && bias.dim(0) != o) throw TensorError("conv2d: bias size mismatch");
  if (stride == 0) throw TensorError("conv2d: zero stride");
  if (h + 2 * pad < kh || w + 2 * pad < kw) {
    throw TensorError("conv2d: kernel larger than padded input");
  }
  const ConvGeometry geo{c, h, w, kh, kw, stride, pad,
                         (h + 2 * pad - kh) / stride + 1, (w + 2 * pad - kw) / stride + 1};
  const std::size_t oh = geo.oh, ow = geo.ow;
  const std::size_t rows = c * kh * kw, cols = oh * ow;

  auto xd = x.data();
  auto wd = weight.data();
  std::vector<double> out(n * o * cols, 0.0);
  std::vector<double> patches(rows * cols);
  for (std::size_t b = 0; b < n; ++b) {
    double* op = out.data() + b * o * cols;
    if (has_bias) {
      for (std::size_t oc = 0; oc < o; ++oc) std::fill_n(op + oc * cols, cols, bias[oc]);
    }
    im2col(xd.data() + b * c * h * w, geo, patches.data());
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<blasint>(o),
                static_cast<blasint>(cols), static_cast<blasint>(rows), 1.0, wd.data(),
                static_cast<blasint>(rows), patches.data(), static_cast<blasint>(cols), 1.0, op,
                static_cast<blasint>(cols));
  }

  std::vector<Tensor> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_op_result(
      {n, o, oh, ow}, std::move(out), inputs,
      [=](std::span<const double> g, std::span<std::vector<double>*> grads) {
        auto xv = x.data();
        auto wv = weight.data();
        std::vector<double>* gx = grads[0];
        std::vector<double>* gw = grads[1];
        std::vector<double>* gb = has_bias ? grads[2] : nullptr;
        std::vector<double> buf(rows * cols);
        for (std::size_t b = 0; b < n; ++b) {
          const double* gp = g.data() + b * o * cols;
          if (gb) {
            for (std::size_t oc = 0; oc < o; ++oc) {
              double s = 0.0;
              for (std::size_t i = 0; i < cols; ++i) s += gp[oc * cols + i];
              (*gb)[oc] += s;
            }
          }
          if (gw) {
            im2col(xv.data() + b * c * h * w, geo, buf.data());
            cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<blasint>(o),
                        static_cast<blasint>(rows), static_cast<blasint>(cols), 1.0, gp,
                        static_cast<blasint>(cols), buf.data(), static_cast<blasint>(cols),
                        1.0, gw->data(), static_cast<blasint>(rows));
          }
          if (gx) {
            cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<blasint>(rows),
                        static_cast<blasint>(cols), static_cast<blasint>(o), 1.0, wv.data(),
                        static_cast<blasint>(rows), gp, static_cast<blasint>(cols), 0.0,
                        buf.data(), static_cast<blasint>(cols));
            col2im_add(buf.data(), geo, gx->data() + b * c * h * w);
          }
        }
      });
}

Tensor maxpool2x(const Tensor& x) {
  require_rank4(x, "maxpool2x");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 || w % 2) {
    throw TensorError("maxpool2x: spatial dims must be even, got " +
                      shape_to_string(x.shape()));
  }
  const std::size_t oh = h / 2, ow = w / 2;
  auto xd = x.data();
  std::vector<double> out(n * c * oh * ow);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  for (std::size_t p = 0; p < n * c; ++p) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = p * h * w + 2 * oy * w + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = p * h * w + (2 * oy + dy) * w + 2 * ox + dx;
            if (xd[idx] > xd[best]) best = idx;
          }
        }
        const std::size_t o = (p * oh + oy) * ow + ox;
        out[o] = xd[best];
        (*argmax)[o] = best;
      }
    }
  }
  return make_op_result({n, c, oh, ow}, std::move(out), {x},
                        [argmax](std::span<const double> g,
                                 std::span<std::vector<double>*> grads) {
                          auto& gx = *grads[0];
                          for (std::size_t i = 0; i < g.size(); ++i) gx[(*argmax)[i]] += g[i];
                        });
}

Tensor upsample2x_nearest(const Tensor& x) {
  const bool plain = x.rank() == 2;
  if (!plain) require_rank4(x, "upsample2x_nearest");
  const std::size_t planes = plain ? 1 : x.dim(0) * x.dim(1);
  const std::size_t h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
  const std::size_t oh = 2 * h, ow = 2 * w;
  auto xd = x.data();
  std::vector<double> out(planes * oh * ow);
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        out[(p * oh + y) * ow + xx] = xd[(p * h + y / 2) * w + xx / 2];
      }
    }
  }
  Shape shape = x.shape();
  shape[shape.size() - 2] = oh;
  shape[shape.size() - 1] = ow;
  return make_op_result(std::move(shape), std::move(out), {x},
                        [=](std::span<const double> g,
                            std::span<std::vector<double>*> grads) {
                          auto& gx = *grads[0];
                          for (std::size_t p = 0; p < planes; ++p) {
                            for (std::size_t y = 0; y < oh; ++y) {
                              for (std::size_t xx = 0; xx < ow; ++xx) {
                                gx[(p * h + y / 2) * w + xx / 2] += g[(p * oh + y) * ow + xx];
                              }
                            }
                          }
                        });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_rank4(a, "concat_channels");
  require_rank4(b, "concat_channels");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw TensorError("concat_channels: incompatible shapes " +
                      shape_to_string(a.shape()) + " and " +
                      shape_to_string(b.shape()));
  }
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  const std::size_t plane = a.dim(2) * a.dim(3);
  std::vector<double> out;
  out.reserve(n * (ca + cb) * plane);
  for (std::size_t s = 0; s < n; ++s) {
    auto da = a.data().subspan(s * ca * plane, ca * plane);
    auto db = b.data().subspan(s * cb * plane, cb * plane);
    out.insert(out.end(), da.begin(), da.end());
    out.insert(out.end(), db.begin(), db.end());
  }
  return make_op_result(
      {n, ca + cb, a.dim(2), a.dim(3)}, std::move(out), {a, b},
      [=](std::span<const double> g, std::span<std::vector<double>*> grads) {
        for (std::size_t s = 0; s < n; ++s) {
          const double* gs = g.data() + s * (ca + cb) * plane;
          if (grads[0]) {
            double* ga = grads[0]->data() + s * ca * plane;
            for (std::size_t i = 0; i < ca * plane; ++i) ga[i] += gs[i];
          }
          if (grads[1]) {
            double* gb = grads[1]->data() + s * cb * plane;
            for (std::size_t i = 0; i < cb * plane; ++i) gb[i] += gs[ca * plane + i];
          }
        }
      });
}

Tensor channel(const Tensor& x, std::size_t c) {
  require_rank4(x, "channel");
  if (x.dim(0) != 1) throw TensorError("channel: batch size must be 1");
  if (c >= x.dim(1)) throw TensorError("channel: index out of range");
  const std::size_t h = x.dim(2), w = x.dim(3), plane = h * w;
  auto src = x.data().subspan(c * plane, plane);
  std::vector<double> out(src.begin(), src.end());
  return make_op_result({h, w}, std::move(out), {x},
                        [c, plane](std::span<const double> g,
                                   std::span<std::vector<double>*> grads) {
                          double* gx = grads[0]->data() + c * plane;
                          for (std::size_t i = 0; i < plane; ++i) gx[i] += g[i];
                        });
}

}  // namespace vesselcouple::ops

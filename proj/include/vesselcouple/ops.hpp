#pragma once

#include <cstddef>

#include "vesselcouple/tensor.hpp"

// Differentiable primitives. Binary elementwise ops require identical shapes
// or one scalar (single-element) operand; no other broadcasting.
namespace vesselcouple::ops {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);

Tensor sigmoid(const Tensor& x);
/// Natural log; in checking mode non-positive inputs raise TensorError.
Tensor log(const Tensor& x);
Tensor relu(const Tensor& x);
/// Gradient passes where lo <= x <= hi, zero outside.
Tensor clamp(const Tensor& x, double lo, double hi);

/// Gradient goes to the strictly smaller operand; exact ties split it evenly.
Tensor elementwise_min(const Tensor& a, const Tensor& b);

Tensor reduce_mean(const Tensor& x);
Tensor reduce_sum(const Tensor& x);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// Cross-correlation. x: [N,C,H,W], weight: [O,C,kh,kw], bias: [O] or an
/// empty Tensor for no bias. Zero padding.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              Conv2dOptions options = {});

/// 2x2 max pooling with stride 2; H and W must be even. Gradient goes to the
/// first maximum in raster order within each window.
Tensor maxpool2x(const Tensor& x);
Tensor upsample2x_nearest(const Tensor& x);
/// Stacks [N,Ca,H,W] and [N,Cb,H,W] into [N,Ca+Cb,H,W].
Tensor concat_channels(const Tensor& a, const Tensor& b);
/// Extracts channel c of sample 0 of an [1,C,H,W] tensor as [H,W].
Tensor channel(const Tensor& x, std::size_t c);

namespace testing {
/// Mutation hook for the gradient-check harness: when set, elementwise_min
/// routes gradient to the larger operand.
void set_corrupt_min_backward(bool corrupt);
bool corrupt_min_backward();
}  // namespace testing

}  // namespace vesselcouple::ops

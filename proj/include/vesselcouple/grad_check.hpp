#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "vesselcouple/tensor.hpp"

namespace vesselcouple {

struct GradCheckReport {
  double max_abs_error = 0.0;
  /// ||analytic - numeric||_inf / max(||analytic||_inf, ||numeric||_inf).
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  bool passed = false;
};

/// Compares d f / d x from backward() against central differences. `f` must
/// return a scalar and be deterministic. `indices` restricts the check to a
/// subset of x's elements (all when empty).
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f,
                           const Tensor& x, double step, double tol,
                           const std::vector<std::size_t>& indices = {});

/// Same comparison for a function of leaf tensors captured by `f`; used for
/// checking network parameters in place. Each `probes` entry names a tensor
/// and one of its element indices.
struct GradProbe {
  Tensor tensor;
  std::size_t index;
};

GradCheckReport grad_check_params(const std::function<Tensor()>& f,
                                  const std::vector<GradProbe>& probes,
                                  double step, double tol);

}  // namespace vesselcouple

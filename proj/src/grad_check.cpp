#include "vesselcouple/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace vesselcouple {

namespace {

GradCheckReport compare(const std::vector<double>& analytic,
                        const std::vector<double>& numeric, double tol) {
  GradCheckReport report;
  double scale = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    report.max_abs_error =
        std::max(report.max_abs_error, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  report.checked = analytic.size();
  report.max_rel_error = scale > 0.0 ? report.max_abs_error / scale : report.max_abs_error;
  report.passed = report.max_rel_error < tol;
  return report;
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f,
                           const Tensor& x, double step, double tol,
                           const std::vector<std::size_t>& indices) {
  std::vector<std::size_t> idx = indices;
  if (idx.empty()) {
    idx.resize(x.numel());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
  }

  Tensor leaf = x.clone(true);
  Tape::current().clear();
  Tensor loss = f(leaf);
  backward(loss);
  const std::vector<double> full_grad = leaf.grad();

  std::vector<double> analytic, numeric;
  Tensor probe = x.clone(false);
  NoGradGuard no_grad;
  for (std::size_t i : idx) {
    auto values = probe.mutable_data();
    const double original = values[i];
    values[i] = original + step;
    const double up = f(probe).item();
    values[i] = original - step;
    const double down = f(probe).item();
    values[i] = original;
    analytic.push_back(full_grad[i]);
    numeric.push_back((up - down) / (2.0 * step));
  }
  return compare(analytic, numeric, tol);
}

GradCheckReport grad_check_params(const std::function<Tensor()>& f,
                                  const std::vector<GradProbe>& probes,
                                  double step, double tol) {
  for (const auto& p : probes) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
  Tape::current().clear();
  backward(f());

  std::vector<double> analytic, numeric;
  NoGradGuard no_grad;
  for (const auto& p : probes) {
    analytic.push_back(p.tensor.grad()[p.index]);
    Tensor t = p.tensor;
    auto values = t.mutable_data();
    const double original = values[p.index];
    values[p.index] = original + step;
    const double up = f().item();
    values[p.index] = original - step;
    const double down = f().item();
    values[p.index] = original;
    numeric.push_back((up - down) / (2.0 * step));
  }
  return compare(analytic, numeric, tol);
}

}  // namespace vesselcouple

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vesselcouple {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

class TensorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until the first accumulation
  bool requires_grad = false;

  std::vector<double>& ensure_grad() {
    if (grad.empty() && !data.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

/// Dense row-major tensor of doubles. Copies share storage; the handle is
/// cheap to pass by value. Values are immutable after construction except
/// through `mutable_data()` on leaves (optimizer updates) and gradient
/// accumulation.
class Tensor {
 public:
  Tensor();

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> values,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }
  std::size_t dim(std::size_t axis) const;

  std::span<const double> data() const { return node_->data; }
  std::span<double> mutable_data() { return node_->data; }
  double item() const;
  double operator[](std::size_t i) const { return node_->data[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool value);

  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient buffer; all zeros when nothing has been accumulated yet.
  std::vector<double> grad() const;
  void zero_grad();

  /// New leaf holding a copy of the values, detached from any tape.
  Tensor clone(bool requires_grad = false) const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  const std::shared_ptr<detail::TensorNode>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::TensorNode> node);

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

/// Ordered record of executed differentiable operations for the current
/// thread. Each entry is recorded after its inputs, so reverse record order
/// is a valid reverse topological order.
class Tape {
 public:
  using Backward = std::function<void()>;

  struct Entry {
    std::vector<std::shared_ptr<detail::TensorNode>> inputs;
    std::shared_ptr<detail::TensorNode> output;
    Backward backward;
  };

  static Tape& current();

  void record(std::vector<std::shared_ptr<detail::TensorNode>> inputs,
              std::shared_ptr<detail::TensorNode> output, Backward backward);
  void clear() { entries_.clear(); }
  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }

  bool enabled() const { return enabled_; }
  void set_enabled(bool value) { enabled_ = value; }

 private:
  std::vector<Entry> entries_;
  bool enabled_ = true;
};

/// Disables recording on the current thread's tape for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Checking mode validates op outputs and gradients for non-finite values.
/// Thread-local; on by default.
bool checking_enabled();
void set_checking(bool enabled);

class CheckingScope {
 public:
  explicit CheckingScope(bool enabled);
  ~CheckingScope();
  CheckingScope(const CheckingScope&) = delete;
  CheckingScope& operator=(const CheckingScope&) = delete;

 private:
  bool previous_;
};

/// Runs reverse-mode accumulation from a scalar loss over the current tape,
/// then clears the tape. Gradients accumulate into every requires_grad leaf.
void backward(const Tensor& loss);

/// Builds a differentiable op from precomputed output values. `backward`
/// receives the output gradient and one gradient buffer per input (nullptr
/// for inputs that do not require grad) and must accumulate into them.
using CustomBackward = std::function<void(
    std::span<const double> grad_out, std::span<std::vector<double>*> grads)>;

Tensor make_op_result(Shape shape, std::vector<double> values,
                      const std::vector<Tensor>& inputs,
                      CustomBackward backward);

}  // namespace vesselcouple

#include "vesselcouple/tensor.hpp"

#include <cmath>
#include <sstream>
#include <utility>

namespace vesselcouple {

namespace {

thread_local bool g_checking = true;

void check_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw TensorError(std::string("non-finite value in ") + what);
    }
  }
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor() : node_(std::make_shared<detail::TensorNode>()) {
  node_->data.assign(1, 0.0);
}

Tensor::Tensor(std::shared_ptr<detail::TensorNode> node)
    : node_(std::move(node)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  if (!std::isfinite(value)) throw TensorError("non-finite fill value");
  auto node = std::make_shared<detail::TensorNode>();
  node->data.assign(shape_numel(shape), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values,
                         bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw TensorError("shape " + shape_to_string(shape) + " does not match " +
                      std::to_string(values.size()) + " values");
  }
  check_finite(values, "tensor construction");
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({}, {value}, requires_grad);
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw TensorError("axis out of range");
  return node_->shape[axis];
}

double Tensor::item() const {
  if (numel() != 1) {
    throw TensorError("item() on tensor of shape " + shape_to_string(shape()));
  }
  return node_->data[0];
}

Tensor& Tensor::set_requires_grad(bool value) {
  node_->requires_grad = value;
  return *this;
}

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(numel(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::clone(bool requires_grad) const {
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = node_->shape;
  node->data = node_->data;
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tape& Tape::current() {
  thread_local Tape tape;
  return tape;
}

void Tape::record(std::vector<std::shared_ptr<detail::TensorNode>> inputs,
                  std::shared_ptr<detail::TensorNode> output,
                  Backward backward) {
  entries_.push_back({std::move(inputs), std::move(output), std::move(backward)});
}

NoGradGuard::NoGradGuard() : previous_(Tape::current().enabled()) {
  Tape::current().set_enabled(false);
}

NoGradGuard::~NoGradGuard() { Tape::current().set_enabled(previous_); }

bool checking_enabled() { return g_checking; }
void set_checking(bool enabled) { g_checking = enabled; }

CheckingScope::CheckingScope(bool enabled) : previous_(g_checking) {
  g_checking = enabled;
}

CheckingScope::~CheckingScope() { g_checking = previous_; }

void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw TensorError("backward() needs a scalar loss, got shape " +
                      shape_to_string(loss.shape()));
  }
  Tape& tape = Tape::current();
  auto& loss_node = loss.node();
  if (!loss_node->requires_grad) {
    throw TensorError("backward() on a tensor that does not require grad");
  }
  loss_node->ensure_grad()[0] += 1.0;

  const auto& entries = tape.entries();
  for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
    if (it->output->grad.empty()) continue;  // not reachable from the loss
    it->backward();
  }
  if (g_checking) {
    for (const auto& entry : entries) {
      for (const auto& input : entry.inputs) {
        check_finite(input->grad, "gradient");
      }
    }
  }
  // Intermediate gradients are only meaningful for this pass.
  for (const auto& entry : entries) entry.output->grad.clear();
  loss_node->grad.clear();
  tape.clear();
}

Tensor make_op_result(Shape shape, std::vector<double> values,
                      const std::vector<Tensor>& inputs,
                      CustomBackward backward_fn) {
  if (shape_numel(shape) != values.size()) {
    throw TensorError("op result shape mismatch");
  }
  if (g_checking) check_finite(values, "op output");
  auto out = std::make_shared<detail::TensorNode>();
  out->shape = std::move(shape);
  out->data = std::move(values);

  Tape& tape = Tape::current();
  bool any_grad = false;
  for (const auto& t : inputs) any_grad = any_grad || t.requires_grad();
  if (!any_grad || !tape.enabled()) return Tensor(std::move(out));

  out->requires_grad = true;
  std::vector<std::shared_ptr<detail::TensorNode>> nodes;
  nodes.reserve(inputs.size());
  for (const auto& t : inputs) nodes.push_back(t.node());

  std::weak_ptr<detail::TensorNode> weak_out = out;
  tape.record(nodes, out,
              [nodes, weak_out, fn = std::move(backward_fn)]() {
                auto o = weak_out.lock();
                if (!o) return;
                std::vector<std::vector<double>*> grads(nodes.size(), nullptr);
                for (std::size_t i = 0; i < nodes.size(); ++i) {
                  if (nodes[i]->requires_grad) grads[i] = &nodes[i]->ensure_grad();
                }
                fn(o->grad, grads);
              });
  return Tensor(std::move(out));
}

}  // namespace vesselcouple

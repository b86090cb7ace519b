#include "polyavsr/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace polyavsr {

namespace {
thread_local bool g_grad_enabled = true;
}

const char* dtype_name(DType t) { return t == DType::f32 ? "f32" : "f64"; }

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

Buffer::Buffer(DType t, std::size_t n) { assign_zero(t, n); }

std::size_t Buffer::size() const {
  return std::visit([](const auto& v) { return v.size(); }, v_);
}

void Buffer::assign_zero(DType t, std::size_t n) {
  if (t == DType::f32)
    v_ = std::vector<float>(n, 0.0f);
  else
    v_ = std::vector<double>(n, 0.0);
}

void Buffer::clear() {
  std::visit([](auto& v) { std::decay_t<decltype(v)>().swap(v); }, v_);
}

double Buffer::get(std::size_t i) const {
  return std::visit([i](const auto& v) { return static_cast<double>(v.at(i)); }, v_);
}

void Buffer::set(std::size_t i, double x) {
  std::visit([i, x](auto& v) { v.at(i) = static_cast<typename std::decay_t<decltype(v)>::value_type>(x); }, v_);
}

Buffer& Node::ensure_grad() {
  if (grad.size() != value.size()) grad.assign_zero(value.dtype(), value.size());
  return grad;
}

Tensor Tensor::zeros(const Shape& shape, DType dtype, bool requires_grad) {
  for (auto d : shape)
    if (d == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->value.assign_zero(dtype, shape_numel(shape));
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::from_data(const Shape& shape, std::span<const double> values, DType dtype,
                         bool requires_grad) {
  Tensor t = zeros(shape, dtype, requires_grad);
  t.copy_from(values);
  return t;
}

Tensor Tensor::scalar(double v, DType dtype) {
  Tensor t = zeros({1}, dtype);
  t.set(0, v);
  return t;
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return at(0);
}

std::vector<double> Tensor::to_vector() const {
  std::vector<double> out(numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = at(i);
  return out;
}

void Tensor::copy_from(std::span<const double> values) {
  if (values.size() != numel())
    throw DimensionError("copy_from: " + std::to_string(values.size()) + " values into " +
                         shape_str(shape()));
  dispatch(dtype(), [&](auto r) {
    using R = decltype(r);
    auto d = data<R>();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<R>(values[i]);
  });
}

std::vector<double> Tensor::grad_vector() const {
  std::vector<double> out(numel(), 0.0);
  if (!has_grad()) return out;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = node_->grad.get(i);
  return out;
}

Tensor Tensor::detach() const {
  auto n = std::make_shared<Node>();
  n->shape = node_->shape;
  n->value = node_->value;
  return Tensor(std::move(n));
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

bool grad_mode_enabled() { return g_grad_enabled; }

Tensor make_result(Shape shape, DType dtype, const std::vector<Tensor>& inputs,
                   std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value.assign_zero(dtype, shape_numel(n->shape));
  if (g_grad_enabled) {
    bool needs = std::any_of(inputs.begin(), inputs.end(),
                             [](const Tensor& t) { return t.requires_grad(); });
    if (needs) {
      n->requires_grad = true;
      for (const auto& t : inputs) n->inputs.push_back(t.node_ptr());
      n->backward_fn = std::move(backward_fn);
    }
  }
  return Tensor(std::move(n));
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw ContractError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order with each node once.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && !seen.count(child)) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad().set(0, loss.node()->grad.get(0) + 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

}  // namespace polyavsr

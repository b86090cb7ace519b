#pragma once

// Dense row-major tensors with a reverse-mode differentiation graph.
//
// A Tensor is a cheap handle onto a shared Node. Nodes produced by
// differentiable operations keep references to their inputs plus a local
// backward rule; calling backward() on a scalar walks that graph once in
// reverse topological order. Parameters are leaf nodes with
// requires_grad set. Gradients accumulate until zero_grad().

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

namespace polyavsr {

enum class DType { f32, f64 };

const char* dtype_name(DType t);

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Typed flat storage. Exactly one of the two vectors is in use.
class Buffer {
 public:
  Buffer() = default;
  Buffer(DType t, std::size_t n);

  DType dtype() const { return std::holds_alternative<std::vector<float>>(v_) ? DType::f32 : DType::f64; }
  std::size_t size() const;
  bool empty() const { return size() == 0; }
  void assign_zero(DType t, std::size_t n);
  void clear();

  template <class R>
  std::span<R> as() {
    return std::span<R>(std::get<std::vector<std::remove_const_t<R>>>(v_));
  }
  template <class R>
  std::span<const R> as() const {
    return std::span<const R>(std::get<std::vector<std::remove_const_t<R>>>(v_));
  }

  double get(std::size_t i) const;
  void set(std::size_t i, double x);

 private:
  std::variant<std::vector<float>, std::vector<double>> v_{std::vector<float>{}};
};

struct Node {
  Shape shape;
  Buffer value;
  Buffer grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  DType dtype() const { return value.dtype(); }
  std::size_t numel() const { return value.size(); }
  // Allocates a zeroed gradient buffer on first use.
  Buffer& ensure_grad();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(const Shape& shape, DType dtype, bool requires_grad = false);
  static Tensor from_data(const Shape& shape, std::span<const double> values, DType dtype,
                          bool requires_grad = false);
  static Tensor scalar(double v, DType dtype);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->numel(); }
  DType dtype() const { return node_->dtype(); }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool r) { node_->requires_grad = r; }

  template <class R>
  std::span<R> data() {
    return node_->value.as<R>();
  }
  template <class R>
  std::span<const R> data() const {
    return node_->value.as<const R>();
  }

  double at(std::size_t flat) const { return node_->value.get(flat); }
  void set(std::size_t flat, double v) { node_->value.set(flat, v); }
  double item() const;
  std::vector<double> to_vector() const;
  void copy_from(std::span<const double> values);

  bool has_grad() const { return !node_->grad.empty(); }
  double grad_at(std::size_t flat) const { return node_->grad.get(flat); }
  std::vector<double> grad_vector() const;
  Buffer& grad_buffer() { return node_->grad; }
  Buffer& value_buffer() { return node_->value; }
  const Buffer& value_buffer() const { return node_->value; }
  void zero_grad() { node_->grad.clear(); }

  // Detached copy of the values; no graph, no grad.
  Tensor detach() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Seeds d(loss)/d(loss) = 1 and runs every recorded backward rule once in
// reverse topological order.
void backward(const Tensor& loss);

// While alive, new operations on this thread record no graph.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_mode_enabled();

// Creates an output node. When gradients are enabled and any input requires
// grad, the node keeps its inputs and the backward rule.
Tensor make_result(Shape shape, DType dtype, const std::vector<Tensor>& inputs,
                   std::function<void(Node&)> backward_fn);

template <class F>
decltype(auto) dispatch(DType t, F&& f) {
  if (t == DType::f32) return f(float{});
  return f(double{});
}

}  // namespace polyavsr

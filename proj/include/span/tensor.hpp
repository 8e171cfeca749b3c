// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dense 64-bit tensors and a define-by-run reverse-mode tape.
//
// A Tape owns every intermediate value of one forward pass. Values enter
// the tape as constants, as differentiable leaves (variable), or as model
// parameters; operations append nodes whose inputs always precede them, so
// the node index order is a topological order and backward() is a single
// reverse sweep. Parameter gradients accumulate into Parameter::grad and
// are never reset by the tape; callers zero them between updates.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace span::ag {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  double item() const;
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// A named learnable tensor and its accumulated gradient.
struct Parameter {
  std::string name;
  Tensor value;
  std::vector<double> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {}

  void zero_grad() { grad.assign(value.size(), 0.0); }
};

class Tape;

/// Lightweight handle to a node on a tape. Valid only while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  bool valid() const { return tape != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  std::size_t size() const { return value().size(); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  struct Node {
    Tensor value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    Backward backward;
    Parameter* param = nullptr;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Non-differentiable input.
  Var constant(Tensor value);
  /// Differentiable leaf; its gradient is read back with grad().
  Var variable(Tensor value);
  /// Registers a parameter once per tape; repeated calls return the same node.
  Var parameter(Parameter& p);

  /// Appends an operation node. requires_grad is inherited from the inputs;
  /// the backward rule is dropped when no input needs a gradient.
  Var record(Tensor value, std::span<const Var> inputs, Backward backward);

  /// Reverse sweep from a scalar loss. Interior gradients are rebuilt on each
  /// call; leaf and parameter gradients accumulate across calls.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_[id]; }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient buffer of a node (allocated zero on first access).
  std::vector<double>& grad(std::size_t id);
  const std::vector<double>& grad(Var v) { return grad(v.id); }

  void clear();

 private:
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_ids_;
};

// ---------------------------------------------------------------------------
// Core operations. Binary ops require identical shapes; the only implicit
// broadcast is multiplication by a host scalar (scale).

Var matmul(Var a, Var b);
/// W[M x N] * x[N] -> [M]
Var matvec(Var w, Var x);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var tanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);
Var sum(Var a);
/// (1/n) * sum((pred - target)^2); target is treated as data.
Var mse(Var pred, Var target);
Var reshape(Var a, Shape shape);
/// Concatenates flattened inputs into a rank-1 tensor.
Var concat(std::span<const Var> parts);
/// Contiguous range [offset, offset + length) of the flattened input, rank 1.
Var slice(Var a, std::size_t offset, std::size_t length);

/// Elementwise op selector for the generic front door below.
enum class Elementwise { add, sub, mul, tanh, sigmoid, relu };
Var elementwise(Elementwise op, Var a);
Var elementwise(Elementwise op, Var a, Var b);

}  // namespace span::ag

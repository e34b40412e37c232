#pragma once

// Reverse-mode differentiation over a small fixed set of tensor primitives.
//
// An Expr is an immutable DAG node. Graphs are built once and evaluated many
// times against different variable bindings; an Evaluator memoizes node
// values for one set of bindings so a caller can read intermediate outputs,
// bind further variables that only downstream nodes depend on, and then ask
// for gradients without recomputing the shared prefix.

#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "ambiseg/tensor.hpp"

namespace ambiseg::diff {

enum class Op {
  Variable,
  Constant,
  Add,
  Sub,
  Mul,
  Pow,
  Log,
  Sigmoid,
  Relu,
  Clamp,
  Conv2d,
  Resize,
  Concat,
  SliceChannels,
  MeanPool,
  Sum,
  Mean,
  SpatialSum,
  BatchNorm,
};

const char* op_name(Op op);

struct Node;

class Expr {
 public:
  Expr() = default;
  explicit Expr(std::shared_ptr<const Node> n) : node_(std::move(n)) {}

  const Shape& shape() const;
  Op op() const;
  const std::string& name() const;
  bool valid() const { return node_ != nullptr; }
  const Node* get() const { return node_.get(); }
  const std::shared_ptr<const Node>& ptr() const { return node_; }

  /// Attach a label shown in error messages; returns a copy pointing at a
  /// relabelled node.
  Expr labelled(std::string label) const;

 private:
  std::shared_ptr<const Node> node_;
};

struct Node {
  Op op = Op::Constant;
  Shape shape;
  std::vector<Expr> inputs;
  std::string name;  // variable name or diagnostic label
  Tensor value;      // constants only
  Real p0 = 0.0;     // pow exponent, clamp low, batch-norm eps
  Real p1 = 0.0;     // clamp high
  int stride = 1;
  int pad = 0;
  std::size_t begin = 0, end = 0;  // channel slice
};

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NonFiniteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct BindingError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

using Bindings = std::map<std::string, Tensor>;
using Gradients = std::map<std::string, Tensor>;

// ---- graph construction ----------------------------------------------------

Expr variable(std::string name, Shape shape);
Expr constant(Tensor value);
Expr constant(Real value);

/// Element-wise; either operand may be a single-element tensor (broadcast).
Expr add(const Expr& a, const Expr& b);
Expr sub(const Expr& a, const Expr& b);
Expr mul(const Expr& a, const Expr& b);
Expr pow(const Expr& x, Real exponent);
Expr log(const Expr& x);
Expr sigmoid(const Expr& x);
Expr relu(const Expr& x);
Expr clamp(const Expr& x, Real lo, Real hi);

/// 2-D convolution, input B x Cin x H x W, weight Cout x Cin x k x k with
/// k in {1, 3}, optional bias of shape [Cout]. Zero padding k / 2.
Expr conv2d(const Expr& x, const Expr& weight, const Expr& bias, int stride = 1);
Expr conv2d(const Expr& x, const Expr& weight, int stride = 1);

/// Bilinear resize with half-pixel centres.
Expr resize_bilinear(const Expr& x, std::size_t height, std::size_t width);

Expr concat_channels(const std::vector<Expr>& parts);
Expr slice_channels(const Expr& x, std::size_t begin, std::size_t end);

/// B x C x H x W -> B x C x 1 x 1
Expr global_mean_pool(const Expr& x);
Expr sum(const Expr& x);
Expr mean(const Expr& x);
/// B x C x H x W -> B x C x 1 x 1 sum over the spatial axes
Expr spatial_sum(const Expr& x);

/// Per-channel normalization with batch statistics over (B, H, W).
Expr batch_norm(const Expr& x, const Expr& gamma, const Expr& beta, Real eps = 1e-5);
/// Per-channel normalization with supplied statistics (treated as constants).
Expr batch_norm(const Expr& x, const Expr& gamma, const Expr& beta, const Expr& running_mean,
                const Expr& running_var, Real eps = 1e-5);

Expr operator+(const Expr& a, const Expr& b);
Expr operator-(const Expr& a, const Expr& b);
Expr operator*(const Expr& a, const Expr& b);
Expr operator+(const Expr& a, Real b);
Expr operator+(Real a, const Expr& b);
Expr operator-(const Expr& a, Real b);
Expr operator-(Real a, const Expr& b);
Expr operator*(const Expr& a, Real b);
Expr operator*(Real a, const Expr& b);
Expr operator-(const Expr& a);

// ---- evaluation --------------------------------------------------------------

class Evaluator {
 public:
  Evaluator() = default;
  explicit Evaluator(Bindings bindings) : bindings_(std::move(bindings)) {}

  /// Add or replace a binding. Replacing a binding some already evaluated
  /// node depends on is an error.
  void bind(const std::string& name, Tensor value);

  const Tensor& value(const Expr& e);

  /// d root / d v for every requested variable name. Variables the root does
  /// not depend on receive zero tensors of their bound shape.
  Gradients gradient(const Expr& root, const std::vector<std::string>& wrt);

 private:
  const Tensor& compute(const Node* n);

  Bindings bindings_;
  std::unordered_map<const Node*, Tensor> values_;
  std::unordered_map<std::string, bool> consumed_;
};

Tensor evaluate(const Expr& expr, const Bindings& bindings);
Gradients gradient(const Expr& expr, const Bindings& bindings,
                   const std::vector<std::string>& wrt);

/// All variable nodes reachable from the given roots, keyed by name.
std::map<std::string, Shape> free_variables(const std::vector<Expr>& roots);

}  // namespace ambiseg::diff

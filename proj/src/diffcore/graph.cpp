#include <algorithm>
#include <functional>
#include <unordered_set>

#include "ambiseg/diffcore.hpp"

namespace ambiseg::diff {

const char* op_name(Op op) {
  switch (op) {
    case Op::Variable: return "variable";
    case Op::Constant: return "constant";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Pow: return "pow";
    case Op::Log: return "log";
    case Op::Sigmoid: return "sigmoid";
    case Op::Relu: return "relu";
    case Op::Clamp: return "clamp";
    case Op::Conv2d: return "conv2d";
    case Op::Resize: return "resize_bilinear";
    case Op::Concat: return "concat_channels";
    case Op::SliceChannels: return "slice_channels";
    case Op::MeanPool: return "global_mean_pool";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::SpatialSum: return "spatial_sum";
    case Op::BatchNorm: return "batch_norm";
  }
  return "?";
}

const Shape& Expr::shape() const { return node_->shape; }
Op Expr::op() const { return node_->op; }
const std::string& Expr::name() const { return node_->name; }

Expr Expr::labelled(std::string label) const {
  if (node_->op == Op::Variable) return *this;
  auto n = std::make_shared<Node>(*node_);
  n->name = std::move(label);
  return Expr(std::move(n));
}

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

void require_valid(const Expr& e, const char* op) {
  if (!e.valid()) throw ShapeError(std::string(op) + ": empty expression operand");
}

std::shared_ptr<Node> make_node(Op op, Shape shape, std::vector<Expr> inputs) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->shape = std::move(shape);
  n->inputs = std::move(inputs);
  return n;
}

Expr make(Op op, Shape shape, std::vector<Expr> inputs) {
  return Expr(make_node(op, std::move(shape), std::move(inputs)));
}

Expr elementwise(Op op, const Expr& a, const Expr& b) {
  require_valid(a, op_name(op));
  require_valid(b, op_name(op));
  Shape out;
  if (a.shape() == b.shape()) {
    out = a.shape();
  } else if (b.shape().numel() == 1) {
    out = a.shape();
  } else if (a.shape().numel() == 1) {
    out = b.shape();
  } else {
    throw ShapeError(std::string(op_name(op)) + ": incompatible shapes " + a.shape().str() +
                     " and " + b.shape().str());
  }
  return make(op, out, {a, b});
}

std::shared_ptr<Node> unary_node(Op op, const Expr& x) {
  require_valid(x, op_name(op));
  return make_node(op, x.shape(), {x});
}

Expr unary(Op op, const Expr& x) { return Expr(unary_node(op, x)); }

}  // namespace

Expr variable(std::string name, Shape shape) {
  if (name.empty()) throw ShapeError("variable: empty name");
  auto n = std::make_shared<Node>();
  n->op = Op::Variable;
  n->shape = std::move(shape);
  n->name = std::move(name);
  return Expr(std::move(n));
}

Expr constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->op = Op::Constant;
  n->shape = value.shape();
  n->value = std::move(value);
  return Expr(std::move(n));
}

Expr constant(Real value) { return constant(Tensor::scalar(value)); }

Expr add(const Expr& a, const Expr& b) { return elementwise(Op::Add, a, b); }
Expr sub(const Expr& a, const Expr& b) { return elementwise(Op::Sub, a, b); }
Expr mul(const Expr& a, const Expr& b) { return elementwise(Op::Mul, a, b); }

Expr pow(const Expr& x, Real exponent) {
  auto n = unary_node(Op::Pow, x);
  n->p0 = exponent;
  return Expr(std::move(n));
}

Expr log(const Expr& x) { return unary(Op::Log, x); }
Expr sigmoid(const Expr& x) { return unary(Op::Sigmoid, x); }
Expr relu(const Expr& x) { return unary(Op::Relu, x); }

Expr clamp(const Expr& x, Real lo, Real hi) {
  require(lo <= hi, "clamp: lower bound exceeds upper bound");
  auto n = unary_node(Op::Clamp, x);
  n->p0 = lo;
  n->p1 = hi;
  return Expr(std::move(n));
}

Expr conv2d(const Expr& x, const Expr& weight, const Expr& bias, int stride) {
  require_valid(x, "conv2d");
  require_valid(weight, "conv2d");
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  require(xs.rank() == 4, "conv2d: input must be rank 4, got " + xs.str());
  require(ws.rank() == 4, "conv2d: weight must be rank 4, got " + ws.str());
  require(ws[1] == xs[1], "conv2d: weight " + ws.str() + " does not match input " + xs.str());
  require(ws[2] == ws[3] && (ws[2] == 1 || ws[2] == 3), "conv2d: kernel must be 1x1 or 3x3");
  require(stride == 1 || stride == 2, "conv2d: stride must be 1 or 2");
  std::vector<Expr> inputs{x, weight};
  if (bias.valid()) {
    require(bias.shape() == Shape{ws[0]}, "conv2d: bias shape " + bias.shape().str());
    inputs.push_back(bias);
  }
  const int k = static_cast<int>(ws[2]);
  const int pad = k / 2;
  const auto out_dim = [&](std::size_t in) {
    return (static_cast<int>(in) + 2 * pad - k) / stride + 1;
  };
  Shape out{xs[0], ws[0], static_cast<std::size_t>(out_dim(xs[2])),
            static_cast<std::size_t>(out_dim(xs[3]))};
  auto n = make_node(Op::Conv2d, out, std::move(inputs));
  n->stride = stride;
  n->pad = pad;
  return Expr(std::move(n));
}

Expr conv2d(const Expr& x, const Expr& weight, int stride) {
  return conv2d(x, weight, Expr{}, stride);
}

Expr resize_bilinear(const Expr& x, std::size_t height, std::size_t width) {
  require_valid(x, "resize_bilinear");
  require(x.shape().rank() == 4, "resize_bilinear: input must be rank 4");
  require(height > 0 && width > 0, "resize_bilinear: empty target size");
  return make(Op::Resize, Shape{x.shape()[0], x.shape()[1], height, width}, {x});
}

Expr concat_channels(const std::vector<Expr>& parts) {
  require(!parts.empty(), "concat_channels: no inputs");
  std::size_t channels = 0;
  for (const auto& p : parts) {
    require_valid(p, "concat_channels");
    const Shape& s = p.shape();
    const Shape& f = parts.front().shape();
    require(s.rank() == 4 && s[0] == f[0] && s[2] == f[2] && s[3] == f[3],
            "concat_channels: incompatible shapes " + f.str() + " and " + s.str());
    channels += s[1];
  }
  const Shape& f = parts.front().shape();
  return make(Op::Concat, Shape{f[0], channels, f[2], f[3]}, parts);
}

Expr slice_channels(const Expr& x, std::size_t begin, std::size_t end) {
  require_valid(x, "slice_channels");
  const Shape& s = x.shape();
  require(s.rank() == 4 && begin < end && end <= s[1],
          "slice_channels: bad range for " + s.str());
  auto n = make_node(Op::SliceChannels, Shape{s[0], end - begin, s[2], s[3]}, {x});
  n->begin = begin;
  n->end = end;
  return Expr(std::move(n));
}

Expr global_mean_pool(const Expr& x) {
  require_valid(x, "global_mean_pool");
  require(x.shape().rank() == 4, "global_mean_pool: input must be rank 4");
  return make(Op::MeanPool, Shape{x.shape()[0], x.shape()[1], 1, 1}, {x});
}

Expr sum(const Expr& x) {
  require_valid(x, "sum");
  return make(Op::Sum, Shape{}, {x});
}

Expr mean(const Expr& x) {
  require_valid(x, "mean");
  return make(Op::Mean, Shape{}, {x});
}

Expr spatial_sum(const Expr& x) {
  require_valid(x, "spatial_sum");
  require(x.shape().rank() == 4, "spatial_sum: input must be rank 4");
  return make(Op::SpatialSum, Shape{x.shape()[0], x.shape()[1], 1, 1}, {x});
}

Expr batch_norm(const Expr& x, const Expr& gamma, const Expr& beta, Real eps) {
  require_valid(x, "batch_norm");
  require(x.shape().rank() == 4, "batch_norm: input must be rank 4");
  const Shape c{x.shape()[1]};
  require(gamma.shape() == c && beta.shape() == c, "batch_norm: affine shape mismatch");
  auto n = make_node(Op::BatchNorm, x.shape(), {x, gamma, beta});
  n->p0 = eps;
  return Expr(std::move(n));
}

Expr batch_norm(const Expr& x, const Expr& gamma, const Expr& beta, const Expr& running_mean,
                const Expr& running_var, Real eps) {
  require_valid(x, "batch_norm");
  require(x.shape().rank() == 4, "batch_norm: input must be rank 4");
  const Shape c{x.shape()[1]};
  require(gamma.shape() == c && beta.shape() == c && running_mean.shape() == c &&
              running_var.shape() == c,
          "batch_norm: statistics shape mismatch");
  auto n = make_node(Op::BatchNorm, x.shape(), {x, gamma, beta, running_mean, running_var});
  n->p0 = eps;
  return Expr(std::move(n));
}

Expr operator+(const Expr& a, const Expr& b) { return add(a, b); }
Expr operator-(const Expr& a, const Expr& b) { return sub(a, b); }
Expr operator*(const Expr& a, const Expr& b) { return mul(a, b); }
Expr operator+(const Expr& a, Real b) { return add(a, constant(b)); }
Expr operator+(Real a, const Expr& b) { return add(constant(a), b); }
Expr operator-(const Expr& a, Real b) { return sub(a, constant(b)); }
Expr operator-(Real a, const Expr& b) { return sub(constant(a), b); }
Expr operator*(const Expr& a, Real b) { return mul(a, constant(b)); }
Expr operator*(Real a, const Expr& b) { return mul(constant(a), b); }
Expr operator-(const Expr& a) { return mul(constant(-1.0), a); }

std::map<std::string, Shape> free_variables(const std::vector<Expr>& roots) {
  std::map<std::string, Shape> out;
  std::unordered_set<const Node*> seen;
  std::vector<const Node*> stack;
  for (const auto& r : roots) stack.push_back(r.get());
  while (!stack.empty()) {
    const Node* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    if (n->op == Op::Variable) out.emplace(n->name, n->shape);
    for (const auto& in : n->inputs) stack.push_back(in.get());
  }
  return out;
}

}  // namespace ambiseg::diff

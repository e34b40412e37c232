#include <cmath>
#include <unordered_set>

#include "ambiseg/diffcore.hpp"
#include "kernels.hpp"

namespace ambiseg::diff {

namespace {

std::string describe(const Node* n) {
  std::string s = op_name(n->op);
  if (!n->name.empty()) s += " '" + n->name + "'";
  return s + " " + n->shape.str();
}

Real sigmoid_scalar(Real x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const Real e = std::exp(x);
  return e / (1.0 + e);
}

template <class F>
Tensor map_unary(const Tensor& x, F f) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

template <class F>
Tensor map_binary(const Tensor& a, const Tensor& b, const Shape& shape, F f) {
  Tensor out(shape);
  const bool sa = a.size() == 1 && shape.numel() != 1;
  const bool sb = b.size() == 1 && shape.numel() != 1;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[sa ? 0 : i], b[sb ? 0 : i]);
  return out;
}

struct ChannelStats {
  std::vector<Real> mean, var;
};

ChannelStats channel_stats(const Tensor& x) {
  const auto& s = x.shape();
  const std::size_t B = s[0], C = s[1], HW = s[2] * s[3];
  const Real m = static_cast<Real>(B * HW);
  ChannelStats st{std::vector<Real>(C, 0.0), std::vector<Real>(C, 0.0)};
  for (std::size_t c = 0; c < C; ++c) {
    Real acc = 0;
    for (std::size_t b = 0; b < B; ++b) {
      const Real* p = x.data() + (b * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) acc += p[i];
    }
    const Real mu = acc / m;
    Real v = 0;
    for (std::size_t b = 0; b < B; ++b) {
      const Real* p = x.data() + (b * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) v += (p[i] - mu) * (p[i] - mu);
    }
    st.mean[c] = mu;
    st.var[c] = v / m;
  }
  return st;
}

ChannelStats node_stats(const Node* n, const std::vector<const Tensor*>& in) {
  if (n->inputs.size() == 5) {
    return {in[3]->storage(), in[4]->storage()};
  }
  return channel_stats(*in[0]);
}

Tensor batch_norm_forward(const Node* n, const std::vector<const Tensor*>& in) {
  const Tensor& x = *in[0];
  const Tensor& gamma = *in[1];
  const Tensor& beta = *in[2];
  const auto st = node_stats(n, in);
  const auto& s = x.shape();
  const std::size_t B = s[0], C = s[1], HW = s[2] * s[3];
  Tensor out(s);
  for (std::size_t c = 0; c < C; ++c) {
    const Real inv = 1.0 / std::sqrt(st.var[c] + n->p0);
    for (std::size_t b = 0; b < B; ++b) {
      const Real* p = x.data() + (b * C + c) * HW;
      Real* o = out.data() + (b * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) o[i] = gamma[c] * (p[i] - st.mean[c]) * inv + beta[c];
    }
  }
  return out;
}

Tensor forward(const Node* n, const std::vector<const Tensor*>& in) {
  switch (n->op) {
    case Op::Add:
      return map_binary(*in[0], *in[1], n->shape, [](Real a, Real b) { return a + b; });
    case Op::Sub:
      return map_binary(*in[0], *in[1], n->shape, [](Real a, Real b) { return a - b; });
    case Op::Mul:
      return map_binary(*in[0], *in[1], n->shape, [](Real a, Real b) { return a * b; });
    case Op::Pow: {
      const Real e = n->p0;
      if (e == 2.0) return map_unary(*in[0], [](Real v) { return v * v; });
      return map_unary(*in[0], [e](Real v) { return std::pow(v, e); });
    }
    case Op::Log:
      return map_unary(*in[0], [](Real v) { return std::log(v); });
    case Op::Sigmoid:
      return map_unary(*in[0], sigmoid_scalar);
    case Op::Relu:
      return map_unary(*in[0], [](Real v) { return v > 0 ? v : 0.0; });
    case Op::Clamp: {
      const Real lo = n->p0, hi = n->p1;
      return map_unary(*in[0], [lo, hi](Real v) { return std::clamp(v, lo, hi); });
    }
    case Op::Conv2d:
      return kernels::conv2d_forward(*in[0], *in[1], in.size() > 2 ? in[2] : nullptr, n->stride,
                                     n->pad);
    case Op::Resize:
      return kernels::resize_forward(*in[0], n->shape[2], n->shape[3]);
    case Op::Concat: {
      Tensor out(n->shape);
      const std::size_t B = n->shape[0], HW = n->shape[2] * n->shape[3];
      const std::size_t C = n->shape[1];
      std::size_t offset = 0;
      for (const Tensor* t : in) {
        const std::size_t c = t->shape()[1];
        for (std::size_t b = 0; b < B; ++b) {
          std::copy_n(t->data() + b * c * HW, c * HW, out.data() + (b * C + offset) * HW);
        }
        offset += c;
      }
      return out;
    }
    case Op::SliceChannels: {
      Tensor out(n->shape);
      const Tensor& x = *in[0];
      const std::size_t B = n->shape[0], HW = n->shape[2] * n->shape[3];
      const std::size_t C = x.shape()[1], c = n->end - n->begin;
      for (std::size_t b = 0; b < B; ++b) {
        std::copy_n(x.data() + (b * C + n->begin) * HW, c * HW, out.data() + b * c * HW);
      }
      return out;
    }
    case Op::MeanPool:
    case Op::SpatialSum: {
      const Tensor& x = *in[0];
      const std::size_t planes = n->shape[0] * n->shape[1];
      const std::size_t HW = x.shape()[2] * x.shape()[3];
      const Real scale = n->op == Op::MeanPool ? 1.0 / static_cast<Real>(HW) : 1.0;
      Tensor out(n->shape);
      for (std::size_t p = 0; p < planes; ++p) {
        Real acc = 0;
        const Real* src = x.data() + p * HW;
        for (std::size_t i = 0; i < HW; ++i) acc += src[i];
        out[p] = acc * scale;
      }
      return out;
    }
    case Op::Sum:
    case Op::Mean: {
      Real acc = 0;
      for (Real v : in[0]->values()) acc += v;
      if (n->op == Op::Mean) acc /= static_cast<Real>(in[0]->size());
      return Tensor::scalar(acc);
    }
    case Op::BatchNorm:
      return batch_norm_forward(n, in);
    case Op::Variable:
    case Op::Constant:
      break;
  }
  throw std::logic_error("forward: unexpected op");
}

void accumulate(Tensor& dst, const Tensor& src) {
  if (dst.empty() && dst.shape().numel() != 0) {
    dst = src;
    return;
  }
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// Reduces a broadcast gradient back to a single-element operand.
Tensor reduce_to(const Tensor& g, const Shape& shape) {
  if (g.shape() == shape) return g;
  Real acc = 0;
  for (Real v : g.values()) acc += v;
  return Tensor(shape, std::vector<Real>{acc});
}

}  // namespace

void Evaluator::bind(const std::string& name, Tensor value) {
  if (consumed_.count(name)) {
    throw BindingError("variable '" + name + "' was already used in this evaluation");
  }
  bindings_[name] = std::move(value);
}

const Tensor& Evaluator::value(const Expr& e) { return compute(e.get()); }

const Tensor& Evaluator::compute(const Node* n) {
  if (n->op == Op::Constant) return n->value;
  if (n->op == Op::Variable) {
    auto it = bindings_.find(n->name);
    if (it == bindings_.end()) throw BindingError("unbound variable '" + n->name + "'");
    if (!(it->second.shape() == n->shape)) {
      throw ShapeError("variable '" + n->name + "' declared " + n->shape.str() + " but bound " +
                       it->second.shape().str());
    }
    if (!consumed_.count(n->name)) {
      if (!it->second.all_finite()) {
        throw NonFiniteError("non-finite value bound to variable '" + n->name + "'");
      }
      consumed_[n->name] = true;
    }
    return it->second;
  }
  if (auto it = values_.find(n); it != values_.end()) return it->second;
  std::vector<const Tensor*> in;
  in.reserve(n->inputs.size());
  for (const auto& e : n->inputs) in.push_back(&compute(e.get()));
  Tensor out = forward(n, in);
  if (!out.all_finite()) {
    throw NonFiniteError("non-finite value produced by " + describe(n));
  }
  return values_.emplace(n, std::move(out)).first->second;
}

Gradients Evaluator::gradient(const Expr& root, const std::vector<std::string>& wrt) {
  if (root.shape().numel() != 1) {
    throw ShapeError("gradient: root must be scalar, got " + root.shape().str());
  }
  compute(root.get());

  // Post-order DFS gives a topological order (inputs before consumers).
  std::vector<const Node*> order;
  std::unordered_set<const Node*> seen;
  std::vector<std::pair<const Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      const Node* child = n->inputs[next++].get();
      if (seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  const std::unordered_set<std::string> targets(wrt.begin(), wrt.end());
  std::unordered_set<const Node*> needs;
  for (const Node* n : order) {
    if (n->op == Op::Variable) {
      if (targets.count(n->name)) needs.insert(n);
      continue;
    }
    for (std::size_t i = 0; i < n->inputs.size(); ++i) {
      // batch-norm running statistics never carry gradient
      if (n->op == Op::BatchNorm && i >= 3) break;
      if (needs.count(n->inputs[i].get())) {
        needs.insert(n);
        break;
      }
    }
  }

  std::unordered_map<const Node*, Tensor> adj;
  adj[root.get()] = Tensor(root.shape(), 1.0);
  Gradients grads;

  auto add_grad = [&](const Node* target, Tensor g) {
    if (!needs.count(target)) return;
    auto it = adj.find(target);
    if (it == adj.end()) {
      adj.emplace(target, std::move(g));
    } else {
      accumulate(it->second, g);
    }
  };

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Node* n = *it;
    auto ait = adj.find(n);
    if (ait == adj.end()) continue;
    const Tensor g = std::move(ait->second);
    adj.erase(ait);
    if (n->op == Op::Variable) {
      auto git = grads.find(n->name);
      if (git == grads.end()) {
        grads.emplace(n->name, g);
      } else {
        accumulate(git->second, g);
      }
      continue;
    }
    if (n->op == Op::Constant) continue;

    auto input = [&](std::size_t i) -> const Tensor& { return compute(n->inputs[i].get()); };
    auto in_node = [&](std::size_t i) { return n->inputs[i].get(); };
    auto wants = [&](std::size_t i) { return needs.count(in_node(i)) > 0; };

    switch (n->op) {
      case Op::Add:
      case Op::Sub: {
        if (wants(0)) add_grad(in_node(0), reduce_to(g, in_node(0)->shape));
        if (wants(1)) {
          Tensor gb = reduce_to(g, in_node(1)->shape);
          if (n->op == Op::Sub) {
            for (auto& v : gb.values()) v = -v;
          }
          add_grad(in_node(1), std::move(gb));
        }
        break;
      }
      case Op::Mul: {
        const Tensor& a = input(0);
        const Tensor& b = input(1);
        if (wants(0)) {
          add_grad(in_node(0),
                   reduce_to(map_binary(g, b, g.shape(), [](Real x, Real y) { return x * y; }),
                             a.shape()));
        }
        if (wants(1)) {
          add_grad(in_node(1),
                   reduce_to(map_binary(g, a, g.shape(), [](Real x, Real y) { return x * y; }),
                             b.shape()));
        }
        break;
      }
      case Op::Pow: {
        const Tensor& x = input(0);
        const Real e = n->p0;
        Tensor d(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) d[i] = g[i] * e * std::pow(x[i], e - 1.0);
        add_grad(in_node(0), std::move(d));
        break;
      }
      case Op::Log: {
        const Tensor& x = input(0);
        Tensor d(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) d[i] = g[i] / x[i];
        add_grad(in_node(0), std::move(d));
        break;
      }
      case Op::Sigmoid: {
        const Tensor& y = compute(n);
        Tensor d(y.shape());
        for (std::size_t i = 0; i < y.size(); ++i) d[i] = g[i] * y[i] * (1.0 - y[i]);
        add_grad(in_node(0), std::move(d));
        break;
      }
      case Op::Relu: {
        const Tensor& x = input(0);
        Tensor d(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) d[i] = x[i] > 0 ? g[i] : 0.0;
        add_grad(in_node(0), std::move(d));
        break;
      }
      case Op::Clamp: {
        const Tensor& x = input(0);
        Tensor d(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) {
          d[i] = (x[i] >= n->p0 && x[i] <= n->p1) ? g[i] : 0.0;
        }
        add_grad(in_node(0), std::move(d));
        break;
      }
      case Op::Conv2d: {
        const Tensor& x = input(0);
        const Tensor& w = input(1);
        Tensor gx, gw, gb;
        if (wants(0)) gx = Tensor(x.shape());
        if (wants(1)) gw = Tensor(w.shape());
        const bool has_bias = n->inputs.size() > 2;
        if (has_bias && wants(2)) gb = Tensor(in_node(2)->shape);
        kernels::conv2d_backward(x, w, g, n->stride, n->pad, wants(0) ? &gx : nullptr,
                                 wants(1) ? &gw : nullptr,
                                 (has_bias && wants(2)) ? &gb : nullptr);
        if (wants(0)) add_grad(in_node(0), std::move(gx));
        if (wants(1)) add_grad(in_node(1), std::move(gw));
        if (has_bias && wants(2)) add_grad(in_node(2), std::move(gb));
        break;
      }
      case Op::Resize: {
        Tensor gx(in_node(0)->shape);
        kernels::resize_backward(g, gx);
        add_grad(in_node(0), std::move(gx));
        break;
      }
      case Op::Concat: {
        const std::size_t B = n->shape[0], HW = n->shape[2] * n->shape[3], C = n->shape[1];
        std::size_t offset = 0;
        for (std::size_t i = 0; i < n->inputs.size(); ++i) {
          const std::size_t c = in_node(i)->shape[1];
          if (wants(i)) {
            Tensor part(in_node(i)->shape);
            for (std::size_t b = 0; b < B; ++b) {
              std::copy_n(g.data() + (b * C + offset) * HW, c * HW, part.data() + b * c * HW);
            }
            add_grad(in_node(i), std::move(part));
          }
          offset += c;
        }
        break;
      }
      case Op::SliceChannels: {
        Tensor gx(in_node(0)->shape);
        const std::size_t B = n->shape[0], HW = n->shape[2] * n->shape[3];
        const std::size_t C = gx.shape()[1], c = n->end - n->begin;
        for (std::size_t b = 0; b < B; ++b) {
          std::copy_n(g.data() + b * c * HW, c * HW, gx.data() + (b * C + n->begin) * HW);
        }
        add_grad(in_node(0), std::move(gx));
        break;
      }
      case Op::MeanPool:
      case Op::SpatialSum: {
        Tensor gx(in_node(0)->shape);
        const std::size_t HW = gx.shape()[2] * gx.shape()[3];
        const Real scale = n->op == Op::MeanPool ? 1.0 / static_cast<Real>(HW) : 1.0;
        for (std::size_t p = 0; p < g.size(); ++p) {
          std::fill_n(gx.data() + p * HW, HW, g[p] * scale);
        }
        add_grad(in_node(0), std::move(gx));
        break;
      }
      case Op::Sum:
      case Op::Mean: {
        const Shape& s = in_node(0)->shape;
        Real v = g[0];
        if (n->op == Op::Mean) v /= static_cast<Real>(s.numel());
        add_grad(in_node(0), Tensor(s, v));
        break;
      }
      case Op::BatchNorm: {
        const Tensor& x = input(0);
        const Tensor& gamma = input(1);
        std::vector<const Tensor*> ins;
        for (std::size_t i = 0; i < n->inputs.size(); ++i) ins.push_back(&input(i));
        const auto st = node_stats(n, ins);
        const bool batch_stats = n->inputs.size() == 3;
        const auto& s = x.shape();
        const std::size_t B = s[0], C = s[1], HW = s[2] * s[3];
        const Real m = static_cast<Real>(B * HW);
        Tensor gx(s), gg(gamma.shape()), gbeta(gamma.shape());
        for (std::size_t c = 0; c < C; ++c) {
          const Real inv = 1.0 / std::sqrt(st.var[c] + n->p0);
          Real sum_g = 0, sum_gx = 0;
          for (std::size_t b = 0; b < B; ++b) {
            const Real* px = x.data() + (b * C + c) * HW;
            const Real* pg = g.data() + (b * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) {
              sum_g += pg[i];
              sum_gx += pg[i] * (px[i] - st.mean[c]) * inv;
            }
          }
          gbeta[c] = sum_g;
          gg[c] = sum_gx;
          for (std::size_t b = 0; b < B; ++b) {
            const Real* px = x.data() + (b * C + c) * HW;
            const Real* pg = g.data() + (b * C + c) * HW;
            Real* out = gx.data() + (b * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) {
              if (batch_stats) {
                const Real xhat = (px[i] - st.mean[c]) * inv;
                out[i] = gamma[c] * inv * (pg[i] - sum_g / m - xhat * sum_gx / m);
              } else {
                out[i] = gamma[c] * inv * pg[i];
              }
            }
          }
        }
        if (wants(0)) add_grad(in_node(0), std::move(gx));
        if (wants(1)) add_grad(in_node(1), std::move(gg));
        if (wants(2)) add_grad(in_node(2), std::move(gbeta));
        break;
      }
      case Op::Variable:
      case Op::Constant:
        break;
    }
  }

  for (const auto& name : wrt) {
    if (grads.count(name)) continue;
    auto it = bindings_.find(name);
    if (it == bindings_.end()) throw BindingError("gradient requested for unbound '" + name + "'");
    grads.emplace(name, Tensor(it->second.shape()));
  }
  return grads;
}

Tensor evaluate(const Expr& expr, const Bindings& bindings) {
  Evaluator ev(bindings);
  return ev.value(expr);
}

Gradients gradient(const Expr& expr, const Bindings& bindings,
                   const std::vector<std::string>& wrt) {
  Evaluator ev(bindings);
  return ev.gradient(expr, wrt);
}

}  // namespace ambiseg::diff

#include "tedi/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <unordered_set>

#include "tedi/error.hpp"
#include "tedi/kernels.hpp"

namespace tedi::ag {
namespace {

thread_local bool g_grad_enabled = true;

Var make(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    const bool any = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Var& v) { return v.defined() && v.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      for (auto& in : inputs)
        if (in.defined()) node->inputs.push_back(in.node_ptr());
      node->backward = std::move(fn);
    }
  }
  return Var(std::move(node));
}

// Gradient buffer of an input if it takes part in the current pass.
double* grad_of(const Var& v) {
  if (!v.defined() || !v.node()->needed) return nullptr;
  return v.node()->ensure_grad().ptr();
}

void require_same(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

void require_rank(const Var& a, int rank, const char* op) {
  if (a.value().rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(a.shape()));
}

template <typename Fwd, typename Deriv>
Var unary(const Var& a, Fwd fwd, Deriv deriv) {
  Tensor out(a.shape());
  const double* x = a.value().ptr();
  double* y = out.ptr();
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) y[i] = fwd(x[i]);
  return make(std::move(out), {a}, [a, deriv](Node& self) {
    double* ga = grad_of(a);
    if (!ga) return;
    const double* x = a.value().ptr();
    const double* y = self.value.ptr();
    const double* g = self.grad.ptr();
    const std::size_t n = self.value.size();
    for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * deriv(x[i], y[i]);
  });
}

}  // namespace

Tensor& Node::ensure_grad() {
  if (grad.size() != value.size() || grad.shape() != value.shape()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var parameter(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

Var detach(const Var& x) { return constant(x.value()); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

void backward(const Var& root, std::span<const Var> targets) {
  if (!root.defined()) throw ShapeError("backward on undefined variable");
  if (root.value().size() != 1)
    throw ShapeError("backward requires a single-element root, got " + shape_str(root.shape()));
  if (!root.requires_grad()) return;

  // Iterative post-order DFS: inputs precede their consumers in `order`.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  if (targets.empty()) {
    for (Node* n : order) n->needed = true;
  } else {
    std::unordered_set<Node*> target_set;
    for (const auto& t : targets) target_set.insert(t.node());
    for (Node* n : order) {
      n->needed = target_set.count(n) > 0;
      if (!n->needed)
        for (const auto& in : n->inputs)
          if (in->requires_grad && in->needed) {
            n->needed = true;
            break;
          }
    }
  }

  Node* r = root.node();
  r->ensure_grad();
  r->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->needed || !n->backward || n->grad.empty()) continue;
    n->backward(*n);
    n->grad = Tensor();  // interior gradients are released once propagated
  }
  for (Node* n : order) n->needed = false;
}

Var add(const Var& a, const Var& b) {
  require_same(a, b, "add");
  Tensor out = a.value();
  const double* y = b.value().ptr();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
  return make(std::move(out), {a, b}, [a, b](Node& self) {
    const std::size_t n = self.grad.size();
    const double* g = self.grad.ptr();
    if (double* ga = grad_of(a))
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
    if (double* gb = grad_of(b))
      for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
  });
}

Var sub(const Var& a, const Var& b) {
  require_same(a, b, "sub");
  Tensor out = a.value();
  const double* y = b.value().ptr();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= y[i];
  return make(std::move(out), {a, b}, [a, b](Node& self) {
    const std::size_t n = self.grad.size();
    const double* g = self.grad.ptr();
    if (double* ga = grad_of(a))
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
    if (double* gb = grad_of(b))
      for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i];
  });
}

Var mul(const Var& a, const Var& b) {
  require_same(a, b, "mul");
  Tensor out = a.value();
  const double* y = b.value().ptr();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
  return make(std::move(out), {a, b}, [a, b](Node& self) {
    const std::size_t n = self.grad.size();
    const double* g = self.grad.ptr();
    if (double* ga = grad_of(a)) {
      const double* bv = b.value().ptr();
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * bv[i];
    }
    if (double* gb = grad_of(b)) {
      const double* av = a.value().ptr();
      for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var mul_const(const Var& a, const Tensor& c) {
  if (a.shape() != c.shape())
    throw ShapeError("mul_const: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(c.shape()));
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c[i];
  return make(std::move(out), {a}, [a, c](Node& self) {
    if (double* ga = grad_of(a)) {
      const double* g = self.grad.ptr();
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += g[i] * c[i];
    }
  });
}

Var scale(const Var& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var leaky_relu(const Var& a, double slope) {
  return unary(
      a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Var relu(const Var& a) { return leaky_relu(a, 0.0); }

Var tanh(const Var& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& a) {
  return unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var softplus(const Var& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return make(Tensor::scalar(s), {a}, [a](Node& self) {
    if (double* ga = grad_of(a)) {
      const double g = self.grad[0];
      for (std::size_t i = 0; i < a.value().size(); ++i) ga[i] += g;
    }
  });
}

Var mean(const Var& a) {
  if (a.value().empty()) throw ShapeError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var sum_squares(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v * v;
  return make(Tensor::scalar(s), {a}, [a](Node& self) {
    if (double* ga = grad_of(a)) {
      const double g = 2.0 * self.grad[0];
      const double* x = a.value().ptr();
      for (std::size_t i = 0; i < a.value().size(); ++i) ga[i] += g * x[i];
    }
  });
}

Var sum_squares_per_sample(const Var& a) {
  const int n = a.dim(0);
  const std::size_t per = a.value().size() / static_cast<std::size_t>(n);
  Tensor out({n});
  const double* x = a.value().ptr();
  for (int s = 0; s < n; ++s) {
    double acc = 0.0;
    for (std::size_t i = 0; i < per; ++i) acc += x[s * per + i] * x[s * per + i];
    out[s] = acc;
  }
  return make(std::move(out), {a}, [a, n, per](Node& self) {
    if (double* ga = grad_of(a)) {
      const double* x = a.value().ptr();
      for (int s = 0; s < n; ++s) {
        const double g = 2.0 * self.grad[s];
        for (std::size_t i = 0; i < per; ++i) ga[s * per + i] += g * x[s * per + i];
      }
    }
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return make(std::move(out), {a}, [a](Node& self) {
    if (double* ga = grad_of(a)) {
      const double* g = self.grad.ptr();
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += g[i];
    }
  });
}

Var broadcast_batch(const Var& a, int n) {
  if (a.dim(0) != 1) throw ShapeError("broadcast_batch expects leading dimension 1");
  Shape shape = a.shape();
  shape[0] = n;
  const std::size_t per = a.value().size();
  Tensor out(shape);
  for (int s = 0; s < n; ++s) std::copy(a.value().ptr(), a.value().ptr() + per, out.ptr() + s * per);
  return make(std::move(out), {a}, [a, n, per](Node& self) {
    if (double* ga = grad_of(a)) {
      const double* g = self.grad.ptr();
      for (int s = 0; s < n; ++s)
        for (std::size_t i = 0; i < per; ++i) ga[i] += g[s * per + i];
    }
  });
}

Var slice_batch(const Var& a, int begin, int end) {
  const int n = a.dim(0);
  if (begin < 0 || end > n || begin > end)
    throw ShapeError("slice_batch [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of range for " + shape_str(a.shape()));
  const std::size_t per = a.value().size() / static_cast<std::size_t>(n);
  Shape shape = a.shape();
  shape[0] = end - begin;
  Tensor out(shape);
  std::copy(a.value().ptr() + begin * per, a.value().ptr() + end * per, out.ptr());
  return make(std::move(out), {a}, [a, begin, per](Node& self) {
    if (double* ga = grad_of(a)) {
      const double* g = self.grad.ptr();
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[begin * per + i] += g[i];
    }
  });
}

Var concat_batch(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_batch of nothing");
  Shape shape = parts[0].shape();
  int total = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    s[0] = shape[0];
    if (s != shape) throw ShapeError("concat_batch: incompatible shapes");
    total += p.dim(0);
  }
  shape[0] = total;
  Tensor out(shape);
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    std::copy(p.value().ptr(), p.value().ptr() + p.value().size(), out.ptr() + offset);
    offset += p.value().size();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return make(std::move(out), inputs, [inputs, offsets](Node& self) {
    for (std::size_t k = 0; k < inputs.size(); ++k)
      if (double* gp = grad_of(inputs[k])) {
        const double* g = self.grad.ptr() + offsets[k];
        for (std::size_t i = 0; i < inputs[k].value().size(); ++i) gp[i] += g[i];
      }
  });
}

Var select_layer(const Var& w, int layer) {
  require_rank(w, 3, "select_layer");
  const int n = w.dim(0), l = w.dim(1), c = w.dim(2);
  if (layer < 0 || layer >= l) throw ShapeError("select_layer: layer " + std::to_string(layer) + " out of range");
  Tensor out({n, c});
  for (int s = 0; s < n; ++s)
    std::copy_n(w.value().ptr() + (static_cast<long>(s) * l + layer) * c, c, out.ptr() + static_cast<long>(s) * c);
  return make(std::move(out), {w}, [w, n, l, c, layer](Node& self) {
    if (double* gw = grad_of(w))
      for (int s = 0; s < n; ++s)
        for (int j = 0; j < c; ++j) gw[(static_cast<long>(s) * l + layer) * c + j] += self.grad[s * c + j];
  });
}

Var stack_layers(std::span<const Var> layers) {
  if (layers.empty()) throw ShapeError("stack_layers of nothing");
  const int n = layers[0].dim(0), c = layers[0].dim(1);
  const int l = static_cast<int>(layers.size());
  for (const auto& v : layers)
    if (v.shape() != Shape{n, c}) throw ShapeError("stack_layers: inconsistent layer shapes");
  Tensor out({n, l, c});
  for (int i = 0; i < l; ++i)
    for (int s = 0; s < n; ++s)
      std::copy_n(layers[i].value().ptr() + static_cast<long>(s) * c, c,
                  out.ptr() + (static_cast<long>(s) * l + i) * c);
  std::vector<Var> inputs(layers.begin(), layers.end());
  return make(std::move(out), inputs, [inputs, n, l, c](Node& self) {
    for (int i = 0; i < l; ++i)
      if (double* gi = grad_of(inputs[i]))
        for (int s = 0; s < n; ++s)
          for (int j = 0; j < c; ++j) gi[s * c + j] += self.grad[(static_cast<long>(s) * l + i) * c + j];
  });
}

Var repeat_layers(const Var& z, int num_layers) {
  require_rank(z, 2, "repeat_layers");
  const int n = z.dim(0), c = z.dim(1), l = num_layers;
  Tensor out({n, l, c});
  for (int s = 0; s < n; ++s)
    for (int i = 0; i < l; ++i)
      std::copy_n(z.value().ptr() + static_cast<long>(s) * c, c, out.ptr() + (static_cast<long>(s) * l + i) * c);
  return make(std::move(out), {z}, [z, n, l, c](Node& self) {
    if (double* gz = grad_of(z))
      for (int s = 0; s < n; ++s)
        for (int i = 0; i < l; ++i)
          for (int j = 0; j < c; ++j) gz[s * c + j] += self.grad[(static_cast<long>(s) * l + i) * c + j];
  });
}

Var weighted_layer_sum(const Var& w, std::span<const double> p) {
  require_rank(w, 3, "weighted_layer_sum");
  const int n = w.dim(0), l = w.dim(1), c = w.dim(2);
  if (static_cast<int>(p.size()) != l)
    throw ShapeError("weighted_layer_sum: " + std::to_string(p.size()) + " weights for " + std::to_string(l) + " layers");
  std::vector<double> weights(p.begin(), p.end());
  Tensor out({n, c});
  for (int s = 0; s < n; ++s)
    for (int i = 0; i < l; ++i)
      for (int j = 0; j < c; ++j) out[s * c + j] += weights[i] * w.value()[(static_cast<long>(s) * l + i) * c + j];
  return make(std::move(out), {w}, [w, weights, n, l, c](Node& self) {
    if (double* gw = grad_of(w))
      for (int s = 0; s < n; ++s)
        for (int i = 0; i < l; ++i)
          for (int j = 0; j < c; ++j) gw[(static_cast<long>(s) * l + i) * c + j] += weights[i] * self.grad[s * c + j];
  });
}

Var gather_rows(const Var& table, std::span<const int> ids) {
  require_rank(table, 2, "gather_rows");
  const int v = table.dim(0), e = table.dim(1);
  std::vector<int> idx(ids.begin(), ids.end());
  Tensor out({static_cast<int>(idx.size()), e});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= v) throw ShapeError("gather_rows: id " + std::to_string(idx[r]) + " out of range");
    std::copy_n(table.value().ptr() + static_cast<long>(idx[r]) * e, e, out.ptr() + static_cast<long>(r) * e);
  }
  return make(std::move(out), {table}, [table, idx, e](Node& self) {
    if (double* gt = grad_of(table))
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (int j = 0; j < e; ++j) gt[static_cast<long>(idx[r]) * e + j] += self.grad[r * e + j];
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear weight");
  const int n = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
  if (weight.dim(1) != in)
    throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(weight.shape()));
  if (bias.defined() && bias.shape() != Shape{out_dim}) throw ShapeError("linear: bias shape");
  Tensor out({n, out_dim});
  kernels::gemm(false, true, n, out_dim, in, x.value().ptr(), weight.value().ptr(), out.ptr(), false);
  if (bias.defined())
    for (int s = 0; s < n; ++s)
      for (int o = 0; o < out_dim; ++o) out[s * out_dim + o] += bias.value()[o];
  return make(std::move(out), {x, weight, bias}, [x, weight, bias, n, in, out_dim](Node& self) {
    const double* g = self.grad.ptr();
    if (double* gx = grad_of(x)) kernels::gemm(false, false, n, in, out_dim, g, weight.value().ptr(), gx, true);
    if (double* gw = grad_of(weight)) kernels::gemm(true, false, out_dim, in, n, g, x.value().ptr(), gw, true);
    if (double* gb = grad_of(bias))
      for (int s = 0; s < n; ++s)
        for (int o = 0; o < out_dim; ++o) gb[o] += g[s * out_dim + o];
  });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias) {
  require_rank(x, 4, "conv2d");
  require_rank(weight, 4, "conv2d weight");
  kernels::ConvDims d;
  d.batch = x.dim(0);
  d.in_channels = x.dim(1);
  d.height = x.dim(2);
  d.width = x.dim(3);
  d.out_channels = weight.dim(0);
  d.kernel = weight.dim(2);
  if (weight.dim(1) != d.in_channels || weight.dim(3) != d.kernel || d.kernel % 2 == 0)
    throw ShapeError("conv2d: input " + shape_str(x.shape()) + " vs weight " + shape_str(weight.shape()));
  if (bias.defined() && bias.shape() != Shape{d.out_channels}) throw ShapeError("conv2d: bias shape");
  Tensor out({d.batch, d.out_channels, d.height, d.width});
  kernels::conv2d_forward(d, x.value().ptr(), weight.value().ptr(), bias.defined() ? bias.value().ptr() : nullptr,
                          out.ptr());
  return make(std::move(out), {x, weight, bias}, [x, weight, bias, d](Node& self) {
    const double* g = self.grad.ptr();
    if (double* gx = grad_of(x)) kernels::conv2d_backward_input(d, g, weight.value().ptr(), gx);
    double* gw = grad_of(weight);
    double* gb = grad_of(bias);
    if (gw) {
      kernels::conv2d_backward_weight(d, g, x.value().ptr(), gw, gb);
    } else if (gb) {
      const int hw = d.height * d.width;
      for (int s = 0; s < d.batch; ++s)
        for (int o = 0; o < d.out_channels; ++o)
          for (int i = 0; i < hw; ++i) gb[o] += g[(static_cast<long>(s) * d.out_channels + o) * hw + i];
    }
  });
}

Var upsample2x(const Var& x) {
  require_rank(x, 4, "upsample2x");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out({n, c, 2 * h, 2 * w});
  const double* src = x.value().ptr();
  for (long p = 0; p < static_cast<long>(n) * c; ++p)
    for (int y = 0; y < 2 * h; ++y)
      for (int xx = 0; xx < 2 * w; ++xx) out[(p * 2 * h + y) * 2 * w + xx] = src[(p * h + y / 2) * w + xx / 2];
  return make(std::move(out), {x}, [x, n, c, h, w](Node& self) {
    if (double* gx = grad_of(x))
      for (long p = 0; p < static_cast<long>(n) * c; ++p)
        for (int y = 0; y < 2 * h; ++y)
          for (int xx = 0; xx < 2 * w; ++xx) gx[(p * h + y / 2) * w + xx / 2] += self.grad[(p * 2 * h + y) * 2 * w + xx];
  });
}

Var avgpool2x(const Var& x) {
  require_rank(x, 4, "avgpool2x");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 || w % 2) throw ShapeError("avgpool2x needs even spatial size");
  const int oh = h / 2, ow = w / 2;
  Tensor out({n, c, oh, ow});
  const double* src = x.value().ptr();
  for (long p = 0; p < static_cast<long>(n) * c; ++p)
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx) {
        const double* r0 = src + (p * h + 2 * y) * w + 2 * xx;
        out[(p * oh + y) * ow + xx] = 0.25 * (r0[0] + r0[1] + r0[w] + r0[w + 1]);
      }
  return make(std::move(out), {x}, [x, n, c, h, w, oh, ow](Node& self) {
    if (double* gx = grad_of(x))
      for (long p = 0; p < static_cast<long>(n) * c; ++p)
        for (int y = 0; y < oh; ++y)
          for (int xx = 0; xx < ow; ++xx) {
            const double g = 0.25 * self.grad[(p * oh + y) * ow + xx];
            double* r0 = gx + (p * h + 2 * y) * w + 2 * xx;
            r0[0] += g;
            r0[1] += g;
            r0[w] += g;
            r0[w + 1] += g;
          }
  });
}

Var global_avg_pool(const Var& x) {
  require_rank(x, 4, "global_avg_pool");
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out({n, c});
  for (long p = 0; p < static_cast<long>(n) * c; ++p) {
    double acc = 0.0;
    for (int i = 0; i < hw; ++i) acc += x.value()[p * hw + i];
    out[p] = acc / hw;
  }
  return make(std::move(out), {x}, [x, n, c, hw](Node& self) {
    if (double* gx = grad_of(x))
      for (long p = 0; p < static_cast<long>(n) * c; ++p) {
        const double g = self.grad[p] / hw;
        for (int i = 0; i < hw; ++i) gx[p * hw + i] += g;
      }
  });
}

Var instance_norm(const Var& x, double eps) {
  require_rank(x, 4, "instance_norm");
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const long planes = static_cast<long>(n) * c;
  Tensor out(x.shape());
  std::vector<double> inv_std(planes);
  for (long p = 0; p < planes; ++p) {
    const double* src = x.value().ptr() + p * hw;
    double m = 0.0;
    for (int i = 0; i < hw; ++i) m += src[i];
    m /= hw;
    double v = 0.0;
    for (int i = 0; i < hw; ++i) v += (src[i] - m) * (src[i] - m);
    v /= hw;
    inv_std[p] = 1.0 / std::sqrt(v + eps);
    for (int i = 0; i < hw; ++i) out[p * hw + i] = (src[i] - m) * inv_std[p];
  }
  return make(std::move(out), {x}, [x, inv_std, planes, hw](Node& self) {
    double* gx = grad_of(x);
    if (!gx) return;
    // dx = inv_std * (g - mean(g) - y * mean(g * y))
    for (long p = 0; p < planes; ++p) {
      const double* g = self.grad.ptr() + p * hw;
      const double* y = self.value.ptr() + p * hw;
      double mg = 0.0, mgy = 0.0;
      for (int i = 0; i < hw; ++i) {
        mg += g[i];
        mgy += g[i] * y[i];
      }
      mg /= hw;
      mgy /= hw;
      for (int i = 0; i < hw; ++i) gx[p * hw + i] += inv_std[p] * (g[i] - mg - y[i] * mgy);
    }
  });
}

Var modulate(const Var& x, const Var& scale_v, const Var& shift) {
  require_rank(x, 4, "modulate");
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (scale_v.shape() != Shape{n, c} || shift.shape() != Shape{n, c})
    throw ShapeError("modulate: style shapes must be (N, C)");
  Tensor out(x.shape());
  for (long p = 0; p < static_cast<long>(n) * c; ++p) {
    const double a = scale_v.value()[p], b = shift.value()[p];
    for (int i = 0; i < hw; ++i) out[p * hw + i] = x.value()[p * hw + i] * a + b;
  }
  return make(std::move(out), {x, scale_v, shift}, [x, scale_v, shift, n, c, hw](Node& self) {
    double* gx = grad_of(x);
    double* ga = grad_of(scale_v);
    double* gb = grad_of(shift);
    for (long p = 0; p < static_cast<long>(n) * c; ++p) {
      const double* g = self.grad.ptr() + p * hw;
      const double* xv = x.value().ptr() + p * hw;
      if (gx) {
        const double a = scale_v.value()[p];
        for (int i = 0; i < hw; ++i) gx[p * hw + i] += g[i] * a;
      }
      if (ga) {
        double acc = 0.0;
        for (int i = 0; i < hw; ++i) acc += g[i] * xv[i];
        ga[p] += acc;
      }
      if (gb) {
        double acc = 0.0;
        for (int i = 0; i < hw; ++i) acc += g[i];
        gb[p] += acc;
      }
    }
  });
}

Var add_noise(const Var& x, const Tensor& noise, const Var& strength) {
  require_rank(x, 4, "add_noise");
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (noise.shape() != Shape{n, 1, x.dim(2), x.dim(3)} || strength.shape() != Shape{c})
    throw ShapeError("add_noise: noise must be (N, 1, H, W) and strength (C)");
  Tensor out = x.value();
  for (int s = 0; s < n; ++s)
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < hw; ++i)
        out[(static_cast<long>(s) * c + ch) * hw + i] += strength.value()[ch] * noise[static_cast<long>(s) * hw + i];
  return make(std::move(out), {x, strength}, [x, noise, strength, n, c, hw](Node& self) {
    if (double* gx = grad_of(x))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
    if (double* gs = grad_of(strength))
      for (int s = 0; s < n; ++s)
        for (int ch = 0; ch < c; ++ch) {
          double acc = 0.0;
          for (int i = 0; i < hw; ++i)
            acc += self.grad[(static_cast<long>(s) * c + ch) * hw + i] * noise[static_cast<long>(s) * hw + i];
          gs[ch] += acc;
        }
  });
}

Var pixel_norm(const Var& x, double eps) {
  require_rank(x, 2, "pixel_norm");
  const int n = x.dim(0), e = x.dim(1);
  Tensor out(x.shape());
  std::vector<double> inv(n);
  for (int s = 0; s < n; ++s) {
    double ms = 0.0;
    for (int j = 0; j < e; ++j) ms += x.value()[s * e + j] * x.value()[s * e + j];
    inv[s] = 1.0 / std::sqrt(ms / e + eps);
    for (int j = 0; j < e; ++j) out[s * e + j] = x.value()[s * e + j] * inv[s];
  }
  return make(std::move(out), {x}, [x, inv, n, e](Node& self) {
    double* gx = grad_of(x);
    if (!gx) return;
    // y = x * r, r = (mean(x^2) + eps)^(-1/2); dx = r * (g - y * mean(g * y))
    for (int s = 0; s < n; ++s) {
      double gy = 0.0;
      for (int j = 0; j < e; ++j) gy += self.grad[s * e + j] * self.value[s * e + j];
      gy /= e;
      for (int j = 0; j < e; ++j) gx[s * e + j] += inv[s] * (self.grad[s * e + j] - self.value[s * e + j] * gy);
    }
  });
}

Var pairwise_sq_dist(const Var& a, const Var& b) {
  require_rank(a, 2, "pairwise_sq_dist");
  require_rank(b, 2, "pairwise_sq_dist");
  const int n = a.dim(0), m = b.dim(0), c = a.dim(1);
  if (b.dim(1) != c) throw ShapeError("pairwise_sq_dist: feature dims differ");
  Tensor out({n, m});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) {
      double acc = 0.0;
      for (int k = 0; k < c; ++k) {
        const double d = a.value()[i * c + k] - b.value()[j * c + k];
        acc += d * d;
      }
      out[i * m + j] = acc;
    }
  return make(std::move(out), {a, b}, [a, b, n, m, c](Node& self) {
    double* ga = grad_of(a);
    double* gb = grad_of(b);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) {
        const double g = 2.0 * self.grad[i * m + j];
        if (g == 0.0) continue;
        for (int k = 0; k < c; ++k) {
          const double d = a.value()[i * c + k] - b.value()[j * c + k];
          if (ga) ga[i * c + k] += g * d;
          if (gb) gb[j * c + k] -= g * d;
        }
      }
  });
}

Var bidirectional_hinge(const Var& d, double margin) {
  require_rank(d, 2, "bidirectional_hinge");
  const int n = d.dim(0);
  if (d.dim(1) != n || n < 2) throw ShapeError("bidirectional_hinge: expects a square (N, N) matrix with N >= 2");
  const double norm = 1.0 / (static_cast<double>(n) * (n - 1));
  const Tensor& v = d.value();
  double total = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      total += std::max(0.0, margin + v[i * n + i] - v[j * n + i]);
      total += std::max(0.0, margin + v[i * n + i] - v[i * n + j]);
    }
  return make(Tensor::scalar(total * norm), {d}, [d, n, margin, norm](Node& self) {
    double* g = grad_of(d);
    if (!g) return;
    const Tensor& v = d.value();
    const double up = self.grad[0] * norm;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        if (margin + v[i * n + i] - v[j * n + i] > 0.0) {
          g[i * n + i] += up;
          g[j * n + i] -= up;
        }
        if (margin + v[i * n + i] - v[i * n + j] > 0.0) {
          g[i * n + i] += up;
          g[i * n + j] -= up;
        }
      }
  });
}

Var cross_entropy(const Var& logits, std::span<const int> labels, int begin, int count) {
  require_rank(logits, 2, "cross_entropy");
  const int n = logits.dim(0), k = logits.dim(1);
  if (static_cast<int>(labels.size()) != n) throw ShapeError("cross_entropy: one label per row required");
  if (begin < 0 || count < 1 || begin + count > k) throw ShapeError("cross_entropy: class range out of bounds");
  std::vector<int> lab(labels.begin(), labels.end());
  for (int l : lab)
    if (l < 0 || l >= count) throw ShapeError("cross_entropy: label out of range");
  // Row-wise softmax over the selected columns, kept for the backward pass.
  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n) * count);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const double* row = logits.value().ptr() + static_cast<std::size_t>(i) * k + begin;
    const double mx = *std::max_element(row, row + count);
    double z = 0.0;
    for (int c = 0; c < count; ++c) z += std::exp(row[c] - mx);
    for (int c = 0; c < count; ++c) (*probs)[static_cast<std::size_t>(i) * count + c] = std::exp(row[c] - mx) / z;
    total -= row[lab[static_cast<std::size_t>(i)]] - mx - std::log(z);
  }
  return make(Tensor::scalar(total / n), {logits}, [logits, lab, probs, n, k, begin, count](Node& self) {
    double* g = grad_of(logits);
    if (!g) return;
    const double up = self.grad[0] / n;
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < count; ++c) {
        const double target = c == lab[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
        g[static_cast<std::size_t>(i) * k + begin + c] += up * ((*probs)[static_cast<std::size_t>(i) * count + c] - target);
      }
  });
}

}  // namespace tedi::ag

#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "tedi/tensor.hpp"

// Reverse-mode automatic differentiation over `Tensor`s with a dynamic tape.
// Graph nodes are built only when at least one input requires a gradient, so
// inference on frozen models allocates no tape.

namespace tedi::ag {

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // empty until first accumulation
  bool requires_grad = false;
  bool needed = false;  // set per backward pass
  std::vector<NodePtr> inputs;
  std::function<void(Node&)> backward;

  Tensor& ensure_grad();
};

class Var {
public:
  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  int dim(int i) const { return node_->value.dim(i); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const noexcept { return static_cast<bool>(node_); }

  /// Accumulated gradient; empty tensor if none reached this node.
  const Tensor& grad() const { return node_->grad; }
  void zero_grad() { node_->grad = Tensor(); }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  /// Overwrites the value of a leaf in place (optimizer updates).
  Tensor& mutable_value() { return node_->value; }

  Node* node() const noexcept { return node_.get(); }
  const NodePtr& node_ptr() const noexcept { return node_; }

private:
  NodePtr node_;
};

/// Leaf without gradient.
Var constant(Tensor value);
/// Leaf that accumulates gradients.
Var parameter(Tensor value);
Var detach(const Var& x);

/// Disables graph construction on this thread for its lifetime.
class NoGradGuard {
public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
  bool previous_;
};
bool grad_enabled();

/// Backpropagates from a single-element `root`. With `targets` non-empty,
/// only nodes on a path to a target are differentiated and only the targets
/// receive gradients.
void backward(const Var& root, std::span<const Var> targets = {});

// Elementwise (same shape).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var mul_const(const Var& a, const Tensor& c);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var square(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var relu(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var softplus(const Var& a);

// Reductions to shape {1}.
Var sum(const Var& a);
Var mean(const Var& a);
/// Sum of squares of all elements.
Var sum_squares(const Var& a);
/// Per-sample sum of squares: (N, ...) -> (N).
Var sum_squares_per_sample(const Var& a);

// Shape manipulation.
Var reshape(const Var& a, Shape shape);
/// (1, ...) -> (n, ...).
Var broadcast_batch(const Var& a, int n);
/// Rows [begin, end) along axis 0.
Var slice_batch(const Var& a, int begin, int end);
Var concat_batch(std::span<const Var> parts);
/// (N, L, C) -> (N, C).
Var select_layer(const Var& w, int layer);
/// L tensors of (N, C) -> (N, L, C).
Var stack_layers(std::span<const Var> layers);
/// (N, C) -> (N, L, C) with every layer equal to the input.
Var repeat_layers(const Var& z, int num_layers);
/// (N, L, C) weighted by p over L -> (N, C).
Var weighted_layer_sum(const Var& w, std::span<const double> p);
/// table (V, E), ids -> (ids.size(), E).
Var gather_rows(const Var& table, std::span<const int> ids);

// Dense layers.
/// x (N, in), weight (out, in), bias (out) or undefined.
Var linear(const Var& x, const Var& weight, const Var& bias);
/// x (N, C, H, W), weight (O, C, k, k), bias (O) or undefined. Same padding.
Var conv2d(const Var& x, const Var& weight, const Var& bias);
Var upsample2x(const Var& x);
Var avgpool2x(const Var& x);
/// (N, C, H, W) -> (N, C).
Var global_avg_pool(const Var& x);
/// Per-sample, per-channel normalization over H, W.
Var instance_norm(const Var& x, double eps = 1e-5);
/// x (N, C, H, W) * scale (N, C) + shift (N, C), broadcast over H, W.
Var modulate(const Var& x, const Var& scale, const Var& shift);
/// x (N, C, H, W) + strength (C) * noise (N, 1, H, W).
Var add_noise(const Var& x, const Tensor& noise, const Var& strength);
/// Normalizes each row of (N, E) to unit RMS.
Var pixel_norm(const Var& x, double eps = 1e-8);

/// Squared distances between rows: a (N, C), b (M, C) -> (N, M).
Var pairwise_sq_dist(const Var& a, const Var& b);
/// Triplet hinge over a square distance matrix d(i, j) with matches on the
/// diagonal, in both directions:
/// sum_{i != j} [m + d_ii - d_ji]_+ + [m + d_ii - d_ij]_+, divided by N(N-1).
Var bidirectional_hinge(const Var& d, double margin);
/// Mean softmax cross-entropy over columns [begin, begin + count) of (N, K)
/// logits; labels index into that range.
Var cross_entropy(const Var& logits, std::span<const int> labels, int begin, int count);

}  // namespace tedi::ag

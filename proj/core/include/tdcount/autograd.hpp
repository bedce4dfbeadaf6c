#pragma once

// Minimal reverse-mode automatic differentiation over Tensor values.
//
// Every operation returns a new graph node. A node requires a gradient iff
// at least one parent does; nodes that do not are plain values with no
// backward closure, so frozen sub-networks cost nothing extra. Parameters are
// long-lived leaves whose gradients accumulate across backward() calls until
// the optimizer clears them.

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "tdcount/tensor.hpp"

namespace tdc::ag {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // empty until something accumulates into it
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;

  // Returns the gradient buffer, zero-allocating it on first use.
  Tensor& grad_buffer();
  void zero_grad() { grad = Tensor(); }
};

Var constant(Tensor value);
Var parameter(Tensor value);
// Shares the value, drops the graph.
Var detach(const Var& v);

// Seeds d(root)/d(root) = 1 and propagates to every reachable node.
void backward(const Var& root);

// Elementwise arithmetic; shapes must match exactly.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var relu(const Var& a);

// Scalar reductions and losses (results have shape (1)).
Var sum(const Var& a);
Var abs(const Var& a);
Var mse(const Var& a, const Var& b);
Var pseudo_huber(const Var& e, double c);
// Mean over rows of -log softmax(logits)[label].
Var cross_entropy_rows(const Var& logits, std::span<const int> labels);

// Image ops on (C, H, W).
// 2-D convolution, weight (O, C, k, k), optional bias (O).
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);
// Adds v[c] to every pixel of channel c; v holds C entries in any shape.
Var add_channel_bias(const Var& x, const Var& v);
Var concat_channels(const Var& a, const Var& b);
Var upsample_nearest2(const Var& x);
// Align-corners=false bilinear resampling.
Var resize_bilinear(const Var& x, int out_h, int out_w);

// Token ops: (C, H, W) <-> (H*W, C).
Var to_tokens(const Var& x);
Var from_tokens(const Var& t, int h, int w);

// Matrix ops on rank-2 tensors.
Var matmul(const Var& a, const Var& b);     // a b
Var matmul_bt(const Var& a, const Var& b);  // a b^T
Var add_row_bias(const Var& x, const Var& b);
Var softmax_rows(const Var& x);
Var slice_cols(const Var& x, int begin, int end);
Var concat_cols(const std::vector<Var>& parts);
Var select_rows(const Var& x, std::span<const int> rows);
// Divides each row by max(||row||, eps).
Var l2_normalize_rows(const Var& x, double eps = 1e-12);

}  // namespace tdc::ag

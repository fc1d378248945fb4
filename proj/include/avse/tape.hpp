// Copyright 2026 The AVSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "avse/tensor.hpp"

namespace avse::nn {

// Define-by-run reverse-mode autodiff over dense double tensors. Each op
// appends a node holding the forward value and a closure that scatters the
// node's gradient into its parents. backward() walks nodes in reverse
// creation order, which is a valid topological order by construction.
//
// Nodes whose ancestors contain no differentiable leaf carry
// requires_grad=false; their closures are skipped, so a frozen teacher
// forward pass costs no backward work.
class Tape {
 public:
  using BackFn = std::function<void(Tape&, int self)>;

  int leaf(Tensor value, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), {}, nullptr, Tensor{}, false, requires_grad});
    return static_cast<int>(nodes_.size()) - 1;
  }
  int constant(Tensor value) { return leaf(std::move(value), false); }

  int emit(Tensor value, std::vector<int> parents, BackFn back) {
    bool req = false;
    for (int p : parents) req = req || nodes_[static_cast<size_t>(p)].needs;
    nodes_.push_back(Node{std::move(value), std::move(parents),
                          req ? std::move(back) : nullptr, Tensor{}, false, req});
    return static_cast<int>(nodes_.size()) - 1;
  }

  const Tensor& val(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  bool needs_grad(int id) const { return nodes_[static_cast<size_t>(id)].needs; }
  size_t node_count() const { return nodes_.size(); }

  // Gradient buffer, zero-initialized on first touch.
  Tensor& grad(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.has_grad) {
      n.grad = Tensor(n.value.shape());
      n.has_grad = true;
    }
    return n.grad;
  }

  void backward(int root) {
    check_dims(val(root).numel() == 1, "backward: root must be scalar");
    check_config(needs_grad(root), "backward: root does not depend on any trainable leaf");
    grad(root)[0] = 1.0;
    for (int id = root; id >= 0; --id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      if (!n.needs || !n.back || !n.has_grad) continue;
      n.back(*this, id);
    }
  }

 private:
  struct Node {
    Tensor value;
    std::vector<int> parents;
    BackFn back;
    Tensor grad;
    bool has_grad = false;
    bool needs = false;
  };
  std::vector<Node> nodes_;
};

// Geometry of a strided convolution over 2 or 3 trailing spatial dims.
struct ConvSpec {
  std::vector<int> stride;
  std::vector<int> pad;
};

// Running statistics for one batch-norm layer; owned by the model, updated
// in place by forward passes in training mode.
struct BatchNormState {
  Tensor running_mean;  // [C]
  Tensor running_var;   // [C], biased
  double momentum = 0.1;
  double eps = 1e-5;
};

// Elementwise and shape ops.
int add(Tape& t, int a, int b);
int sub(Tape& t, int a, int b);
int mul(Tape& t, int a, int b);
int scale(Tape& t, int a, double s);
int leaky_relu(Tape& t, int a, double slope);
int tanh_op(Tape& t, int a);
int log_op(Tape& t, int a);
int clamp_min(Tape& t, int a, double lo);
int reshape(Tape& t, int a, std::vector<int> shape);
int permute(Tape& t, int a, std::vector<int> perm);
int concat(Tape& t, const std::vector<int>& parts, int axis);
int slice(Tape& t, int a, int axis, int start, int len);
int sum_all(Tape& t, int a);
int mean_all(Tape& t, int a);

// Linear algebra.
int matmul(Tape& t, int a, int b);      // [m,k]x[k,n] -> [m,n]
int transpose2d(Tape& t, int a);        // [m,n] -> [n,m]
int linear(Tape& t, int x, int w, int b);  // x [r,i], w [o,i], b [o] -> [r,o]

// Row-wise ops on [R, C].
enum class ZeroRowPolicy { kLeaveZero, kError };
int rows_l2_normalize(Tape& t, int a, ZeroRowPolicy policy, double floor = 1e-12);
int softmax_rows(Tape& t, int a, double scale = 1.0);

// Network layers. Weight layouts:
//   conv:            w [Cout, Cin, k...], x [B, Cin, sp...]
//   conv_transpose:  w [Cin, Cout, k...], out spatial = (in-1)*stride - 2*pad + k
int conv(Tape& t, int x, int w, int b, const ConvSpec& spec);
int conv_transpose(Tape& t, int x, int w, int b, const ConvSpec& spec);

// Average pool over the last axis, kernel/stride 2, ceil mode, partial
// windows averaged over their true element count.
int avg_pool_last(Tape& t, int x);
// Nearest-neighbor resize of the last axis to the target width.
int upsample_last_to(Tape& t, int x, int target);

int batch_norm(Tape& t, int x, int gamma, int beta, BatchNormState& state,
               bool training);

// Single LSTM layer over x [B, S, I] with w_ih [4H, I], w_hh [4H, H],
// bias [4H]; gate order (input, forget, cell, output). Returns [B, S, H].
int lstm(Tape& t, int x, int w_ih, int w_hh, int b, int hidden);

// Per-frame row-normalized Gram matrices: x [b, c, s, f] -> [s, b, b].
// Frame j: rows of F = flatten_b(x[:, :, j, :]) give G = rownorm(F F^T);
// rows with pre-normalization norm < 1e-12 are left as zeros.
int frame_grams(Tape& t, int x);

// Convenience: mean squared error over all elements.
int mse(Tape& t, int a, int b);

}  // namespace avse::nn

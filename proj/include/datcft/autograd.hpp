#pragma once
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "datcft/tensor.hpp"

namespace datcft {

// Reverse-mode tape. Nodes are created in topological order; backward walks
// them in reverse creation order, so each node's grad is complete before its
// own backprop closure runs.
struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor val;
  Tensor grad;  // allocated on first access
  bool needs_grad = false;
  int64_t order = 0;
  std::vector<Var> parents;
  std::function<void(Node&)> backprop;

  Tensor& g() {
    if (grad.data.empty() && !val.data.empty()) grad = Tensor::zeros(val.shape);
    return grad;
  }
};

Var constant(Tensor v);
Var leaf(Tensor v);  // needs_grad = true
void backward(const Var& root);
void zero_grad(Node& n);

// hook for modules that define their own differentiable ops
Var make_op_node(Tensor val, std::vector<Var> parents, std::function<void(Node&)> back);

// elementwise (same shape)
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var divide(const Var& a, const Var& b);
Var maximum(const Var& a, const Var& b);
Var neg(const Var& x);
Var scale(const Var& x, double c);
Var add_const(const Var& x, double c);
Var absval(const Var& x);
Var sqrt_op(const Var& x);
Var log_op(const Var& x);
Var sigmoid(const Var& x);
Var tanh_op(const Var& x);
Var leaky_relu(const Var& x, double slope);

// reductions and scalar combinations
Var sum_all(const Var& x);
Var mean_all(const Var& x);
Var dot_const(const Var& x, const Tensor& w);          // -> [1]
Var scale_by_const_tensor(const Var& s, const Tensor& t);  // s [1] -> s * t
Var mul_by_scalar_var(const Var& x, const Var& s);     // x * s, s is [1]

// shape
Var reshape(const Var& x, std::vector<int> shape);
Var permute(const Var& x, std::vector<int> perm);
Var concat(const std::vector<Var>& xs, int axis);
Var slice(const Var& x, int axis, int start, int len);

// linear algebra
Var linear(const Var& x, const Var& W, const Var& b);  // x [R,din], W [dout,din], b [dout] or null
Var bmm_nt(const Var& a, const Var& b);  // [N,S1,d] x [N,S2,d] -> [N,S1,S2]
Var bmm_nn(const Var& a, const Var& b);  // [N,S1,S2] x [N,S2,d] -> [N,S1,d]
Var freq_matmul(const Var& x, const Var& M);  // [B,C,F,T], M [F,F]

// normalization / softmax
Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps);
Var layer_norm_cf(const Var& x, const Var& gamma, const Var& beta, double eps);
Var softmax_rows_masked(const Var& x, bool causal);  // [N,S,S]

// convolution (real, NCHW = [B,C,F,T])
struct ConvGeom {
  int sf = 1, st = 1, pf = 0, pt = 0;
};
Var conv2d(const Var& x, const Var& W, const Var& b, ConvGeom g);
Var conv2d_transposed(const Var& x, const Var& W, const Var& b, ConvGeom g);
Var depthwise_conv2d(const Var& x, const Var& W, const Var& b, ConvGeom g, bool transposed);

// recurrent
Var lstm(const Var& x, const Var& W, const Var& R, const Var& b, bool reverse);

int conv_out_dim(int in, int k, int stride, int pad);
int conv_transposed_out_dim(int in, int k, int stride, int pad);

}  // namespace datcft

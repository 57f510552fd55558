#include "datcft/autograd.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace datcft {

namespace {

std::atomic<int64_t> g_order{0};

Var make_node(Tensor val, std::vector<Var> parents, std::function<void(Node&)> back) {
  auto n = std::make_shared<Node>();
  n->val = std::move(val);
  n->parents = std::move(parents);
  n->backprop = std::move(back);
  n->order = g_order.fetch_add(1);
  for (const auto& p : n->parents)
    if (p && p->needs_grad) n->needs_grad = true;
  return n;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a->val.same_shape(b->val))
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace

Var constant(Tensor v) {
  auto n = std::make_shared<Node>();
  n->val = std::move(v);
  n->order = g_order.fetch_add(1);
  n->needs_grad = false;
  return n;
}

Var make_op_node(Tensor val, std::vector<Var> parents, std::function<void(Node&)> back) {
  return make_node(std::move(val), std::move(parents), std::move(back));
}

Var leaf(Tensor v) {
  auto n = std::make_shared<Node>();
  n->val = std::move(v);
  n->order = g_order.fetch_add(1);
  n->needs_grad = true;
  return n;
}

void zero_grad(Node& n) {
  if (!n.grad.data.empty()) std::fill(n.grad.data.begin(), n.grad.data.end(), 0.0);
}

void backward(const Var& root) {
  if (root->val.numel() != 1) throw NumericError("backward: root must be scalar");
  // collect reachable grad-requiring subgraph
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root.get()};
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (!n->needs_grad || seen.count(n)) continue;
    seen.insert(n);
    order.push_back(n);
    for (const auto& p : n->parents)
      if (p) stack.push_back(p.get());
  }
  std::sort(order.begin(), order.end(),
            [](const Node* a, const Node* b) { return a->order > b->order; });
  root->g().data[0] += 1.0;
  for (Node* n : order)
    if (n->backprop) n->backprop(*n);
}

// ---------------------------------------------------------------------------
// elementwise

namespace {

template <class F, class DA, class DB>
Var binary_ew(const Var& a, const Var& b, const char* name, F f, DA da, DB db) {
  check_same_shape(a, b, name);
  Tensor out(a->val.shape);
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out.data[i] = f(a->val.data[i], b->val.data[i]);
  Var va = a, vb = b;
  return make_node(std::move(out), {a, b}, [va, vb, da, db](Node& self) {
    const int64_t n = self.val.numel();
    if (va->needs_grad) {
      auto& g = va->g();
      for (int64_t i = 0; i < n; ++i)
        g.data[i] += self.grad.data[i] * da(va->val.data[i], vb->val.data[i], self.val.data[i]);
    }
    if (vb->needs_grad) {
      auto& g = vb->g();
      for (int64_t i = 0; i < n; ++i)
        g.data[i] += self.grad.data[i] * db(va->val.data[i], vb->val.data[i], self.val.data[i]);
    }
  });
}

template <class F, class D>
Var unary_ew(const Var& x, F f, D dfdx) {
  Tensor out(x->val.shape);
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out.data[i] = f(x->val.data[i]);
  Var vx = x;
  return make_node(std::move(out), {x}, [vx, dfdx](Node& self) {
    if (!vx->needs_grad) return;
    auto& g = vx->g();
    const int64_t n = self.val.numel();
    for (int64_t i = 0; i < n; ++i)
      g.data[i] += self.grad.data[i] * dfdx(vx->val.data[i], self.val.data[i]);
  });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  return binary_ew(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Var sub(const Var& a, const Var& b) {
  return binary_ew(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Var mul(const Var& a, const Var& b) {
  return binary_ew(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Var divide(const Var& a, const Var& b) {
  return binary_ew(
      a, b, "divide", [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double x, double y, double) { return -x / (y * y); });
}

Var maximum(const Var& a, const Var& b) {
  return binary_ew(
      a, b, "maximum", [](double x, double y) { return x > y ? x : y; },
      [](double x, double y, double) { return x > y ? 1.0 : 0.0; },
      [](double x, double y, double) { return x > y ? 0.0 : 1.0; });
}

Var neg(const Var& x) {
  return unary_ew(x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Var scale(const Var& x, double c) {
  return unary_ew(x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

Var add_const(const Var& x, double c) {
  return unary_ew(x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Var absval(const Var& x) {
  return unary_ew(x, [](double v) { return std::fabs(v); },
                  [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Var sqrt_op(const Var& x) {
  return unary_ew(x, [](double v) { return std::sqrt(v); },
                  [](double, double y) { return 0.5 / y; });
}

Var log_op(const Var& x) {
  return unary_ew(x, [](double v) { return std::log(v); },
                  [](double v, double) { return 1.0 / v; });
}

Var sigmoid(const Var& x) {
  return unary_ew(x,
                  [](double v) {
                    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
                    double e = std::exp(v);
                    return e / (1.0 + e);
                  },
                  [](double, double y) { return y * (1.0 - y); });
}

Var tanh_op(const Var& x) {
  return unary_ew(x, [](double v) { return std::tanh(v); },
                  [](double, double y) { return 1.0 - y * y; });
}

Var leaky_relu(const Var& x, double slope) {
  return unary_ew(x, [slope](double v) { return v >= 0 ? v : slope * v; },
                  [slope](double v, double) { return v >= 0 ? 1.0 : slope; });
}

// ---------------------------------------------------------------------------
// reductions

Var sum_all(const Var& x) {
  double s = 0.0;
  for (double v : x->val.data) s += v;
  Var vx = x;
  return make_node(Tensor::scalar(s), {x}, [vx](Node& self) {
    if (!vx->needs_grad) return;
    auto& g = vx->g();
    const double gv = self.grad.data[0];
    for (auto& e : g.data) e += gv;
  });
}

Var mean_all(const Var& x) { return scale(sum_all(x), 1.0 / static_cast<double>(x->val.numel())); }

Var dot_const(const Var& x, const Tensor& w) {
  if (!x->val.same_shape(w)) throw std::invalid_argument("dot_const: shape mismatch");
  double s = 0.0;
  const int64_t n = x->val.numel();
  for (int64_t i = 0; i < n; ++i) s += x->val.data[i] * w.data[i];
  Var vx = x;
  Tensor wc = w;
  return make_node(Tensor::scalar(s), {x}, [vx, wc](Node& self) {
    if (!vx->needs_grad) return;
    auto& g = vx->g();
    const double gv = self.grad.data[0];
    const int64_t n = g.numel();
    for (int64_t i = 0; i < n; ++i) g.data[i] += gv * wc.data[i];
  });
}

Var scale_by_const_tensor(const Var& s, const Tensor& t) {
  if (s->val.numel() != 1) throw std::invalid_argument("scale_by_const_tensor: s must be scalar");
  Tensor out(t.shape);
  const double sv = s->val.data[0];
  const int64_t n = t.numel();
  for (int64_t i = 0; i < n; ++i) out.data[i] = sv * t.data[i];
  Var vs = s;
  Tensor tc = t;
  return make_node(std::move(out), {s}, [vs, tc](Node& self) {
    if (!vs->needs_grad) return;
    double acc = 0.0;
    const int64_t n = self.grad.numel();
    for (int64_t i = 0; i < n; ++i) acc += self.grad.data[i] * tc.data[i];
    vs->g().data[0] += acc;
  });
}

Var mul_by_scalar_var(const Var& x, const Var& s) {
  if (s->val.numel() != 1) throw std::invalid_argument("mul_by_scalar_var: s must be scalar");
  Tensor out(x->val.shape);
  const double sv = s->val.data[0];
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out.data[i] = sv * x->val.data[i];
  Var vx = x, vs = s;
  return make_node(std::move(out), {x, s}, [vx, vs](Node& self) {
    const int64_t n = self.val.numel();
    if (vx->needs_grad) {
      auto& g = vx->g();
      const double sv = vs->val.data[0];
      for (int64_t i = 0; i < n; ++i) g.data[i] += self.grad.data[i] * sv;
    }
    if (vs->needs_grad) {
      double acc = 0.0;
      for (int64_t i = 0; i < n; ++i) acc += self.grad.data[i] * vx->val.data[i];
      vs->g().data[0] += acc;
    }
  });
}

// ---------------------------------------------------------------------------
// shape ops

Var reshape(const Var& x, std::vector<int> shape) {
  if (shape_numel(shape) != x->val.numel()) throw std::invalid_argument("reshape: numel mismatch");
  Tensor out;
  out.shape = std::move(shape);
  out.data = x->val.data;
  Var vx = x;
  return make_node(std::move(out), {x}, [vx](Node& self) {
    if (!vx->needs_grad) return;
    auto& g = vx->g();
    const int64_t n = g.numel();
    for (int64_t i = 0; i < n; ++i) g.data[i] += self.grad.data[i];
  });
}

namespace {

std::vector<int64_t> strides_of(const std::vector<int>& shape) {
  std::vector<int64_t> s(shape.size());
  int64_t acc = 1;
  for (int i = static_cast<int>(shape.size()) - 1; i >= 0; --i) {
    s[static_cast<size_t>(i)] = acc;
    acc *= shape[static_cast<size_t>(i)];
  }
  return s;
}

// mapping from output linear index to input linear index for a permutation
void permute_copy(const Tensor& in, const std::vector<int>& perm, Tensor& out, bool add_to_in,
                  Tensor* grad_in, const Tensor* grad_out) {
  const int nd = in.ndim();
  auto in_strides = strides_of(in.shape);
  std::vector<int> out_shape(static_cast<size_t>(nd));
  for (int i = 0; i < nd; ++i) out_shape[static_cast<size_t>(i)] = in.shape[static_cast<size_t>(perm[static_cast<size_t>(i)])];
  std::vector<int64_t> out_in_stride(static_cast<size_t>(nd));
  for (int i = 0; i < nd; ++i) out_in_stride[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(perm[static_cast<size_t>(i)])];
  std::vector<int> idx(static_cast<size_t>(nd), 0);
  const int64_t n = in.numel();
  int64_t src = 0;
  for (int64_t o = 0; o < n; ++o) {
    if (!add_to_in)
      out.data[static_cast<size_t>(o)] = in.data[static_cast<size_t>(src)];
    else
      grad_in->data[static_cast<size_t>(src)] += grad_out->data[static_cast<size_t>(o)];
    // increment multi-index over out_shape
    for (int d = nd - 1; d >= 0; --d) {
      idx[static_cast<size_t>(d)]++;
      src += out_in_stride[static_cast<size_t>(d)];
      if (idx[static_cast<size_t>(d)] < out_shape[static_cast<size_t>(d)]) break;
      src -= out_in_stride[static_cast<size_t>(d)] * out_shape[static_cast<size_t>(d)];
      idx[static_cast<size_t>(d)] = 0;
    }
  }
}

}  // namespace

Var permute(const Var& x, std::vector<int> perm) {
  const int nd = x->val.ndim();
  if (static_cast<int>(perm.size()) != nd) throw std::invalid_argument("permute: bad perm");
  std::vector<int> out_shape(static_cast<size_t>(nd));
  for (int i = 0; i < nd; ++i) out_shape[static_cast<size_t>(i)] = x->val.shape[static_cast<size_t>(perm[static_cast<size_t>(i)])];
  Tensor out(out_shape);
  permute_copy(x->val, perm, out, false, nullptr, nullptr);
  Var vx = x;
  return make_node(std::move(out), {x}, [vx, perm](Node& self) {
    if (!vx->needs_grad) return;
    Tensor dummy;
    permute_copy(vx->val, perm, dummy, true, &vx->g(), &self.grad);
  });
}

Var concat(const std::vector<Var>& xs, int axis) {
  if (xs.empty()) throw std::invalid_argument("concat: empty input");
  const int nd = xs[0]->val.ndim();
  if (axis < 0 || axis >= nd) throw std::invalid_argument("concat: bad axis");
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= xs[0]->val.shape[static_cast<size_t>(i)];
  for (int i = axis + 1; i < nd; ++i) inner *= xs[0]->val.shape[static_cast<size_t>(i)];
  int total_axis = 0;
  for (const auto& v : xs) {
    if (v->val.ndim() != nd) throw std::invalid_argument("concat: rank mismatch");
    for (int i = 0; i < nd; ++i)
      if (i != axis && v->val.shape[static_cast<size_t>(i)] != xs[0]->val.shape[static_cast<size_t>(i)])
        throw std::invalid_argument("concat: shape mismatch");
    total_axis += v->val.shape[static_cast<size_t>(axis)];
  }
  std::vector<int> out_shape = xs[0]->val.shape;
  out_shape[static_cast<size_t>(axis)] = total_axis;
  Tensor out(out_shape);
  int64_t off = 0;
  for (const auto& v : xs) {
    const int64_t a = v->val.shape[static_cast<size_t>(axis)];
    for (int64_t o = 0; o < outer; ++o)
      std::copy_n(v->val.data.begin() + o * a * inner, a * inner,
                  out.data.begin() + (o * total_axis + off) * inner);
    off += a;
  }
  std::vector<Var> parents = xs;
  return make_node(std::move(out), parents,
                   [parents, axis, outer, inner, total_axis](Node& self) {
                     int64_t off = 0;
                     for (const auto& v : parents) {
                       const int64_t a = v->val.shape[static_cast<size_t>(axis)];
                       if (v->needs_grad) {
                         auto& g = v->g();
                         for (int64_t o = 0; o < outer; ++o) {
                           const double* src = self.grad.data.data() + (o * total_axis + off) * inner;
                           double* dst = g.data.data() + o * a * inner;
                           for (int64_t i = 0; i < a * inner; ++i) dst[i] += src[i];
                         }
                       }
                       off += a;
                     }
                   });
}

Var slice(const Var& x, int axis, int start, int len) {
  const int nd = x->val.ndim();
  if (axis < 0 || axis >= nd) throw std::invalid_argument("slice: bad axis");
  const int a = x->val.shape[static_cast<size_t>(axis)];
  if (start < 0 || len < 0 || start + len > a) throw std::invalid_argument("slice: out of range");
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x->val.shape[static_cast<size_t>(i)];
  for (int i = axis + 1; i < nd; ++i) inner *= x->val.shape[static_cast<size_t>(i)];
  std::vector<int> out_shape = x->val.shape;
  out_shape[static_cast<size_t>(axis)] = len;
  Tensor out(out_shape);
  for (int64_t o = 0; o < outer; ++o)
    std::copy_n(x->val.data.begin() + (o * a + start) * inner, static_cast<int64_t>(len) * inner,
                out.data.begin() + o * len * inner);
  Var vx = x;
  return make_node(std::move(out), {x}, [vx, a, start, len, outer, inner](Node& self) {
    if (!vx->needs_grad) return;
    auto& g = vx->g();
    for (int64_t o = 0; o < outer; ++o) {
      const double* src = self.grad.data.data() + o * len * inner;
      double* dst = g.data.data() + (o * a + start) * inner;
      for (int64_t i = 0; i < static_cast<int64_t>(len) * inner; ++i) dst[i] += src[i];
    }
  });
}

// ---------------------------------------------------------------------------
// linear algebra

Var linear(const Var& x, const Var& W, const Var& b) {
  if (x->val.ndim() != 2 || W->val.ndim() != 2) throw std::invalid_argument("linear: rank");
  const int R = x->val.shape[0], din = x->val.shape[1];
  const int dout = W->val.shape[0];
  if (W->val.shape[1] != din) throw std::invalid_argument("linear: W/x dim mismatch");
  if (b && b->val.numel() != dout) throw std::invalid_argument("linear: bias dim mismatch");
  Tensor out({R, dout});
  gemm_nt(x->val.ptr(), W->val.ptr(), out.ptr(), R, din, dout, false);
  if (b)
    for (int r = 0; r < R; ++r)
      for (int j = 0; j < dout; ++j) out.at2(r, j) += b->val.data[static_cast<size_t>(j)];
  Var vx = x, vw = W, vb = b;
  std::vector<Var> parents = b ? std::vector<Var>{x, W, b} : std::vector<Var>{x, W};
  return make_node(std::move(out), parents, [vx, vw, vb, R, din, dout](Node& self) {
    if (vx->needs_grad)
      gemm_nn(self.grad.ptr(), vw->val.ptr(), vx->g().ptr(), R, dout, din, true);
    if (vw->needs_grad)
      gemm_tn(self.grad.ptr(), vx->val.ptr(), vw->g().ptr(), dout, R, din, true);
    if (vb && vb->needs_grad) {
      auto& g = vb->g();
      for (int r = 0; r < R; ++r)
        for (int j = 0; j < dout; ++j) g.data[static_cast<size_t>(j)] += self.grad.at2(r, j);
    }
  });
}

Var bmm_nt(const Var& a, const Var& b) {
  if (a->val.ndim() != 3 || b->val.ndim() != 3) throw std::invalid_argument("bmm_nt: rank");
  const int N = a->val.shape[0], S1 = a->val.shape[1], d = a->val.shape[2];
  const int S2 = b->val.shape[1];
  if (b->val.shape[0] != N || b->val.shape[2] != d) throw std::invalid_argument("bmm_nt: dims");
  Tensor out({N, S1, S2});
  for (int n = 0; n < N; ++n)
    gemm_nt(a->val.ptr() + static_cast<size_t>(n) * S1 * d, b->val.ptr() + static_cast<size_t>(n) * S2 * d,
            out.ptr() + static_cast<size_t>(n) * S1 * S2, S1, d, S2, false);
  Var va = a, vb = b;
  return make_node(std::move(out), {a, b}, [va, vb, N, S1, S2, d](Node& self) {
    for (int n = 0; n < N; ++n) {
      const double* gy = self.grad.ptr() + static_cast<size_t>(n) * S1 * S2;
      if (va->needs_grad)
        gemm_nn(gy, vb->val.ptr() + static_cast<size_t>(n) * S2 * d,
                va->g().ptr() + static_cast<size_t>(n) * S1 * d, S1, S2, d, true);
      if (vb->needs_grad)
        gemm_tn(gy, va->val.ptr() + static_cast<size_t>(n) * S1 * d,
                vb->g().ptr() + static_cast<size_t>(n) * S2 * d, S2, S1, d, true);
    }
  });
}

Var bmm_nn(const Var& a, const Var& b) {
  if (a->val.ndim() != 3 || b->val.ndim() != 3) throw std::invalid_argument("bmm_nn: rank");
  const int N = a->val.shape[0], S1 = a->val.shape[1], S2 = a->val.shape[2];
  const int d = b->val.shape[2];
  if (b->val.shape[0] != N || b->val.shape[1] != S2) throw std::invalid_argument("bmm_nn: dims");
  Tensor out({N, S1, d});
  for (int n = 0; n < N; ++n)
    gemm_nn(a->val.ptr() + static_cast<size_t>(n) * S1 * S2, b->val.ptr() + static_cast<size_t>(n) * S2 * d,
            out.ptr() + static_cast<size_t>(n) * S1 * d, S1, S2, d, false);
  Var va = a, vb = b;
  return make_node(std::move(out), {a, b}, [va, vb, N, S1, S2, d](Node& self) {
    for (int n = 0; n < N; ++n) {
      const double* gy = self.grad.ptr() + static_cast<size_t>(n) * S1 * d;
      if (va->needs_grad)
        gemm_nt(gy, vb->val.ptr() + static_cast<size_t>(n) * S2 * d,
                va->g().ptr() + static_cast<size_t>(n) * S1 * S2, S1, d, S2, true);
      if (vb->needs_grad)
        gemm_tn(va->val.ptr() + static_cast<size_t>(n) * S1 * S2, gy,
                vb->g().ptr() + static_cast<size_t>(n) * S2 * d, S2, S1, d, true);
    }
  });
}

Var freq_matmul(const Var& x, const Var& M) {
  if (x->val.ndim() != 4 || M->val.ndim() != 2) throw std::invalid_argument("freq_matmul: rank");
  const int B = x->val.shape[0], C = x->val.shape[1], F = x->val.shape[2], T = x->val.shape[3];
  if (M->val.shape[0] != F || M->val.shape[1] != F)
    throw std::invalid_argument("freq_matmul: M must be [F,F] matching the frequency axis");
  Tensor out({B, C, F, T});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const size_t base = (static_cast<size_t>(b) * C + c) * F * T;
      gemm_nn(M->val.ptr(), x->val.ptr() + base, out.ptr() + base, F, F, T, false);
    }
  Var vx = x, vm = M;
  return make_node(std::move(out), {x, M}, [vx, vm, B, C, F, T](Node& self) {
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c) {
        const size_t base = (static_cast<size_t>(b) * C + c) * F * T;
        if (vx->needs_grad)
          gemm_tn(vm->val.ptr(), self.grad.ptr() + base, vx->g().ptr() + base, F, F, T, true);
        if (vm->needs_grad)
          gemm_nt(self.grad.ptr() + base, vx->val.ptr() + base, vm->g().ptr(), F, T, F, true);
      }
  });
}

// ---------------------------------------------------------------------------
// normalization / softmax

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps) {
  if (x->val.ndim() != 2) throw std::invalid_argument("layer_norm_rows: rank");
  const int R = x->val.shape[0], d = x->val.shape[1];
  if (gamma->val.numel() != d || beta->val.numel() != d)
    throw std::invalid_argument("layer_norm_rows: affine dims");
  Tensor out({R, d});
  auto cache = std::make_shared<Tensor>(Tensor({R, d + 1}));  // xhat rows + istd col
  for (int r = 0; r < R; ++r) {
    const double* xr = x->val.ptr() + static_cast<size_t>(r) * d;
    double mu = 0;
    for (int j = 0; j < d; ++j) mu += xr[j];
    mu /= d;
    double var = 0;
    for (int j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= d;
    const double istd = 1.0 / std::sqrt(var + eps);
    cache->data[static_cast<size_t>(r) * (d + 1) + d] = istd;
    for (int j = 0; j < d; ++j) {
      const double xh = (xr[j] - mu) * istd;
      cache->data[static_cast<size_t>(r) * (d + 1) + j] = xh;
      out.at2(r, j) = gamma->val.data[static_cast<size_t>(j)] * xh + beta->val.data[static_cast<size_t>(j)];
    }
  }
  Var vx = x, vg = gamma, vb = beta;
  return make_node(std::move(out), {x, gamma, beta}, [vx, vg, vb, R, d, cache](Node& self) {
    for (int r = 0; r < R; ++r) {
      const double* xh = cache->data.data() + static_cast<size_t>(r) * (d + 1);
      const double istd = xh[d];
      const double* gy = self.grad.ptr() + static_cast<size_t>(r) * d;
      if (vg->needs_grad || vb->needs_grad) {
        for (int j = 0; j < d; ++j) {
          if (vg->needs_grad) vg->g().data[static_cast<size_t>(j)] += gy[j] * xh[j];
          if (vb->needs_grad) vb->g().data[static_cast<size_t>(j)] += gy[j];
        }
      }
      if (vx->needs_grad) {
        double m1 = 0, m2 = 0;
        for (int j = 0; j < d; ++j) {
          const double dxh = gy[j] * vg->val.data[static_cast<size_t>(j)];
          m1 += dxh;
          m2 += dxh * xh[j];
        }
        m1 /= d;
        m2 /= d;
        double* gx = vx->g().ptr() + static_cast<size_t>(r) * d;
        for (int j = 0; j < d; ++j) {
          const double dxh = gy[j] * vg->val.data[static_cast<size_t>(j)];
          gx[j] += istd * (dxh - m1 - xh[j] * m2);
        }
      }
    }
  });
}

Var layer_norm_cf(const Var& x, const Var& gamma, const Var& beta, double eps) {
  if (x->val.ndim() != 4) throw std::invalid_argument("layer_norm_cf: rank");
  const int B = x->val.shape[0], C = x->val.shape[1], F = x->val.shape[2], T = x->val.shape[3];
  if (gamma->val.ndim() != 2 || gamma->val.shape[0] != C || gamma->val.shape[1] != F ||
      !gamma->val.same_shape(beta->val))
    throw std::invalid_argument("layer_norm_cf: affine dims");
  const int G = C * F;
  Tensor out({B, C, F, T});
  auto cache = std::make_shared<Tensor>(Tensor({B, T, G + 1}));
  for (int b = 0; b < B; ++b)
    for (int t = 0; t < T; ++t) {
      double mu = 0;
      for (int c = 0; c < C; ++c)
        for (int f = 0; f < F; ++f) mu += x->val.at4(b, c, f, t);
      mu /= G;
      double var = 0;
      for (int c = 0; c < C; ++c)
        for (int f = 0; f < F; ++f) {
          const double dv = x->val.at4(b, c, f, t) - mu;
          var += dv * dv;
        }
      var /= G;
      const double istd = 1.0 / std::sqrt(var + eps);
      double* ch = cache->data.data() + (static_cast<size_t>(b) * T + t) * (G + 1);
      ch[G] = istd;
      for (int c = 0; c < C; ++c)
        for (int f = 0; f < F; ++f) {
          const double xh = (x->val.at4(b, c, f, t) - mu) * istd;
          ch[c * F + f] = xh;
          out.at4(b, c, f, t) = gamma->val.at2(c, f) * xh + beta->val.at2(c, f);
        }
    }
  Var vx = x, vg = gamma, vb = beta;
  return make_node(std::move(out), {x, gamma, beta}, [vx, vg, vb, B, C, F, T, G, cache](Node& self) {
    for (int b = 0; b < B; ++b)
      for (int t = 0; t < T; ++t) {
        const double* ch = cache->data.data() + (static_cast<size_t>(b) * T + t) * (G + 1);
        const double istd = ch[G];
        if (vg->needs_grad || vb->needs_grad) {
          for (int c = 0; c < C; ++c)
            for (int f = 0; f < F; ++f) {
              const double gy = self.grad.at4(b, c, f, t);
              if (vg->needs_grad) vg->g().at2(c, f) += gy * ch[c * F + f];
              if (vb->needs_grad) vb->g().at2(c, f) += gy;
            }
        }
        if (vx->needs_grad) {
          double m1 = 0, m2 = 0;
          for (int c = 0; c < C; ++c)
            for (int f = 0; f < F; ++f) {
              const double dxh = self.grad.at4(b, c, f, t) * vg->val.at2(c, f);
              m1 += dxh;
              m2 += dxh * ch[c * F + f];
            }
          m1 /= G;
          m2 /= G;
          for (int c = 0; c < C; ++c)
            for (int f = 0; f < F; ++f) {
              const double dxh = self.grad.at4(b, c, f, t) * vg->val.at2(c, f);
              vx->g().at4(b, c, f, t) += istd * (dxh - m1 - ch[c * F + f] * m2);
            }
        }
      }
  });
}

Var softmax_rows_masked(const Var& x, bool causal) {
  if (x->val.ndim() != 3) throw std::invalid_argument("softmax_rows_masked: rank");
  const int N = x->val.shape[0], S = x->val.shape[1], S2 = x->val.shape[2];
  if (S != S2) throw std::invalid_argument("softmax_rows_masked: square rows expected");
  Tensor out({N, S, S});
  for (int n = 0; n < N; ++n)
    for (int r = 0; r < S; ++r) {
      const int lim = causal ? r + 1 : S;
      const double* xr = x->val.ptr() + (static_cast<size_t>(n) * S + r) * S;
      double* yr = out.ptr() + (static_cast<size_t>(n) * S + r) * S;
      double mx = xr[0];
      for (int j = 1; j < lim; ++j) mx = std::max(mx, xr[j]);
      double den = 0;
      for (int j = 0; j < lim; ++j) {
        yr[j] = std::exp(xr[j] - mx);
        den += yr[j];
      }
      for (int j = 0; j < lim; ++j) yr[j] /= den;
      for (int j = lim; j < S; ++j) yr[j] = 0.0;
    }
  Var vx = x;
  return make_node(std::move(out), {x}, [vx, N, S, causal](Node& self) {
    if (!vx->needs_grad) return;
    for (int n = 0; n < N; ++n)
      for (int r = 0; r < S; ++r) {
        const int lim = causal ? r + 1 : S;
        const double* y = self.val.ptr() + (static_cast<size_t>(n) * S + r) * S;
        const double* gy = self.grad.ptr() + (static_cast<size_t>(n) * S + r) * S;
        double* gx = vx->g().ptr() + (static_cast<size_t>(n) * S + r) * S;
        double dot = 0;
        for (int j = 0; j < lim; ++j) dot += gy[j] * y[j];
        for (int j = 0; j < lim; ++j) gx[j] += y[j] * (gy[j] - dot);
      }
  });
}

// ---------------------------------------------------------------------------
// convolution

int conv_out_dim(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

int conv_transposed_out_dim(int in, int k, int stride, int pad) {
  return (in - 1) * stride + k - 2 * pad;
}

namespace {

// y[fo,to] (+)= w * x[fo*sf-pf+kf, to*st-pt+kt] over valid range; the same
// kernel walks forward conv, its input gradient, and the weight gradient.
struct ConvPlanes {
  int F, T, Fo, To;
  ConvGeom g;
  int kf, kt;
};

inline void conv_accum_out(const double* x, double* y, double w, const ConvPlanes& p, int kf, int kt) {
  for (int fo = 0; fo < p.Fo; ++fo) {
    const int fi = fo * p.g.sf - p.g.pf + kf;
    if (fi < 0 || fi >= p.F) continue;
    const double* xrow = x + static_cast<size_t>(fi) * p.T;
    double* yrow = y + static_cast<size_t>(fo) * p.To;
    if (p.g.st == 1) {
      const int off = kt - p.g.pt;
      const int t0 = std::max(0, -off);
      const int t1 = std::min(p.To, p.T - off);
      for (int to = t0; to < t1; ++to) yrow[to] += w * xrow[to + off];
    } else {
      for (int to = 0; to < p.To; ++to) {
        const int ti = to * p.g.st - p.g.pt + kt;
        if (ti >= 0 && ti < p.T) yrow[to] += w * xrow[ti];
      }
    }
  }
}

inline void conv_accum_in(double* gx, const double* gy, double w, const ConvPlanes& p, int kf, int kt) {
  for (int fo = 0; fo < p.Fo; ++fo) {
    const int fi = fo * p.g.sf - p.g.pf + kf;
    if (fi < 0 || fi >= p.F) continue;
    double* gxrow = gx + static_cast<size_t>(fi) * p.T;
    const double* gyrow = gy + static_cast<size_t>(fo) * p.To;
    if (p.g.st == 1) {
      const int off = kt - p.g.pt;
      const int t0 = std::max(0, -off);
      const int t1 = std::min(p.To, p.T - off);
      for (int to = t0; to < t1; ++to) gxrow[to + off] += w * gyrow[to];
    } else {
      for (int to = 0; to < p.To; ++to) {
        const int ti = to * p.g.st - p.g.pt + kt;
        if (ti >= 0 && ti < p.T) gxrow[ti] += w * gyrow[to];
      }
    }
  }
}

inline double conv_dot(const double* x, const double* gy, const ConvPlanes& p, int kf, int kt) {
  double acc = 0;
  for (int fo = 0; fo < p.Fo; ++fo) {
    const int fi = fo * p.g.sf - p.g.pf + kf;
    if (fi < 0 || fi >= p.F) continue;
    const double* xrow = x + static_cast<size_t>(fi) * p.T;
    const double* gyrow = gy + static_cast<size_t>(fo) * p.To;
    if (p.g.st == 1) {
      const int off = kt - p.g.pt;
      const int t0 = std::max(0, -off);
      const int t1 = std::min(p.To, p.T - off);
      for (int to = t0; to < t1; ++to) acc += xrow[to + off] * gyrow[to];
    } else {
      for (int to = 0; to < p.To; ++to) {
        const int ti = to * p.g.st - p.g.pt + kt;
        if (ti >= 0 && ti < p.T) acc += xrow[ti] * gyrow[to];
      }
    }
  }
  return acc;
}

}  // namespace

Var conv2d(const Var& x, const Var& W, const Var& b, ConvGeom g) {
  if (x->val.ndim() != 4 || W->val.ndim() != 4) throw std::invalid_argument("conv2d: rank");
  const int B = x->val.shape[0], Ci = x->val.shape[1], F = x->val.shape[2], T = x->val.shape[3];
  const int Co = W->val.shape[0], kf = W->val.shape[2], kt = W->val.shape[3];
  if (W->val.shape[1] != Ci) throw std::invalid_argument("conv2d: channel mismatch");
  if (b && b->val.numel() != Co) throw std::invalid_argument("conv2d: bias dim");
  const int Fo = conv_out_dim(F, kf, g.sf, g.pf);
  const int To = conv_out_dim(T, kt, g.st, g.pt);
  if (Fo <= 0 || To <= 0) throw std::invalid_argument("conv2d: empty output");
  ConvPlanes P{F, T, Fo, To, g, kf, kt};
  Tensor out({B, Co, Fo, To});
  for (int bb = 0; bb < B; ++bb)
    for (int co = 0; co < Co; ++co) {
      double* yp = out.ptr() + (static_cast<size_t>(bb) * Co + co) * Fo * To;
      if (b) {
        const double bv = b->val.data[static_cast<size_t>(co)];
        for (int64_t i = 0; i < static_cast<int64_t>(Fo) * To; ++i) yp[i] = bv;
      }
      for (int ci = 0; ci < Ci; ++ci) {
        const double* xp = x->val.ptr() + (static_cast<size_t>(bb) * Ci + ci) * F * T;
        for (int a = 0; a < kf; ++a)
          for (int c = 0; c < kt; ++c)
            conv_accum_out(xp, yp, W->val.at4(co, ci, a, c), P, a, c);
      }
    }
  Var vx = x, vw = W, vb = b;
  std::vector<Var> parents = b ? std::vector<Var>{x, W, b} : std::vector<Var>{x, W};
  return make_node(std::move(out), parents, [vx, vw, vb, B, Ci, Co, P, kf, kt](Node& self) {
    const int Fo = P.Fo, To = P.To, F = P.F, T = P.T;
    for (int bb = 0; bb < B; ++bb)
      for (int co = 0; co < Co; ++co) {
        const double* gyp = self.grad.ptr() + (static_cast<size_t>(bb) * Co + co) * Fo * To;
        if (vb && vb->needs_grad) {
          double acc = 0;
          for (int64_t i = 0; i < static_cast<int64_t>(Fo) * To; ++i) acc += gyp[i];
          vb->g().data[static_cast<size_t>(co)] += acc;
        }
        for (int ci = 0; ci < Ci; ++ci) {
          const size_t xoff = (static_cast<size_t>(bb) * Ci + ci) * F * T;
          for (int a = 0; a < kf; ++a)
            for (int c = 0; c < kt; ++c) {
              if (vx->needs_grad)
                conv_accum_in(vx->g().ptr() + xoff, gyp, vw->val.at4(co, ci, a, c), P, a, c);
              if (vw->needs_grad)
                vw->g().at4(co, ci, a, c) += conv_dot(vx->val.ptr() + xoff, gyp, P, a, c);
            }
        }
      }
  });
}

Var conv2d_transposed(const Var& x, const Var& W, const Var& b, ConvGeom g) {
  // W layout [c_src, c_dst, kf, kt]: op maps dim-0 channels to dim-1 channels,
  // which makes it the exact adjoint of conv2d under a shared parameter set.
  if (x->val.ndim() != 4 || W->val.ndim() != 4) throw std::invalid_argument("tconv2d: rank");
  const int B = x->val.shape[0], Cs = x->val.shape[1], F = x->val.shape[2], T = x->val.shape[3];
  const int kf = W->val.shape[2], kt = W->val.shape[3];
  const int Cd = W->val.shape[1];
  if (W->val.shape[0] != Cs) throw std::invalid_argument("tconv2d: channel mismatch");
  if (b && b->val.numel() != Cd) throw std::invalid_argument("tconv2d: bias dim");
  const int Fo = conv_transposed_out_dim(F, kf, g.sf, g.pf);
  const int To = conv_transposed_out_dim(T, kt, g.st, g.pt);
  if (Fo <= 0 || To <= 0) throw std::invalid_argument("tconv2d: empty output");
  // scatter roles: output plays the "input" role of the shared kernel walker
  ConvPlanes P{Fo, To, F, T, g, kf, kt};
  Tensor out({B, Cd, Fo, To});
  for (int bb = 0; bb < B; ++bb)
    for (int cd = 0; cd < Cd; ++cd) {
      double* yp = out.ptr() + (static_cast<size_t>(bb) * Cd + cd) * Fo * To;
      if (b) {
        const double bv = b->val.data[static_cast<size_t>(cd)];
        for (int64_t i = 0; i < static_cast<int64_t>(Fo) * To; ++i) yp[i] = bv;
      }
      for (int cs = 0; cs < Cs; ++cs) {
        const double* xp = x->val.ptr() + (static_cast<size_t>(bb) * Cs + cs) * F * T;
        for (int a = 0; a < kf; ++a)
          for (int c = 0; c < kt; ++c)
            conv_accum_in(yp, xp, W->val.at4(cs, cd, a, c), P, a, c);
      }
    }
  Var vx = x, vw = W, vb = b;
  std::vector<Var> parents = b ? std::vector<Var>{x, W, b} : std::vector<Var>{x, W};
  return make_node(std::move(out), parents, [vx, vw, vb, B, Cs, Cd, P, kf, kt](Node& self) {
    const int Fo = P.F, To = P.T;  // transposed-output dims
    for (int bb = 0; bb < B; ++bb)
      for (int cd = 0; cd < Cd; ++cd) {
        const double* gyp = self.grad.ptr() + (static_cast<size_t>(bb) * Cd + cd) * Fo * To;
        if (vb && vb->needs_grad) {
          double acc = 0;
          for (int64_t i = 0; i < static_cast<int64_t>(Fo) * To; ++i) acc += gyp[i];
          vb->g().data[static_cast<size_t>(cd)] += acc;
        }
        for (int cs = 0; cs < Cs; ++cs) {
          const size_t xoff = (static_cast<size_t>(bb) * Cs + cs) * static_cast<size_t>(P.Fo) * P.To;
          for (int a = 0; a < kf; ++a)
            for (int c = 0; c < kt; ++c) {
              if (vx->needs_grad)
                conv_accum_out(gyp, vx->g().ptr() + xoff, vw->val.at4(cs, cd, a, c), P, a, c);
              if (vw->needs_grad)
                vw->g().at4(cs, cd, a, c) += conv_dot(gyp, vx->val.ptr() + xoff, P, a, c);
            }
        }
      }
  });
}

Var depthwise_conv2d(const Var& x, const Var& W, const Var& b, ConvGeom g, bool transposed) {
  if (x->val.ndim() != 4 || W->val.ndim() != 4) throw std::invalid_argument("dwconv2d: rank");
  const int B = x->val.shape[0], C = x->val.shape[1], F = x->val.shape[2], T = x->val.shape[3];
  const int kf = W->val.shape[2], kt = W->val.shape[3];
  if (W->val.shape[0] != C || W->val.shape[1] != 1)
    throw std::invalid_argument("dwconv2d: kernel must be [C,1,kf,kt]");
  if (b && b->val.numel() != C) throw std::invalid_argument("dwconv2d: bias dim");
  const int Fo = transposed ? conv_transposed_out_dim(F, kf, g.sf, g.pf) : conv_out_dim(F, kf, g.sf, g.pf);
  const int To = transposed ? conv_transposed_out_dim(T, kt, g.st, g.pt) : conv_out_dim(T, kt, g.st, g.pt);
  if (Fo <= 0 || To <= 0) throw std::invalid_argument("dwconv2d: empty output");
  ConvPlanes P = transposed ? ConvPlanes{Fo, To, F, T, g, kf, kt} : ConvPlanes{F, T, Fo, To, g, kf, kt};
  Tensor out({B, C, Fo, To});
  for (int bb = 0; bb < B; ++bb)
    for (int c = 0; c < C; ++c) {
      double* yp = out.ptr() + (static_cast<size_t>(bb) * C + c) * Fo * To;
      if (b) {
        const double bv = b->val.data[static_cast<size_t>(c)];
        for (int64_t i = 0; i < static_cast<int64_t>(Fo) * To; ++i) yp[i] = bv;
      }
      const double* xp = x->val.ptr() + (static_cast<size_t>(bb) * C + c) * F * T;
      for (int a = 0; a < kf; ++a)
        for (int cc = 0; cc < kt; ++cc) {
          const double w = W->val.at4(c, 0, a, cc);
          if (transposed)
            conv_accum_in(yp, xp, w, P, a, cc);
          else
            conv_accum_out(xp, yp, w, P, a, cc);
        }
    }
  Var vx = x, vw = W, vb = b;
  std::vector<Var> parents = b ? std::vector<Var>{x, W, b} : std::vector<Var>{x, W};
  return make_node(std::move(out), parents, [vx, vw, vb, B, C, P, kf, kt, transposed, Fo, To](Node& self) {
    for (int bb = 0; bb < B; ++bb)
      for (int c = 0; c < C; ++c) {
        const double* gyp = self.grad.ptr() + (static_cast<size_t>(bb) * C + c) * Fo * To;
        if (vb && vb->needs_grad) {
          double acc = 0;
          for (int64_t i = 0; i < static_cast<int64_t>(Fo) * To; ++i) acc += gyp[i];
          vb->g().data[static_cast<size_t>(c)] += acc;
        }
        const size_t xoff = (static_cast<size_t>(bb) * C + c) * static_cast<size_t>(vx->val.shape[2]) * vx->val.shape[3];
        for (int a = 0; a < kf; ++a)
          for (int cc = 0; cc < kt; ++cc) {
            const double w = vw->val.at4(c, 0, a, cc);
            if (vx->needs_grad) {
              if (transposed)
                conv_accum_out(gyp, vx->g().ptr() + xoff, w, P, a, cc);
              else
                conv_accum_in(vx->g().ptr() + xoff, gyp, w, P, a, cc);
            }
            if (vw->needs_grad) {
              const double d = transposed ? conv_dot(gyp, vx->val.ptr() + xoff, P, a, cc)
                                          : conv_dot(vx->val.ptr() + xoff, gyp, P, a, cc);
              vw->g().at4(c, 0, a, cc) += d;
            }
          }
      }
  });
}

// ---------------------------------------------------------------------------
// LSTM (batched over N sequences, gate order i,f,g,o)

namespace {

struct LstmCache {
  int N, S, din, h;
  bool reverse;
  Tensor gates;  // [S, N, 4h] post-activation, indexed by processing position
  Tensor cells;  // [S, N, h]
};

}  // namespace

Var lstm(const Var& x, const Var& W, const Var& R, const Var& b, bool reverse) {
  if (x->val.ndim() != 3) throw std::invalid_argument("lstm: x rank");
  const int N = x->val.shape[0], S = x->val.shape[1], din = x->val.shape[2];
  if (W->val.ndim() != 2 || W->val.shape[1] != din || W->val.shape[0] % 4 != 0)
    throw std::invalid_argument("lstm: W must be [4h,din]");
  const int h = W->val.shape[0] / 4;
  if (R->val.ndim() != 2 || R->val.shape[0] != 4 * h || R->val.shape[1] != h)
    throw std::invalid_argument("lstm: R must be [4h,h]");
  if (b->val.numel() != 4 * h) throw std::invalid_argument("lstm: b must be [4h]");

  auto cache = std::make_shared<LstmCache>();
  cache->N = N;
  cache->S = S;
  cache->din = din;
  cache->h = h;
  cache->reverse = reverse;
  cache->gates = Tensor({S, N, 4 * h});
  cache->cells = Tensor({S, N, h});

  Tensor out({N, S, h});
  std::vector<double> xt(static_cast<size_t>(N) * din);
  std::vector<double> z(static_cast<size_t>(N) * 4 * h);
  std::vector<double> hprev(static_cast<size_t>(N) * h, 0.0);
  std::vector<double> cprev(static_cast<size_t>(N) * h, 0.0);

  for (int s = 0; s < S; ++s) {
    const int t = reverse ? S - 1 - s : s;
    for (int n = 0; n < N; ++n)
      std::copy_n(x->val.ptr() + (static_cast<size_t>(n) * S + t) * din, din,
                  xt.data() + static_cast<size_t>(n) * din);
    gemm_nt(xt.data(), W->val.ptr(), z.data(), N, din, 4 * h, false);
    gemm_nt(hprev.data(), R->val.ptr(), z.data(), N, h, 4 * h, true);
    double* gate = cache->gates.ptr() + static_cast<size_t>(s) * N * 4 * h;
    double* cell = cache->cells.ptr() + static_cast<size_t>(s) * N * h;
    for (int n = 0; n < N; ++n) {
      const double* zb = z.data() + static_cast<size_t>(n) * 4 * h;
      double* gb = gate + static_cast<size_t>(n) * 4 * h;
      double* cb = cell + static_cast<size_t>(n) * h;
      double* hb = hprev.data() + static_cast<size_t>(n) * h;
      double* cp = cprev.data() + static_cast<size_t>(n) * h;
      for (int j = 0; j < h; ++j) {
        const double zi = zb[j] + b->val.data[static_cast<size_t>(j)];
        const double zf = zb[h + j] + b->val.data[static_cast<size_t>(h + j)];
        const double zg = zb[2 * h + j] + b->val.data[static_cast<size_t>(2 * h + j)];
        const double zo = zb[3 * h + j] + b->val.data[static_cast<size_t>(3 * h + j)];
        const double gi = 1.0 / (1.0 + std::exp(-zi));
        const double gf = 1.0 / (1.0 + std::exp(-zf));
        const double gg = std::tanh(zg);
        const double go = 1.0 / (1.0 + std::exp(-zo));
        const double c = gf * cp[j] + gi * gg;
        gb[j] = gi;
        gb[h + j] = gf;
        gb[2 * h + j] = gg;
        gb[3 * h + j] = go;
        cb[j] = c;
        hb[j] = go * std::tanh(c);
      }
      std::copy_n(cb, h, cp);
      std::copy_n(hb, h, out.ptr() + (static_cast<size_t>(n) * S + t) * h);
    }
  }

  Var vx = x, vw = W, vr = R, vb = b;
  return make_node(std::move(out), {x, W, R, b}, [vx, vw, vr, vb, cache](Node& self) {
    const int N = cache->N, S = cache->S, din = cache->din, h = cache->h;
    const bool reverse = cache->reverse;
    std::vector<double> dh(static_cast<size_t>(N) * h, 0.0);
    std::vector<double> dc(static_cast<size_t>(N) * h, 0.0);
    std::vector<double> dz(static_cast<size_t>(N) * 4 * h);
    std::vector<double> xt(static_cast<size_t>(N) * din);
    std::vector<double> hprev(static_cast<size_t>(N) * h);
    std::vector<double> dxt(static_cast<size_t>(N) * din);
    for (int s = S - 1; s >= 0; --s) {
      const int t = reverse ? S - 1 - s : s;
      const double* gate = cache->gates.ptr() + static_cast<size_t>(s) * N * 4 * h;
      const double* cell = cache->cells.ptr() + static_cast<size_t>(s) * N * h;
      const double* cell_prev = s > 0 ? cache->cells.ptr() + static_cast<size_t>(s - 1) * N * h : nullptr;
      // h_{prev} of this step (processing order)
      if (s > 0) {
        const double* gate_prev = cache->gates.ptr() + static_cast<size_t>(s - 1) * N * 4 * h;
        for (int n = 0; n < N; ++n)
          for (int j = 0; j < h; ++j)
            hprev[static_cast<size_t>(n) * h + j] =
                gate_prev[static_cast<size_t>(n) * 4 * h + 3 * h + j] *
                std::tanh(cell_prev[static_cast<size_t>(n) * h + j]);
      } else {
        std::fill(hprev.begin(), hprev.end(), 0.0);
      }
      for (int n = 0; n < N; ++n) {
        const double* gb = gate + static_cast<size_t>(n) * 4 * h;
        const double* cb = cell + static_cast<size_t>(n) * h;
        double* dhb = dh.data() + static_cast<size_t>(n) * h;
        double* dcb = dc.data() + static_cast<size_t>(n) * h;
        double* dzb = dz.data() + static_cast<size_t>(n) * 4 * h;
        const double* gy = self.grad.ptr() + (static_cast<size_t>(n) * S + t) * h;
        for (int j = 0; j < h; ++j) {
          const double gi = gb[j], gf = gb[h + j], gg = gb[2 * h + j], go = gb[3 * h + j];
          const double tc = std::tanh(cb[j]);
          const double dhj = gy[j] + dhb[j];
          const double dcj = dcb[j] + dhj * go * (1.0 - tc * tc);
          const double cprevj = cell_prev ? cell_prev[static_cast<size_t>(n) * h + j] : 0.0;
          dzb[j] = dcj * gg * gi * (1.0 - gi);
          dzb[h + j] = dcj * cprevj * gf * (1.0 - gf);
          dzb[2 * h + j] = dcj * gi * (1.0 - gg * gg);
          dzb[3 * h + j] = dhj * tc * go * (1.0 - go);
          dcb[j] = dcj * gf;
        }
      }
      for (int n = 0; n < N; ++n)
        std::copy_n(vx->val.ptr() + (static_cast<size_t>(n) * S + t) * din, din,
                    xt.data() + static_cast<size_t>(n) * din);
      if (vw->needs_grad) gemm_tn(dz.data(), xt.data(), vw->g().ptr(), 4 * h, N, din, true);
      if (vr->needs_grad) gemm_tn(dz.data(), hprev.data(), vr->g().ptr(), 4 * h, N, h, true);
      if (vb->needs_grad) {
        auto& g = vb->g();
        for (int n = 0; n < N; ++n)
          for (int j = 0; j < 4 * h; ++j) g.data[static_cast<size_t>(j)] += dz[static_cast<size_t>(n) * 4 * h + j];
      }
      if (vx->needs_grad) {
        gemm_nn(dz.data(), vw->val.ptr(), dxt.data(), N, 4 * h, din, false);
        for (int n = 0; n < N; ++n) {
          double* gx = vx->g().ptr() + (static_cast<size_t>(n) * S + t) * din;
          const double* src = dxt.data() + static_cast<size_t>(n) * din;
          for (int j = 0; j < din; ++j) gx[j] += src[j];
        }
      }
      gemm_nn(dz.data(), vr->val.ptr(), dh.data(), N, 4 * h, h, false);
    }
  });
}

}  // namespace datcft

#pragma once

#include <string>
#include <vector>

#include "datcft/autograd.hpp"
#include "datcft/rng.hpp"
#include "datcft/tensor.hpp"

namespace datcft {

// Complex activations live as separate real/imag planes [batch, ch, freq, time].
struct ComplexTensor {
  Tensor real;
  Tensor imag;
};

// graph-node pair for training/inference through the tape
struct CVar {
  Var re;
  Var im;
};

inline CVar to_cvar(const ComplexTensor& t, bool requires_grad = false) {
  return requires_grad ? CVar{leaf(t.real), leaf(t.imag)} : CVar{constant(t.real), constant(t.imag)};
}

struct NamedParam {
  std::string name;
  Var v;
};
using ParamList = std::vector<NamedParam>;

// Complex convolution parameters.  Forward kernels are [out, in, kf, kt];
// transposed kernels are [in, out, kf, kt] (the op maps dim 0 to dim 1, which
// makes the transposed op the exact adjoint of the forward one).
struct ComplexConvVars {
  Var W_r, W_i;
  Var b_r, b_i;
  ConvGeom geom;
  bool transposed = false;
  void collect(ParamList& out, const std::string& prefix) const;
};

// Depthwise-separable complex convolution: per-channel k_f x k_t complex
// depthwise stage, then a 1x1 complex pointwise stage; each stage biased.
struct DscConvVars {
  Var dw_r, dw_i;    // [in, 1, kf, kt]
  Var dwb_r, dwb_i;  // [in]
  Var pw_r, pw_i;    // [out, in, 1, 1]
  Var pb_r, pb_i;    // [out]
  ConvGeom geom;
  bool transposed = false;
  void collect(ParamList& out, const std::string& prefix) const;
};

// per-part layer normalization over (channels, freq) at every (batch, frame)
struct ComplexNormVars {
  Var g_r, bt_r;  // [C, F]
  Var g_i, bt_i;
  double eps = 1e-5;
  void collect(ParamList& out, const std::string& prefix) const;
};

ComplexConvVars make_complex_conv(int c_in, int c_out, int kf, int kt, ConvGeom geom,
                                  bool transposed, Rng& rng);
DscConvVars make_dsc_conv(int c_in, int c_out, int kf, int kt, ConvGeom geom, bool transposed,
                          Rng& rng);
ComplexNormVars make_complex_norm(int channels, int freq);

// parameter accounting (weights + biases, real and imag parts)
int64_t param_count_conv(int c_in, int c_out, int kf, int kt);
int64_t param_count_dsc(int c_in, int c_out, int kf, int kt);

// Either kind of complex convolution behind one interface, so whole-network
// variants can swap standard convs for depthwise-separable ones.
struct ConvOrDsc {
  bool use_dsc = false;
  ComplexConvVars conv;
  DscConvVars dsc;
  CVar apply(const CVar& x) const;
  void collect(ParamList& out, const std::string& prefix) const;
  int64_t param_count(int c_in, int c_out, int kf, int kt) const {
    return use_dsc ? param_count_dsc(c_in, c_out, kf, kt) : param_count_conv(c_in, c_out, kf, kt);
  }
};

ConvOrDsc make_conv_or_dsc(bool use_dsc, int c_in, int c_out, int kf, int kt, ConvGeom geom,
                           bool transposed, Rng& rng);

// y_r = conv(x_r, W_r) - conv(x_i, W_i) + b_r
// y_i = conv(x_r, W_i) + conv(x_i, W_r) + b_i
CVar complex_conv2d(const CVar& x, const ComplexConvVars& p);
CVar complex_transposed_conv2d(const CVar& x, const ComplexConvVars& p);
// dispatches on p.transposed
CVar complex_conv_apply(const CVar& x, const ComplexConvVars& p);

CVar complex_dsc_conv2d(const CVar& x, const DscConvVars& p);

// leaky rectifier applied independently to both parts
CVar complex_activation(const CVar& x, double slope = 0.1);

CVar complex_norm(const CVar& x, const ComplexNormVars& p);

// U(-1/sqrt(fan_in), +1/sqrt(fan_in))
void init_uniform_fanin(Tensor& t, int fan_in, Rng& rng);

int64_t param_list_size(const ParamList& params);

}  // namespace datcft

#include "datcft/complex_ops.hpp"

#include <cmath>

#include "datcft/errors.hpp"

namespace datcft {

void init_uniform_fanin(Tensor& t, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.data) v = rng.uniform(-bound, bound);
}

ComplexConvVars make_complex_conv(int c_in, int c_out, int kf, int kt, ConvGeom geom,
                                  bool transposed, Rng& rng) {
  ComplexConvVars p;
  p.geom = geom;
  p.transposed = transposed;
  const std::vector<int> wshape =
      transposed ? std::vector<int>{c_in, c_out, kf, kt} : std::vector<int>{c_out, c_in, kf, kt};
  const int fan_in = c_in * kf * kt;
  Tensor wr(wshape), wi(wshape);
  init_uniform_fanin(wr, fan_in, rng);
  init_uniform_fanin(wi, fan_in, rng);
  p.W_r = leaf(std::move(wr));
  p.W_i = leaf(std::move(wi));
  p.b_r = leaf(Tensor::zeros({c_out}));
  p.b_i = leaf(Tensor::zeros({c_out}));
  return p;
}

DscConvVars make_dsc_conv(int c_in, int c_out, int kf, int kt, ConvGeom geom, bool transposed,
                          Rng& rng) {
  DscConvVars p;
  p.geom = geom;
  p.transposed = transposed;
  Tensor dwr({c_in, 1, kf, kt}), dwi({c_in, 1, kf, kt});
  init_uniform_fanin(dwr, kf * kt, rng);
  init_uniform_fanin(dwi, kf * kt, rng);
  p.dw_r = leaf(std::move(dwr));
  p.dw_i = leaf(std::move(dwi));
  p.dwb_r = leaf(Tensor::zeros({c_in}));
  p.dwb_i = leaf(Tensor::zeros({c_in}));
  Tensor pwr({c_out, c_in, 1, 1}), pwi({c_out, c_in, 1, 1});
  init_uniform_fanin(pwr, c_in, rng);
  init_uniform_fanin(pwi, c_in, rng);
  p.pw_r = leaf(std::move(pwr));
  p.pw_i = leaf(std::move(pwi));
  p.pb_r = leaf(Tensor::zeros({c_out}));
  p.pb_i = leaf(Tensor::zeros({c_out}));
  return p;
}

ComplexNormVars make_complex_norm(int channels, int freq) {
  ComplexNormVars p;
  p.g_r = leaf(Tensor::full({channels, freq}, 1.0));
  p.g_i = leaf(Tensor::full({channels, freq}, 1.0));
  p.bt_r = leaf(Tensor::zeros({channels, freq}));
  p.bt_i = leaf(Tensor::zeros({channels, freq}));
  return p;
}

void ComplexConvVars::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".W_r", W_r});
  out.push_back({prefix + ".W_i", W_i});
  out.push_back({prefix + ".b_r", b_r});
  out.push_back({prefix + ".b_i", b_i});
}

void DscConvVars::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".dw_r", dw_r});
  out.push_back({prefix + ".dw_i", dw_i});
  out.push_back({prefix + ".dwb_r", dwb_r});
  out.push_back({prefix + ".dwb_i", dwb_i});
  out.push_back({prefix + ".pw_r", pw_r});
  out.push_back({prefix + ".pw_i", pw_i});
  out.push_back({prefix + ".pb_r", pb_r});
  out.push_back({prefix + ".pb_i", pb_i});
}

void ComplexNormVars::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".g_r", g_r});
  out.push_back({prefix + ".bt_r", bt_r});
  out.push_back({prefix + ".g_i", g_i});
  out.push_back({prefix + ".bt_i", bt_i});
}

CVar complex_conv2d(const CVar& x, const ComplexConvVars& p) {
  if (p.transposed) throw ConfigError("complex_conv2d: params built for transposed use");
  CVar y;
  y.re = sub(conv2d(x.re, p.W_r, p.b_r, p.geom), conv2d(x.im, p.W_i, nullptr, p.geom));
  y.im = add(conv2d(x.re, p.W_i, p.b_i, p.geom), conv2d(x.im, p.W_r, nullptr, p.geom));
  return y;
}

CVar complex_transposed_conv2d(const CVar& x, const ComplexConvVars& p) {
  if (!p.transposed) throw ConfigError("complex_transposed_conv2d: params built for forward use");
  CVar y;
  y.re = sub(conv2d_transposed(x.re, p.W_r, p.b_r, p.geom),
             conv2d_transposed(x.im, p.W_i, nullptr, p.geom));
  y.im = add(conv2d_transposed(x.re, p.W_i, p.b_i, p.geom),
             conv2d_transposed(x.im, p.W_r, nullptr, p.geom));
  return y;
}

CVar complex_conv_apply(const CVar& x, const ComplexConvVars& p) {
  return p.transposed ? complex_transposed_conv2d(x, p) : complex_conv2d(x, p);
}

CVar complex_dsc_conv2d(const CVar& x, const DscConvVars& p) {
  CVar d;
  d.re = sub(depthwise_conv2d(x.re, p.dw_r, p.dwb_r, p.geom, p.transposed),
             depthwise_conv2d(x.im, p.dw_i, nullptr, p.geom, p.transposed));
  d.im = add(depthwise_conv2d(x.re, p.dw_i, p.dwb_i, p.geom, p.transposed),
             depthwise_conv2d(x.im, p.dw_r, nullptr, p.geom, p.transposed));
  const ConvGeom unit{};  // pointwise stage: 1x1, stride 1, no padding
  CVar y;
  y.re = sub(conv2d(d.re, p.pw_r, p.pb_r, unit), conv2d(d.im, p.pw_i, nullptr, unit));
  y.im = add(conv2d(d.re, p.pw_i, p.pb_i, unit), conv2d(d.im, p.pw_r, nullptr, unit));
  return y;
}

CVar complex_activation(const CVar& x, double slope) {
  return {leaky_relu(x.re, slope), leaky_relu(x.im, slope)};
}

CVar complex_norm(const CVar& x, const ComplexNormVars& p) {
  return {layer_norm_cf(x.re, p.g_r, p.bt_r, p.eps), layer_norm_cf(x.im, p.g_i, p.bt_i, p.eps)};
}

ConvOrDsc make_conv_or_dsc(bool use_dsc, int c_in, int c_out, int kf, int kt, ConvGeom geom,
                           bool transposed, Rng& rng) {
  ConvOrDsc c;
  c.use_dsc = use_dsc;
  if (use_dsc)
    c.dsc = make_dsc_conv(c_in, c_out, kf, kt, geom, transposed, rng);
  else
    c.conv = make_complex_conv(c_in, c_out, kf, kt, geom, transposed, rng);
  return c;
}

CVar ConvOrDsc::apply(const CVar& x) const {
  return use_dsc ? complex_dsc_conv2d(x, dsc) : complex_conv_apply(x, conv);
}

void ConvOrDsc::collect(ParamList& out, const std::string& prefix) const {
  if (use_dsc)
    dsc.collect(out, prefix);
  else
    conv.collect(out, prefix);
}

int64_t param_count_conv(int c_in, int c_out, int kf, int kt) {
  return 2ll * c_in * c_out * kf * kt + 2ll * c_out;
}

int64_t param_count_dsc(int c_in, int c_out, int kf, int kt) {
  return 2ll * c_in * kf * kt + 2ll * c_in * c_out + 2ll * c_out + 2ll * c_in;
}

int64_t param_list_size(const ParamList& params) {
  int64_t n = 0;
  for (const auto& p : params) n += p.v->val.numel();
  return n;
}

}  // namespace datcft

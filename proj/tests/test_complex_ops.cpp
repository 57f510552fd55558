#include "datcft/complex_ops.hpp"

#include <complex>

#include "doctest.h"
#include "oracles.hpp"

using namespace datcft;
using oracle::random_tensor;

namespace {

using cd = std::complex<double>;

// brute-force complex-arithmetic strided convolution, zero padded
void cconv_oracle(const Tensor& xr, const Tensor& xi, const Tensor& Wr, const Tensor& Wi,
                  const Tensor* br, const Tensor* bi, ConvGeom g, Tensor& yr, Tensor& yi) {
  const int B = xr.shape[0], Ci = xr.shape[1], F = xr.shape[2], T = xr.shape[3];
  const int Co = Wr.shape[0], kf = Wr.shape[2], kt = Wr.shape[3];
  const int Fo = (F + 2 * g.pf - kf) / g.sf + 1;
  const int To = (T + 2 * g.pt - kt) / g.st + 1;
  yr = Tensor::zeros({B, Co, Fo, To});
  yi = Tensor::zeros({B, Co, Fo, To});
  for (int b = 0; b < B; ++b)
    for (int co = 0; co < Co; ++co)
      for (int fo = 0; fo < Fo; ++fo)
        for (int to = 0; to < To; ++to) {
          cd acc = cd(br ? br->data[co] : 0.0, bi ? bi->data[co] : 0.0);
          for (int ci = 0; ci < Ci; ++ci)
            for (int a = 0; a < kf; ++a)
              for (int c = 0; c < kt; ++c) {
                const int fi = fo * g.sf - g.pf + a;
                const int ti = to * g.st - g.pt + c;
                if (fi < 0 || fi >= F || ti < 0 || ti >= T) continue;
                acc += cd(xr.at4(b, ci, fi, ti), xi.at4(b, ci, fi, ti)) *
                       cd(Wr.at4(co, ci, a, c), Wi.at4(co, ci, a, c));
              }
          yr.at4(b, co, fo, to) = acc.real();
          yi.at4(b, co, fo, to) = acc.imag();
        }
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.same_shape(b));
  double m = 0;
  for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::fabs(a.data[i] - b.data[i]));
  return m;
}

void zero_out(const Var& v) { std::fill(v->val.data.begin(), v->val.data.end(), 0.0); }

double dot(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

}  // namespace

TEST_CASE("complex conv matches complex-arithmetic brute force") {
  Rng rng(42);
  for (int trial = 0; trial < 3; ++trial) {
    ConvGeom g = trial == 2 ? ConvGeom{2, 1, 1, 0} : ConvGeom{1, 1, 1, 1};
    auto p = make_complex_conv(3, 2, 3, 3, g, false, rng);
    CVar x = to_cvar({random_tensor({2, 3, 4, 5}, rng), random_tensor({2, 3, 4, 5}, rng)});
    CVar y = complex_conv2d(x, p);
    Tensor yr, yi;
    cconv_oracle(x.re->val, x.im->val, p.W_r->val, p.W_i->val, &p.b_r->val, &p.b_i->val, g, yr, yi);
    CHECK(max_abs_diff(y.re->val, yr) <= 1e-10);
    CHECK(max_abs_diff(y.im->val, yi) <= 1e-10);
  }
}

TEST_CASE("identity kernel and multiplication by i") {
  Rng rng(7);
  const int C = 3;
  auto p = make_complex_conv(C, C, 1, 1, ConvGeom{1, 1, 0, 0}, false, rng);
  zero_out(p.W_r);
  zero_out(p.W_i);
  zero_out(p.b_r);
  zero_out(p.b_i);
  for (int c = 0; c < C; ++c) p.W_r->val.at4(c, c, 0, 0) = 1.0;
  CVar x = to_cvar({random_tensor({1, C, 4, 6}, rng), random_tensor({1, C, 4, 6}, rng)});
  CVar y = complex_conv2d(x, p);
  CHECK(max_abs_diff(y.re->val, x.re->val) == 0.0);
  CHECK(max_abs_diff(y.im->val, x.im->val) == 0.0);

  auto q = make_complex_conv(1, 1, 1, 1, ConvGeom{1, 1, 0, 0}, false, rng);
  zero_out(q.W_r);
  zero_out(q.b_r);
  zero_out(q.b_i);
  q.W_i->val.at4(0, 0, 0, 0) = 1.0;
  CVar x1 = to_cvar({random_tensor({1, 1, 3, 5}, rng), random_tensor({1, 1, 3, 5}, rng)});
  CVar yi = complex_conv2d(x1, q);
  Tensor want_re = x1.im->val;
  for (auto& v : want_re.data) v = -v;
  CHECK(max_abs_diff(yi.re->val, want_re) == 0.0);
  CHECK(max_abs_diff(yi.im->val, x1.re->val) == 0.0);
}

TEST_CASE("complex linearity under complex scaling") {
  Rng rng(11);
  auto p = make_complex_conv(2, 3, 3, 2, ConvGeom{1, 1, 1, 0}, false, rng);
  zero_out(p.b_r);
  zero_out(p.b_i);
  Tensor xr = random_tensor({1, 2, 5, 6}, rng), xi = random_tensor({1, 2, 5, 6}, rng);
  const double ar = 0.7, ai = -0.4;  // alpha = ar + i*ai
  Tensor sxr = xr, sxi = xi;
  for (size_t k = 0; k < xr.data.size(); ++k) {
    sxr.data[k] = ar * xr.data[k] - ai * xi.data[k];
    sxi.data[k] = ar * xi.data[k] + ai * xr.data[k];
  }
  CVar y = complex_conv2d(to_cvar({xr, xi}), p);
  CVar ys = complex_conv2d(to_cvar({sxr, sxi}), p);
  Tensor want_r = y.re->val, want_i = y.im->val;
  for (size_t k = 0; k < want_r.data.size(); ++k) {
    want_r.data[k] = ar * y.re->val.data[k] - ai * y.im->val.data[k];
    want_i.data[k] = ar * y.im->val.data[k] + ai * y.re->val.data[k];
  }
  CHECK(max_abs_diff(ys.re->val, want_r) <= 1e-12);
  CHECK(max_abs_diff(ys.im->val, want_i) <= 1e-12);
}

TEST_CASE("transposed complex conv: identity, shape inversion, adjoint") {
  Rng rng(13);
  // 1x1 stride-1 identity
  auto id = make_complex_conv(2, 2, 1, 1, ConvGeom{1, 1, 0, 0}, true, rng);
  zero_out(id.W_r);
  zero_out(id.W_i);
  zero_out(id.b_r);
  zero_out(id.b_i);
  for (int c = 0; c < 2; ++c) id.W_r->val.at4(c, c, 0, 0) = 1.0;
  CVar x = to_cvar({random_tensor({1, 2, 4, 5}, rng), random_tensor({1, 2, 4, 5}, rng)});
  CVar y = complex_transposed_conv2d(x, id);
  CHECK(max_abs_diff(y.re->val, x.re->val) == 0.0);
  CHECK(max_abs_diff(y.im->val, x.im->val) == 0.0);

  // frequency-halving conv inverts through its transpose: 257 -> 129 -> 257
  CHECK(conv_out_dim(257, 5, 2, 2) == 129);
  CHECK(conv_transposed_out_dim(129, 5, 2, 2) == 257);

  // adjoint: <conv(x), y> == <x, tconv(y)> with shared zero-bias real kernels
  auto fwd = make_complex_conv(2, 3, 3, 2, ConvGeom{2, 1, 1, 0}, false, rng);
  zero_out(fwd.W_i);
  zero_out(fwd.b_r);
  zero_out(fwd.b_i);
  ComplexConvVars bwd = fwd;  // same kernel arrays, read in the transposed role
  bwd.transposed = true;
  bwd.b_r = leaf(Tensor::zeros({2}));  // transposed output has Ci channels
  bwd.b_i = leaf(Tensor::zeros({2}));
  CVar xa = to_cvar({random_tensor({2, 2, 9, 7}, rng), random_tensor({2, 2, 9, 7}, rng)});
  CVar fx = complex_conv2d(xa, fwd);
  CVar ya = to_cvar({random_tensor(fx.re->val.shape, rng), random_tensor(fx.re->val.shape, rng)});
  CVar ty = complex_transposed_conv2d(ya, bwd);
  const double lhs = dot(fx.re->val, ya.re->val) + dot(fx.im->val, ya.im->val);
  const double rhs = dot(xa.re->val, ty.re->val) + dot(xa.im->val, ty.im->val);
  CHECK(std::fabs(lhs - rhs) <= 1e-10);
}

TEST_CASE("depthwise-separable conv: identity, C=1 degeneracy, two-stage oracle") {
  Rng rng(17);
  // depthwise identity (1x1 kernels of 1) + pointwise identity -> input
  auto idp = make_dsc_conv(3, 3, 1, 1, ConvGeom{1, 1, 0, 0}, false, rng);
  zero_out(idp.dw_r);
  zero_out(idp.dw_i);
  zero_out(idp.dwb_r);
  zero_out(idp.dwb_i);
  zero_out(idp.pw_r);
  zero_out(idp.pw_i);
  zero_out(idp.pb_r);
  zero_out(idp.pb_i);
  for (int c = 0; c < 3; ++c) {
    idp.dw_r->val.at4(c, 0, 0, 0) = 1.0;
    idp.pw_r->val.at4(c, c, 0, 0) = 1.0;
  }
  CVar x = to_cvar({random_tensor({1, 3, 4, 5}, rng), random_tensor({1, 3, 4, 5}, rng)});
  CVar y = complex_dsc_conv2d(x, idp);
  CHECK(max_abs_diff(y.re->val, x.re->val) == 0.0);
  CHECK(max_abs_diff(y.im->val, x.im->val) == 0.0);

  // single channel with unit pointwise stage degenerates to the standard conv
  ConvGeom g{1, 1, 1, 1};
  auto dsc1 = make_dsc_conv(1, 1, 3, 3, g, false, rng);
  zero_out(dsc1.dwb_r);
  zero_out(dsc1.dwb_i);
  zero_out(dsc1.pb_r);
  zero_out(dsc1.pb_i);
  zero_out(dsc1.pw_i);
  dsc1.pw_r->val.at4(0, 0, 0, 0) = 1.0;
  auto std1 = make_complex_conv(1, 1, 3, 3, g, false, rng);
  std1.W_r->val = dsc1.dw_r->val;
  std1.W_i->val = dsc1.dw_i->val;
  zero_out(std1.b_r);
  zero_out(std1.b_i);
  CVar x1 = to_cvar({random_tensor({2, 1, 5, 4}, rng), random_tensor({2, 1, 5, 4}, rng)});
  CVar yd = complex_dsc_conv2d(x1, dsc1);
  CVar ys = complex_conv2d(x1, std1);
  CHECK(max_abs_diff(yd.re->val, ys.re->val) <= 1e-12);
  CHECK(max_abs_diff(yd.im->val, ys.im->val) <= 1e-12);

  // random shapes vs an explicit two-stage complex oracle
  auto p = make_dsc_conv(3, 4, 3, 2, ConvGeom{2, 1, 1, 0}, false, rng);
  CVar xo = to_cvar({random_tensor({2, 3, 6, 5}, rng), random_tensor({2, 3, 6, 5}, rng)});
  CVar yo = complex_dsc_conv2d(xo, p);
  // depthwise stage as a per-channel complex conv
  const int Ci = 3;
  Tensor dr, di;
  {
    const int B = 2, F = 6, T = 5, kf = 3, kt = 2;
    const int Fo = (F + 2 * 1 - kf) / 2 + 1, To = (T - kt) / 1 + 1;
    dr = Tensor::zeros({2, Ci, Fo, To});
    di = Tensor::zeros({2, Ci, Fo, To});
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < Ci; ++c)
        for (int fo = 0; fo < Fo; ++fo)
          for (int to = 0; to < To; ++to) {
            cd acc = cd(p.dwb_r->val.data[c], p.dwb_i->val.data[c]);
            for (int a = 0; a < kf; ++a)
              for (int e = 0; e < kt; ++e) {
                const int fi = fo * 2 - 1 + a, ti = to + e;
                if (fi < 0 || fi >= F || ti < 0 || ti >= T) continue;
                acc += cd(xo.re->val.at4(b, c, fi, ti), xo.im->val.at4(b, c, fi, ti)) *
                       cd(p.dw_r->val.at4(c, 0, a, e), p.dw_i->val.at4(c, 0, a, e));
              }
            dr.at4(b, c, fo, to) = acc.real();
            di.at4(b, c, fo, to) = acc.imag();
          }
  }
  Tensor wr, wi;
  cconv_oracle(dr, di, p.pw_r->val, p.pw_i->val, &p.pb_r->val, &p.pb_i->val, ConvGeom{1, 1, 0, 0},
               wr, wi);
  CHECK(max_abs_diff(yo.re->val, wr) <= 1e-10);
  CHECK(max_abs_diff(yo.im->val, wi) <= 1e-10);
}

TEST_CASE("parameter counts match enumerated parameter sets") {
  Rng rng(23);
  auto conv = make_complex_conv(3, 5, 2, 3, ConvGeom{1, 1, 0, 0}, false, rng);
  ParamList pl;
  conv.collect(pl, "c");
  CHECK(param_list_size(pl) == param_count_conv(3, 5, 2, 3));
  auto dsc = make_dsc_conv(3, 5, 2, 3, ConvGeom{1, 1, 0, 0}, false, rng);
  ParamList dl;
  dsc.collect(dl, "d");
  CHECK(param_list_size(dl) == param_count_dsc(3, 5, 2, 3));

  // 16 -> 32 channels with a 3x3 kernel: weight arrays excluding biases
  CHECK(param_count_conv(16, 32, 3, 3) - 2 * 32 == 9216);
  CHECK(param_count_dsc(16, 32, 3, 3) - 2 * 32 - 2 * 16 == 1312);
  const double ratio = 9216.0 / 1312.0;
  CHECK(ratio > 6.9);
  CHECK(ratio < 7.1);

  // degenerate 1-channel 1x1: the kernel arrays coincide in size
  auto c1 = make_complex_conv(1, 1, 1, 1, ConvGeom{1, 1, 0, 0}, false, rng);
  auto d1 = make_dsc_conv(1, 1, 1, 1, ConvGeom{1, 1, 0, 0}, false, rng);
  CHECK(c1.W_r->val.numel() + c1.W_i->val.numel() ==
        d1.dw_r->val.numel() + d1.dw_i->val.numel());
}

TEST_CASE("complex activation acts per part") {
  Rng rng(29);
  Tensor pos = random_tensor({1, 2, 3, 4}, rng, 0.1, 1.0);
  Tensor pos2 = random_tensor({1, 2, 3, 4}, rng, 0.1, 1.0);
  CVar yp = complex_activation(to_cvar({pos, pos2}));
  CHECK(max_abs_diff(yp.re->val, pos) == 0.0);
  CHECK(max_abs_diff(yp.im->val, pos2) == 0.0);

  Tensor neg = random_tensor({1, 2, 3, 4}, rng, -1.0, -0.1);
  Tensor neg2 = random_tensor({1, 2, 3, 4}, rng, -1.0, -0.1);
  CVar yn = complex_activation(to_cvar({neg, neg2}));
  for (size_t k = 0; k < neg.data.size(); ++k) {
    CHECK(yn.re->val.data[k] == doctest::Approx(0.1 * neg.data[k]).epsilon(1e-12));
    CHECK(yn.im->val.data[k] == doctest::Approx(0.1 * neg2.data[k]).epsilon(1e-12));
  }

  Tensor mix = random_tensor({1, 2, 3, 4}, rng);
  CVar ym = complex_activation(to_cvar({mix, mix}));
  for (size_t k = 0; k < mix.data.size(); ++k) {
    const double w = mix.data[k] >= 0 ? mix.data[k] : 0.1 * mix.data[k];
    CHECK(ym.re->val.data[k] == doctest::Approx(w).epsilon(1e-12));
  }
}

TEST_CASE("complex norm: moments and scale equivariance") {
  Rng rng(31);
  const int C = 3, F = 4, B = 2, T = 5;
  auto p = make_complex_norm(C, F);

  // constant input normalizes to zero before the affine stage
  CVar xc = to_cvar({Tensor::full({B, C, F, T}, 2.5), Tensor::full({B, C, F, T}, -1.25)});
  CVar yc = complex_norm(xc, p);
  for (double v : yc.re->val.data) CHECK(std::fabs(v) <= 1e-12);
  for (double v : yc.im->val.data) CHECK(std::fabs(v) <= 1e-12);

  // per-(batch, frame) groups come out zero-mean and unit-variance
  CVar x = to_cvar({random_tensor({B, C, F, T}, rng, -10.0, 10.0),
                    random_tensor({B, C, F, T}, rng, -10.0, 10.0)});
  CVar y = complex_norm(x, p);
  for (int b = 0; b < B; ++b)
    for (int t = 0; t < T; ++t) {
      double mean = 0, var = 0;
      for (int c = 0; c < C; ++c)
        for (int f = 0; f < F; ++f) mean += y.re->val.at4(b, c, f, t);
      mean /= C * F;
      for (int c = 0; c < C; ++c)
        for (int f = 0; f < F; ++f) {
          const double d = y.re->val.at4(b, c, f, t) - mean;
          var += d * d;
        }
      var /= C * F;
      CHECK(std::fabs(mean) <= 1e-10);
      CHECK(std::fabs(var - 1.0) <= 1e-6);
    }

  // doubling the input leaves the normalized core essentially unchanged
  Tensor x2r = x.re->val, x2i = x.im->val;
  for (auto& v : x2r.data) v *= 2.0;
  for (auto& v : x2i.data) v *= 2.0;
  CVar y2 = complex_norm(to_cvar({x2r, x2i}), p);
  CHECK(max_abs_diff(y.re->val, y2.re->val) <= 1e-6);
  CHECK(max_abs_diff(y.im->val, y2.im->val) <= 1e-6);
}

TEST_CASE("gradient audits for every complex primitive") {
  Rng rng(37);

  SUBCASE("standard conv") {
    auto p = make_complex_conv(2, 2, 2, 2, ConvGeom{1, 1, 1, 1}, false, rng);
    Var xr = leaf(random_tensor({1, 2, 4, 3}, rng)), xi = leaf(random_tensor({1, 2, 4, 3}, rng));
    Tensor wre, wim;
    auto build = [&]() {
      CVar y = complex_conv2d({xr, xi}, p);
      if (wre.data.empty()) {
        Rng wr(101);
        wre = random_tensor(y.re->val.shape, wr);
        wim = random_tensor(y.im->val.shape, wr);
      }
      return add(dot_const(y.re, wre), dot_const(y.im, wim));
    };
    CHECK(oracle::fd_check({xr, xi, p.W_r, p.W_i, p.b_r, p.b_i}, build) <= 1e-4);
  }

  SUBCASE("transposed conv") {
    auto p = make_complex_conv(2, 2, 3, 2, ConvGeom{2, 1, 1, 0}, true, rng);
    Var xr = leaf(random_tensor({1, 2, 3, 4}, rng)), xi = leaf(random_tensor({1, 2, 3, 4}, rng));
    Tensor wre, wim;
    auto build = [&]() {
      CVar y = complex_transposed_conv2d({xr, xi}, p);
      if (wre.data.empty()) {
        Rng wr(102);
        wre = random_tensor(y.re->val.shape, wr);
        wim = random_tensor(y.im->val.shape, wr);
      }
      return add(dot_const(y.re, wre), dot_const(y.im, wim));
    };
    CHECK(oracle::fd_check({xr, xi, p.W_r, p.W_i, p.b_r, p.b_i}, build) <= 1e-4);
  }

  SUBCASE("depthwise-separable conv, both directions") {
    for (bool transposed : {false, true}) {
      auto p = make_dsc_conv(2, 3, 2, 2, ConvGeom{2, 1, 1, 0}, transposed, rng);
      Var xr = leaf(random_tensor({1, 2, 4, 3}, rng)), xi = leaf(random_tensor({1, 2, 4, 3}, rng));
      Tensor wre, wim;
      auto build = [&]() {
        CVar y = complex_dsc_conv2d({xr, xi}, p);
        if (wre.data.empty()) {
          Rng wr(103);
          wre = random_tensor(y.re->val.shape, wr);
          wim = random_tensor(y.im->val.shape, wr);
        }
        return add(dot_const(y.re, wre), dot_const(y.im, wim));
      };
      CHECK(oracle::fd_check({xr, xi, p.dw_r, p.dw_i, p.dwb_r, p.dwb_i, p.pw_r, p.pw_i, p.pb_r,
                              p.pb_i},
                             build) <= 1e-4);
    }
  }

  SUBCASE("activation and norm") {
    Var xr = leaf(random_tensor({1, 2, 3, 2}, rng)), xi = leaf(random_tensor({1, 2, 3, 2}, rng));
    Tensor wre = random_tensor({1, 2, 3, 2}, rng), wim = random_tensor({1, 2, 3, 2}, rng);
    auto build_act = [&]() {
      CVar y = complex_activation({xr, xi});
      return add(dot_const(y.re, wre), dot_const(y.im, wim));
    };
    CHECK(oracle::fd_check({xr, xi}, build_act) <= 1e-4);

    auto p = make_complex_norm(2, 3);
    auto build_norm = [&]() {
      CVar y = complex_norm({xr, xi}, p);
      return add(dot_const(y.re, wre), dot_const(y.im, wim));
    };
    CHECK(oracle::fd_check({xr, xi, p.g_r, p.bt_r, p.g_i, p.bt_i}, build_norm) <= 1e-4);
  }
}

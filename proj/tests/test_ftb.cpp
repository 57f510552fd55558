#include "datcft/ftb.hpp"

#include "doctest.h"
#include "oracles.hpp"

using namespace datcft;
using oracle::random_tensor;

namespace {

void zero_out(const Var& v) { std::fill(v->val.data.begin(), v->val.data.end(), 0.0); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.same_shape(b));
  double m = 0;
  for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::fabs(a.data[i] - b.data[i]));
  return m;
}

// gate forced to ~1 (huge attention bias), freq_fc = identity
void saturate_attention(FtbVars& p) {
  zero_out(p.attn_in.conv.W_r);
  zero_out(p.attn_in.conv.W_i);
  zero_out(p.attn_in.conv.b_r);
  zero_out(p.attn_in.conv.b_i);
  zero_out(p.attn_out.conv.W_r);
  zero_out(p.attn_out.conv.W_i);
  std::fill(p.attn_out.conv.b_r->val.data.begin(), p.attn_out.conv.b_r->val.data.end(), 50.0);
  std::fill(p.attn_out.conv.b_i->val.data.begin(), p.attn_out.conv.b_i->val.data.end(), 50.0);
}

void set_identity_fc(FtbVars& p) {
  zero_out(p.freq_fc);
  for (int f = 0; f < p.freq; ++f) p.freq_fc->val.at2(f, f) = 1.0;
}

// fuse selects one half of the channel concatenation (0 = input, 1 = transformed)
void set_selector_fuse(FtbVars& p, int half) {
  zero_out(p.fuse.conv.W_r);
  zero_out(p.fuse.conv.W_i);
  zero_out(p.fuse.conv.b_r);
  zero_out(p.fuse.conv.b_i);
  for (int c = 0; c < p.channels; ++c)
    p.fuse.conv.W_r->val.at4(c, half * p.channels + c, 0, 0) = 1.0;
}

}  // namespace

TEST_CASE("identity configuration passes the input through") {
  Rng rng(5);
  for (FtbOrder order : {FtbOrder::AttentionFirst, FtbOrder::MatrixFirst}) {
    FtbVars p = make_ftb(3, 6, false, order, rng);
    saturate_attention(p);
    set_identity_fc(p);
    set_selector_fuse(p, 0);
    CVar x = to_cvar({random_tensor({2, 3, 6, 4}, rng), random_tensor({2, 3, 6, 4}, rng)});
    CVar y = ftb_forward(x, p);
    CHECK(max_abs_diff(y.re->val, x.re->val) <= 1e-10);
    CHECK(max_abs_diff(y.im->val, x.im->val) <= 1e-10);
  }
}

TEST_CASE("averaging frequency matrix spreads a single bin everywhere") {
  Rng rng(9);
  const int F = 6;
  FtbVars p = make_ftb(2, F, false, FtbOrder::AttentionFirst, rng);
  saturate_attention(p);
  std::fill(p.freq_fc->val.data.begin(), p.freq_fc->val.data.end(), 1.0 / F);
  set_selector_fuse(p, 1);  // output the transformed half
  Tensor xr = Tensor::zeros({1, 2, F, 3}), xi = Tensor::zeros({1, 2, F, 3});
  for (int c = 0; c < 2; ++c)
    for (int t = 0; t < 3; ++t) {
      xr.at4(0, c, 3, t) = 1.0 + 0.1 * c + 0.01 * t;
      xi.at4(0, c, 3, t) = -0.5 + 0.2 * c;
    }
  CVar y = ftb_forward(to_cvar({xr, xi}), p);
  for (int f = 0; f < F; ++f) {
    double energy = 0;
    for (int c = 0; c < 2; ++c)
      for (int t = 0; t < 3; ++t)
        energy += std::fabs(y.re->val.at4(0, c, f, t)) + std::fabs(y.im->val.at4(0, c, f, t));
    CHECK(energy > 1e-3);
  }
}

TEST_CASE("random block spreads energy beyond a single excited bin") {
  Rng rng(15);
  const int F = 8;
  FtbVars p = make_ftb(4, F, false, FtbOrder::AttentionFirst, rng);
  Tensor xr = Tensor::zeros({1, 4, F, 5}), xi = Tensor::zeros({1, 4, F, 5});
  for (int c = 0; c < 4; ++c)
    for (int t = 0; t < 5; ++t) {
      xr.at4(0, c, 3, t) = rng.uniform(-1.0, 1.0);
      xi.at4(0, c, 3, t) = rng.uniform(-1.0, 1.0);
    }
  CVar y = ftb_forward(to_cvar({xr, xi}), p);
  for (int f = 0; f < F; ++f) {
    double energy = 0;
    for (int c = 0; c < 4; ++c)
      for (int t = 0; t < 5; ++t)
        energy += y.re->val.at4(0, c, f, t) * y.re->val.at4(0, c, f, t) +
                  y.im->val.at4(0, c, f, t) * y.im->val.at4(0, c, f, t);
    CHECK(energy > 1e-12);
  }
}

TEST_CASE("shape preservation across configurations") {
  Rng rng(21);
  for (bool dsc : {false, true})
    for (FtbOrder order : {FtbOrder::AttentionFirst, FtbOrder::MatrixFirst}) {
      FtbVars p = make_ftb(5, 7, dsc, order, rng);
      CVar x = to_cvar({random_tensor({2, 5, 7, 3}, rng), random_tensor({2, 5, 7, 3}, rng)});
      CVar y = ftb_forward(x, p);
      CHECK(y.re->val.same_shape(x.re->val));
      CHECK(y.im->val.same_shape(x.im->val));
    }
}

TEST_CASE("frequency-to-frequency Jacobian is dense") {
  Rng rng(27);
  const int F = 5;
  FtbVars p = make_ftb(2, F, false, FtbOrder::AttentionFirst, rng);
  Tensor xr = random_tensor({1, 2, F, 2}, rng), xi = random_tensor({1, 2, F, 2}, rng);
  CVar y0 = ftb_forward(to_cvar({xr, xi}), p);
  const double eps = 1e-3;
  for (int fin = 0; fin < F; ++fin) {
    Tensor xp = xr;
    xp.at4(0, 0, fin, 0) += eps;
    CVar y1 = ftb_forward(to_cvar({xp, xi}), p);
    for (int fout = 0; fout < F; ++fout) {
      double delta = 0;
      for (int c = 0; c < 2; ++c)
        for (int t = 0; t < 2; ++t)
          delta += std::fabs(y1.re->val.at4(0, c, fout, t) - y0.re->val.at4(0, c, fout, t)) +
                   std::fabs(y1.im->val.at4(0, c, fout, t) - y0.im->val.at4(0, c, fout, t));
      CHECK(delta > 1e-14);
    }
  }
}

TEST_CASE("gradient audit against finite differences") {
  Rng rng(33);
  for (bool dsc : {false, true})
    for (FtbOrder order : {FtbOrder::AttentionFirst, FtbOrder::MatrixFirst}) {
      FtbVars p = make_ftb(2, 4, dsc, order, rng);
      Var xr = leaf(random_tensor({1, 2, 4, 3}, rng)), xi = leaf(random_tensor({1, 2, 4, 3}, rng));
      Tensor wre = random_tensor({1, 2, 4, 3}, rng), wim = random_tensor({1, 2, 4, 3}, rng);
      std::vector<Var> leaves = {xr, xi, p.freq_fc};
      ParamList pl;
      p.attn_in.collect(pl, "ai");
      p.attn_out.collect(pl, "ao");
      p.fuse.collect(pl, "fu");
      for (auto& np : pl) leaves.push_back(np.v);
      auto build = [&]() {
        CVar y = ftb_forward({xr, xi}, p);
        return add(dot_const(y.re, wre), dot_const(y.im, wim));
      };
      CHECK(oracle::fd_check(leaves, build) <= 1e-4);
    }
}

TEST_CASE("parameter count matches the enumerated set") {
  Rng rng(39);
  for (bool dsc : {false, true}) {
    FtbVars p = make_ftb(4, 9, dsc, FtbOrder::AttentionFirst, rng);
    ParamList pl;
    p.collect(pl, "ftb");
    CHECK(param_list_size(pl) == ftb_param_count(4, 9, dsc));
  }
}

#include "datcft/ftb.hpp"

#include "datcft/errors.hpp"

namespace datcft {

FtbVars make_ftb(int channels, int freq, bool use_dsc, FtbOrder order, Rng& rng) {
  FtbVars p;
  p.channels = channels;
  p.freq = freq;
  p.order = order;
  const int ca = ftb_attention_channels(channels);
  const ConvGeom unit{};
  p.attn_in = make_conv_or_dsc(use_dsc, channels, ca, 1, 1, unit, false, rng);
  p.attn_out = make_conv_or_dsc(use_dsc, ca, channels, 1, 1, unit, false, rng);
  Tensor fc({freq, freq});
  init_uniform_fanin(fc, freq, rng);
  p.freq_fc = leaf(std::move(fc));
  p.fuse = make_conv_or_dsc(use_dsc, 2 * channels, channels, 1, 1, unit, false, rng);
  return p;
}

void FtbVars::collect(ParamList& out, const std::string& prefix) const {
  attn_in.collect(out, prefix + ".attn_in");
  attn_out.collect(out, prefix + ".attn_out");
  out.push_back({prefix + ".freq_fc", freq_fc});
  fuse.collect(out, prefix + ".fuse");
}

CVar ftb_forward(const CVar& x, const FtbVars& p) {
  if (x.re->val.ndim() != 4 || x.re->val.shape[2] != p.freq)
    throw ConfigError("ftb_forward: frequency dimension does not match freq_fc");
  if (x.re->val.shape[1] != p.channels) throw ConfigError("ftb_forward: channel mismatch");

  CVar u = p.attn_in.apply(x);
  u = complex_activation(u);
  u = p.attn_out.apply(u);
  const CVar gate{sigmoid(u.re), sigmoid(u.im)};

  CVar yft;
  if (p.order == FtbOrder::AttentionFirst) {
    const CVar gated{mul(gate.re, x.re), mul(gate.im, x.im)};
    yft = {freq_matmul(gated.re, p.freq_fc), freq_matmul(gated.im, p.freq_fc)};
  } else {
    const CVar mixed{freq_matmul(x.re, p.freq_fc), freq_matmul(x.im, p.freq_fc)};
    yft = {mul(gate.re, mixed.re), mul(gate.im, mixed.im)};
  }

  const CVar cat{concat({x.re, yft.re}, 1), concat({x.im, yft.im}, 1)};
  return p.fuse.apply(cat);
}

int64_t ftb_param_count(int channels, int freq, bool use_dsc) {
  const int ca = ftb_attention_channels(channels);
  auto count = [use_dsc](int ci, int co, int kf, int kt) {
    return use_dsc ? param_count_dsc(ci, co, kf, kt) : param_count_conv(ci, co, kf, kt);
  };
  return count(channels, ca, 1, 1) + count(ca, channels, 1, 1) +
         static_cast<int64_t>(freq) * freq + count(2 * channels, channels, 1, 1);
}

}  // namespace datcft

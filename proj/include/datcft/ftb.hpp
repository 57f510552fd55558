#pragma once

#include "datcft/complex_ops.hpp"

namespace datcft {

// Order in which the gate and the frequency matrix are applied; kept
// configurable for ablation.
enum class FtbOrder { AttentionFirst, MatrixFirst };

// Frequency transformation block: a 1x1-conv attention gate over the T-F
// plane, a learned full [F x F] mixing matrix along frequency (shared by the
// real and imaginary parts), and a 1x1 fuse over the channel-concatenation of
// input and transformed features.  Shape preserving.
struct FtbVars {
  int channels = 0;
  int freq = 0;
  FtbOrder order = FtbOrder::AttentionFirst;
  ConvOrDsc attn_in;   // 1x1, C -> C_a
  ConvOrDsc attn_out;  // 1x1, C_a -> C
  Var freq_fc;         // [F, F], real
  ConvOrDsc fuse;      // 1x1, 2C -> C
  void collect(ParamList& out, const std::string& prefix) const;
};

inline int ftb_attention_channels(int channels) { return std::max(channels / 4, 2); }

FtbVars make_ftb(int channels, int freq, bool use_dsc, FtbOrder order, Rng& rng);

CVar ftb_forward(const CVar& x, const FtbVars& p);

int64_t ftb_param_count(int channels, int freq, bool use_dsc);

}  // namespace datcft

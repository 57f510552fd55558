#pragma once

#include <utility>

#include "datcft/complex_ops.hpp"

namespace datcft {

// What the per-step mask multiplies (with residual): the pass's input
// sequence, or the recurrent key features.
enum class MaskTarget { InputFeatures, RecurrentKeys };

// 50%-overlap chunking along the frame axis with right zero padding.
struct ChunkGeometry {
  int T = 0;           // original frame count
  int P = 0;           // chunk length
  int hop = 0;         // P/2
  int n_chunks = 0;
  int pad_frames = 0;  // right padding, < P

  int padded() const { return T + pad_frames; }
  static ChunkGeometry compute(int T, int P);
};

// [B, d, T] -> [B, d, n_chunks, P]
Var segment_op(const Var& x, const ChunkGeometry& g);
// [B, d, n_chunks, P] -> [B, d, T]; overlap-add over chunk coverage
Var merge_op(const Var& c, const ChunkGeometry& g);

// Shared recurrent front end producing key and query sequences: (Bi-)LSTM,
// layer norm over the recurrent output, then two linear heads.
struct RnnEncodeVars {
  bool bidirectional = false;
  int d_in = 0, hidden = 0, d_out = 0;
  Var Wf, Rf, bf;  // forward direction [4h, d_in], [4h, h], [4h]
  Var Wb, Rb, bb;  // backward direction (bidirectional only)
  Var ln_g, ln_b;  // [H], H = (bidirectional ? 2 : 1) * hidden
  Var K_W, K_b;    // [d_out, H], [d_out]
  Var Q_W, Q_b;
  void collect(ParamList& out, const std::string& prefix) const;
};

RnnEncodeVars make_rnn_encode(int d_in, int hidden, int d_out, bool bidirectional, Rng& rng);

// x [N, S, d_in] -> (H_K, H_Q), each [N, S, d_out]
std::pair<Var, Var> rnn_encode(const Var& x, const RnnEncodeVars& p);

// scaled-dot-product attention over each sequence: scores[k][j] =
// <Q_k, K_j>/sqrt(d); rows normalized over j <= k (causal) or all j.
// Returns (W [N,S,S], C [N,S,d]) with C_k = sum_j W[k,j] K_j.
std::pair<Var, Var> attention(const Var& h_k, const Var& h_q, bool causal);

struct MaskHeadVars {
  Var W;  // [d, 2d]
  Var b;  // [d]
  void collect(ParamList& out, const std::string& prefix) const;
};
MaskHeadVars make_mask_head(int d, Rng& rng);

// M = sigmoid(Linear(concat(C, H_Q))) in [0,1]
Var mask_vector(const Var& c, const Var& h_q, const MaskHeadVars& p);
// enhanced = x_in (1 + M)
Var mask_and_enhance(const Var& c, const Var& h_q, const Var& x_in, const MaskHeadVars& p);

struct DatPathVars {
  RnnEncodeVars enc;
  MaskHeadVars mask;
  void collect(ParamList& out, const std::string& prefix) const;
};

struct DatRnnBlockVars {
  int d = 0, hidden = 0, chunk_len = 32;
  MaskTarget mask_target = MaskTarget::InputFeatures;
  Var pre_g, pre_b;   // pre-LN over the feature axis
  DatPathVars intra;  // bidirectional, non-causal attention
  DatPathVars inter;  // unidirectional, causal attention
  void collect(ParamList& out, const std::string& prefix) const;
};

DatRnnBlockVars make_dat_rnn_block(int d, int hidden, int chunk_len, MaskTarget target, Rng& rng);

// per-chunk processing along the within-chunk axis; chunks independent
Var intra_pass(const Var& chunks, const DatRnnBlockVars& p);
// causal processing along the chunk axis at each within-chunk position
Var inter_pass(const Var& chunks, const DatRnnBlockVars& p);

// pre-LN -> segment -> intra -> inter -> merge; shape preserving [B, d, T]
Var dat_rnn_forward(const Var& x, const DatRnnBlockVars& p);

int64_t dat_rnn_param_count(int d, int hidden);

}  // namespace datcft

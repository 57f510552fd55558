#include "datcft/dat_rnn.hpp"

#include <cmath>
#include <cstring>

#include "datcft/errors.hpp"

namespace datcft {

namespace {

Var init_leaf(std::vector<int> shape, int fan_in, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  init_uniform_fanin(t, fan_in, rng);
  return leaf(t);
}

}  // namespace

ChunkGeometry ChunkGeometry::compute(int T, int P) {
  if (T < 1) throw ConfigError("chunking needs at least one frame");
  if (P < 2 || P % 2 != 0) throw ConfigError("chunk length must be even and >= 2");
  ChunkGeometry g;
  g.T = T;
  g.P = P;
  g.hop = P / 2;
  int padded = T < P ? P : T;
  int rem = (padded - P) % g.hop;
  if (rem != 0) padded += g.hop - rem;
  g.pad_frames = padded - T;
  g.n_chunks = 1 + (padded - P) / g.hop;
  return g;
}

Var segment_op(const Var& x, const ChunkGeometry& g) {
  if (x->val.ndim() != 3) throw ConfigError("segment_op expects [B, d, T]");
  const int B = x->val.shape[0], d = x->val.shape[1], T = x->val.shape[2];
  if (T != g.T) throw ConfigError("segment_op: frame count does not match geometry");
  const int K = g.n_chunks, P = g.P, hop = g.hop;
  Tensor out = Tensor::zeros({B, d, K, P});
  for (int b = 0; b < B; ++b)
    for (int dd = 0; dd < d; ++dd) {
      const double* src = x->val.ptr() + (static_cast<int64_t>(b) * d + dd) * T;
      double* dst = out.ptr() + ((static_cast<int64_t>(b) * d + dd) * K) * P;
      for (int k = 0; k < K; ++k)
        for (int p = 0; p < P; ++p) {
          int t = k * hop + p;
          dst[static_cast<int64_t>(k) * P + p] = t < T ? src[t] : 0.0;
        }
    }
  return make_op_node(std::move(out), {x}, [B, d, T, K, P, hop](Node& n) {
    Var xp = n.parents[0];
    if (!xp->needs_grad) return;
    for (int b = 0; b < B; ++b)
      for (int dd = 0; dd < d; ++dd) {
        double* gx = xp->g().ptr() + (static_cast<int64_t>(b) * d + dd) * T;
        const double* go = n.grad.ptr() + ((static_cast<int64_t>(b) * d + dd) * K) * P;
        for (int k = 0; k < K; ++k)
          for (int p = 0; p < P; ++p) {
            int t = k * hop + p;
            if (t < T) gx[t] += go[static_cast<int64_t>(k) * P + p];
          }
      }
  });
}

Var merge_op(const Var& c, const ChunkGeometry& g) {
  if (c->val.ndim() != 4) throw ConfigError("merge_op expects [B, d, K, P]");
  const int B = c->val.shape[0], d = c->val.shape[1];
  const int K = c->val.shape[2], P = c->val.shape[3];
  if (K != g.n_chunks || P != g.P) throw ConfigError("merge_op: chunk dims do not match geometry");
  const int T = g.T, hop = g.hop;
  std::vector<double> inv_cover(g.padded(), 0.0);
  for (int k = 0; k < K; ++k)
    for (int p = 0; p < P; ++p) inv_cover[static_cast<int64_t>(k) * hop + p] += 1.0;
  for (double& v : inv_cover) v = 1.0 / v;
  Tensor out = Tensor::zeros({B, d, T});
  for (int b = 0; b < B; ++b)
    for (int dd = 0; dd < d; ++dd) {
      const double* src = c->val.ptr() + ((static_cast<int64_t>(b) * d + dd) * K) * P;
      double* dst = out.ptr() + (static_cast<int64_t>(b) * d + dd) * T;
      for (int k = 0; k < K; ++k)
        for (int p = 0; p < P; ++p) {
          int t = k * hop + p;
          if (t < T) dst[t] += src[static_cast<int64_t>(k) * P + p] * inv_cover[t];
        }
    }
  return make_op_node(std::move(out), {c}, [B, d, T, K, P, hop, inv_cover](Node& n) {
    Var cp = n.parents[0];
    if (!cp->needs_grad) return;
    for (int b = 0; b < B; ++b)
      for (int dd = 0; dd < d; ++dd) {
        double* gc = cp->g().ptr() + ((static_cast<int64_t>(b) * d + dd) * K) * P;
        const double* go = n.grad.ptr() + (static_cast<int64_t>(b) * d + dd) * T;
        for (int k = 0; k < K; ++k)
          for (int p = 0; p < P; ++p) {
            int t = k * hop + p;
            if (t < T) gc[static_cast<int64_t>(k) * P + p] += go[t] * inv_cover[t];
          }
      }
  });
}

void RnnEncodeVars::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".Wf", Wf});
  out.push_back({prefix + ".Rf", Rf});
  out.push_back({prefix + ".bf", bf});
  if (bidirectional) {
    out.push_back({prefix + ".Wb", Wb});
    out.push_back({prefix + ".Rb", Rb});
    out.push_back({prefix + ".bb", bb});
  }
  out.push_back({prefix + ".ln_g", ln_g});
  out.push_back({prefix + ".ln_b", ln_b});
  out.push_back({prefix + ".K_W", K_W});
  out.push_back({prefix + ".K_b", K_b});
  out.push_back({prefix + ".Q_W", Q_W});
  out.push_back({prefix + ".Q_b", Q_b});
}

RnnEncodeVars make_rnn_encode(int d_in, int hidden, int d_out, bool bidirectional, Rng& rng) {
  if (d_in < 1 || hidden < 1 || d_out < 1) throw ConfigError("recurrent encoder dims must be positive");
  RnnEncodeVars p;
  p.bidirectional = bidirectional;
  p.d_in = d_in;
  p.hidden = hidden;
  p.d_out = d_out;
  const int H = (bidirectional ? 2 : 1) * hidden;
  auto lstm_dir = [&](Var& W, Var& R, Var& b) {
    W = init_leaf({4 * hidden, d_in}, d_in, rng);
    R = init_leaf({4 * hidden, hidden}, hidden, rng);
    b = leaf(Tensor::zeros({4 * hidden}));
  };
  lstm_dir(p.Wf, p.Rf, p.bf);
  if (bidirectional) lstm_dir(p.Wb, p.Rb, p.bb);
  p.ln_g = leaf(Tensor::full({H}, 1.0));
  p.ln_b = leaf(Tensor::zeros({H}));
  p.K_W = init_leaf({d_out, H}, H, rng);
  p.K_b = leaf(Tensor::zeros({d_out}));
  p.Q_W = init_leaf({d_out, H}, H, rng);
  p.Q_b = leaf(Tensor::zeros({d_out}));
  return p;
}

std::pair<Var, Var> rnn_encode(const Var& x, const RnnEncodeVars& p) {
  if (x->val.ndim() != 3) throw ConfigError("rnn_encode expects [N, S, d_in]");
  const int N = x->val.shape[0], S = x->val.shape[1];
  if (x->val.shape[2] != p.d_in) throw ConfigError("rnn_encode: feature dim mismatch");
  Var rec;
  if (p.bidirectional) {
    Var fwd = lstm(x, p.Wf, p.Rf, p.bf, false);
    Var bwd = lstm(x, p.Wb, p.Rb, p.bb, true);
    rec = concat({fwd, bwd}, 2);
  } else {
    rec = lstm(x, p.Wf, p.Rf, p.bf, false);
  }
  const int H = rec->val.shape[2];
  Var flat = reshape(rec, {N * S, H});
  Var z = layer_norm_rows(flat, p.ln_g, p.ln_b, 1e-5);
  Var h_k = reshape(linear(z, p.K_W, p.K_b), {N, S, p.d_out});
  Var h_q = reshape(linear(z, p.Q_W, p.Q_b), {N, S, p.d_out});
  return {h_k, h_q};
}

std::pair<Var, Var> attention(const Var& h_k, const Var& h_q, bool causal) {
  if (h_k->val.ndim() != 3 || !h_k->val.same_shape(h_q->val))
    throw ConfigError("attention expects matching [N, S, d] key/query tensors");
  const int d = h_k->val.shape[2];
  Var scores = scale(bmm_nt(h_q, h_k), 1.0 / std::sqrt(static_cast<double>(d)));
  Var w = softmax_rows_masked(scores, causal);
  Var c = bmm_nn(w, h_k);
  return {w, c};
}

void MaskHeadVars::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".W", W});
  out.push_back({prefix + ".b", b});
}

MaskHeadVars make_mask_head(int d, Rng& rng) {
  MaskHeadVars p;
  p.W = init_leaf({d, 2 * d}, 2 * d, rng);
  p.b = leaf(Tensor::zeros({d}));
  return p;
}

Var mask_vector(const Var& c, const Var& h_q, const MaskHeadVars& p) {
  if (c->val.ndim() != 3 || !c->val.same_shape(h_q->val))
    throw ConfigError("mask_vector expects matching [N, S, d] tensors");
  const int N = c->val.shape[0], S = c->val.shape[1], d = c->val.shape[2];
  if (p.W->val.shape[0] != d || p.W->val.shape[1] != 2 * d)
    throw ConfigError("mask_vector: head shaped for a different feature dim");
  Var cat = reshape(concat({c, h_q}, 2), {N * S, 2 * d});
  Var m = sigmoid(linear(cat, p.W, p.b));
  return reshape(m, {N, S, d});
}

Var mask_and_enhance(const Var& c, const Var& h_q, const Var& x_in, const MaskHeadVars& p) {
  Var m = mask_vector(c, h_q, p);
  if (!m->val.same_shape(x_in->val)) throw ConfigError("mask_and_enhance: mask/input shape mismatch");
  return add(mul(x_in, m), x_in);
}

void DatPathVars::collect(ParamList& out, const std::string& prefix) const {
  enc.collect(out, prefix + ".enc");
  mask.collect(out, prefix + ".mask");
}

void DatRnnBlockVars::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".pre_g", pre_g});
  out.push_back({prefix + ".pre_b", pre_b});
  intra.collect(out, prefix + ".intra");
  inter.collect(out, prefix + ".inter");
}

DatRnnBlockVars make_dat_rnn_block(int d, int hidden, int chunk_len, MaskTarget target, Rng& rng) {
  if (chunk_len < 2 || chunk_len % 2 != 0) throw ConfigError("chunk length must be even and >= 2");
  DatRnnBlockVars p;
  p.d = d;
  p.hidden = hidden;
  p.chunk_len = chunk_len;
  p.mask_target = target;
  p.pre_g = leaf(Tensor::full({d}, 1.0));
  p.pre_b = leaf(Tensor::zeros({d}));
  p.intra.enc = make_rnn_encode(d, hidden, d, true, rng);
  p.intra.mask = make_mask_head(d, rng);
  p.inter.enc = make_rnn_encode(d, hidden, d, false, rng);
  p.inter.mask = make_mask_head(d, rng);
  return p;
}

namespace {

// chunks [B, d, K, P] -> sequences, process, restore. The intra pass runs
// along the within-chunk axis (one sequence per chunk); the inter pass runs
// along the chunk axis (one sequence per within-chunk position).
Var run_path(const Var& chunks, const DatPathVars& path, bool along_chunk_axis, bool causal,
             MaskTarget target) {
  const int B = chunks->val.shape[0], d = chunks->val.shape[1];
  const int K = chunks->val.shape[2], P = chunks->val.shape[3];
  const int n_seq = along_chunk_axis ? B * P : B * K;
  const int s_len = along_chunk_axis ? K : P;
  std::vector<int> to_seq = along_chunk_axis ? std::vector<int>{0, 3, 2, 1} : std::vector<int>{0, 2, 3, 1};
  std::vector<int> from_seq = along_chunk_axis ? std::vector<int>{0, 3, 2, 1} : std::vector<int>{0, 3, 1, 2};
  Var seq = reshape(permute(chunks, to_seq), {n_seq, s_len, d});
  auto [h_k, h_q] = rnn_encode(seq, path.enc);
  auto [w, c] = attention(h_k, h_q, causal);
  (void)w;
  Var x_in = target == MaskTarget::InputFeatures ? seq : h_k;
  Var enh = mask_and_enhance(c, h_q, x_in, path.mask);
  Var grid = along_chunk_axis ? reshape(enh, {B, P, K, d}) : reshape(enh, {B, K, P, d});
  return permute(grid, from_seq);
}

}  // namespace

Var intra_pass(const Var& chunks, const DatRnnBlockVars& p) {
  return run_path(chunks, p.intra, false, false, p.mask_target);
}

Var inter_pass(const Var& chunks, const DatRnnBlockVars& p) {
  return run_path(chunks, p.inter, true, true, p.mask_target);
}

Var dat_rnn_forward(const Var& x, const DatRnnBlockVars& p) {
  if (x->val.ndim() != 3) throw ConfigError("dat_rnn_forward expects [B, d, T]");
  const int B = x->val.shape[0], d = x->val.shape[1], T = x->val.shape[2];
  if (d != p.d) throw ConfigError("dat_rnn_forward: feature dim mismatch");
  Var rows = reshape(permute(x, {0, 2, 1}), {B * T, d});
  Var normed = layer_norm_rows(rows, p.pre_g, p.pre_b, 1e-5);
  Var xn = permute(reshape(normed, {B, T, d}), {0, 2, 1});
  ChunkGeometry g = ChunkGeometry::compute(T, p.chunk_len);
  Var chunks = segment_op(xn, g);
  Var after_intra = intra_pass(chunks, p);
  Var after_inter = inter_pass(after_intra, p);
  return merge_op(after_inter, g);
}

int64_t dat_rnn_param_count(int d, int hidden) {
  auto enc_count = [&](bool bidi) {
    int64_t dirs = bidi ? 2 : 1;
    int64_t H = dirs * hidden;
    int64_t lstm = dirs * 4ll * hidden * (d + hidden + 1);
    int64_t ln = 2 * H;
    int64_t heads = 2ll * (static_cast<int64_t>(d) * H + d);
    return lstm + ln + heads;
  };
  int64_t mask = static_cast<int64_t>(d) * 2 * d + d;
  return 2ll * d + enc_count(true) + enc_count(false) + 2 * mask;
}

}  // namespace datcft

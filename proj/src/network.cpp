#include "datcft/network.hpp"

#include <cmath>

#include "datcft/errors.hpp"
#include "json.hpp"

namespace datcft {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Base: return "base";
    case Variant::F: return "f";
    case Variant::L: return "l";
  }
  throw ConfigError("unknown variant");
}

Variant variant_from_string(const std::string& s) {
  if (s == "base") return Variant::Base;
  if (s == "f") return Variant::F;
  if (s == "l") return Variant::L;
  throw ConfigError("unknown variant '" + s + "' (expected base, f, or l)");
}

void ModelConfig::validate() const {
  if (depth() < 2) throw ConfigError("need at least two encoder stages");
  for (int c : encoder_channels)
    if (c < 1) throw ConfigError("encoder channel counts must be positive");
  if (kernel_f < 1 || kernel_t < 1 || stride_f < 1) throw ConfigError("bad kernel/stride");
  if (stride_t != 1) throw ConfigError("time stride must be 1 (the bottleneck runs along time)");
  if (kernel_f % 2 == 0) throw ConfigError("frequency kernel must be odd for symmetric padding");
  if (datrnn_blocks < 1) throw ConfigError("need at least one bottleneck block");
  if (chunk_len < 2 || chunk_len % 2 != 0) throw ConfigError("chunk length must be even and >= 2");
  if (lstm_hidden < 1 || bottleneck_dim < 1) throw ConfigError("bad bottleneck dims");
  stft.validate();
  const int pf = (kernel_f - 1) / 2;
  int f = stft.fft_size / 2 + 1;
  for (int i = 0; i < depth(); ++i) {
    const int fo = conv_out_dim(f, kernel_f, stride_f, pf);
    if (fo < 1) throw ConfigError("frequency dim collapses before the bottleneck");
    if (conv_transposed_out_dim(fo, kernel_f, stride_f, pf) != f)
      throw ConfigError("encoder frequency chain is not invertible by the decoder");
    f = fo;
  }
}

std::string ModelConfig::to_json() const {
  nlohmann::json j;
  j["variant"] = datcft::to_string(variant);
  j["encoder_channels"] = encoder_channels;
  j["kernel"] = {kernel_f, kernel_t};
  j["stride"] = {stride_f, stride_t};
  j["datrnn_blocks"] = datrnn_blocks;
  j["chunk_len"] = chunk_len;
  j["lstm_hidden"] = lstm_hidden;
  j["bottleneck_dim"] = bottleneck_dim;
  j["ftb_order"] = ftb_order == FtbOrder::AttentionFirst ? "attention_first" : "matrix_first";
  j["mask_target"] = mask_target == MaskTarget::InputFeatures ? "input" : "recurrent";
  j["output_mode"] = output_mode == OutputMode::Spectrum ? "spectrum" : "mask";
  j["stft"] = {{"frame_len", stft.frame_len},
               {"hop", stft.hop},
               {"fft_size", stft.fft_size},
               {"center_padding", stft.center_padding}};
  j["seed"] = seed;
  return j.dump(2);
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad model config JSON: ") + e.what());
  }
  ModelConfig cfg;
  try {
    cfg.variant = variant_from_string(j.value("variant", std::string("base")));
    cfg.encoder_channels = j.value("encoder_channels", cfg.encoder_channels);
    if (j.contains("kernel")) {
      cfg.kernel_f = j["kernel"].at(0).get<int>();
      cfg.kernel_t = j["kernel"].at(1).get<int>();
    }
    if (j.contains("stride")) {
      cfg.stride_f = j["stride"].at(0).get<int>();
      cfg.stride_t = j["stride"].at(1).get<int>();
    }
    cfg.datrnn_blocks = j.value("datrnn_blocks", cfg.datrnn_blocks);
    cfg.chunk_len = j.value("chunk_len", cfg.chunk_len);
    cfg.lstm_hidden = j.value("lstm_hidden", cfg.lstm_hidden);
    cfg.bottleneck_dim = j.value("bottleneck_dim", cfg.bottleneck_dim);
    const std::string order = j.value("ftb_order", std::string("attention_first"));
    if (order != "attention_first" && order != "matrix_first")
      throw ConfigError("ftb_order must be attention_first or matrix_first");
    cfg.ftb_order = order == "attention_first" ? FtbOrder::AttentionFirst : FtbOrder::MatrixFirst;
    const std::string target = j.value("mask_target", std::string("input"));
    if (target != "input" && target != "recurrent")
      throw ConfigError("mask_target must be input or recurrent");
    cfg.mask_target = target == "input" ? MaskTarget::InputFeatures : MaskTarget::RecurrentKeys;
    const std::string mode = j.value("output_mode", std::string("spectrum"));
    if (mode != "spectrum" && mode != "mask")
      throw ConfigError("output_mode must be spectrum or mask");
    cfg.output_mode = mode == "spectrum" ? OutputMode::Spectrum : OutputMode::Mask;
    if (j.contains("stft")) {
      const auto& s = j["stft"];
      cfg.stft.frame_len = s.value("frame_len", cfg.stft.frame_len);
      cfg.stft.hop = s.value("hop", cfg.stft.hop);
      cfg.stft.fft_size = s.value("fft_size", cfg.stft.fft_size);
      cfg.stft.center_padding = s.value("center_padding", cfg.stft.center_padding);
    }
    cfg.seed = j.value("seed", cfg.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad model config JSON: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

ModelConfig ModelConfig::reference(Variant v) {
  ModelConfig cfg;
  cfg.variant = v;
  cfg.encoder_channels = {32, 64, 128, 128, 256, 256};
  cfg.datrnn_blocks = 2;
  cfg.chunk_len = 32;
  cfg.lstm_hidden = 128;
  cfg.bottleneck_dim = 256;
  return cfg;
}

namespace {

Var init_leaf(std::vector<int> shape, int fan_in, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  init_uniform_fanin(t, fan_in, rng);
  return leaf(t);
}

bool stage_has_ftb(const ModelConfig& cfg, int i) {
  if (cfg.variant == Variant::Base) return true;
  return i == 0 || i == cfg.depth() - 1;  // first and last encoder blocks
}

}  // namespace

Model build_model(const ModelConfig& cfg) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  Rng rng(cfg.seed);
  const bool dsc = cfg.variant == Variant::L;
  const int D = cfg.depth();
  const int pf = (cfg.kernel_f - 1) / 2;
  const ConvGeom down{cfg.stride_f, cfg.stride_t, pf, 0};
  const ConvGeom unit{1, 1, 0, 0};

  m.freq_dims.push_back(cfg.stft.fft_size / 2 + 1);
  for (int i = 0; i < D; ++i)
    m.freq_dims.push_back(conv_out_dim(m.freq_dims.back(), cfg.kernel_f, cfg.stride_f, pf));

  for (int i = 0; i < D; ++i) {
    const int c_in = i == 0 ? 1 : cfg.encoder_channels[i - 1];
    const int c_out = cfg.encoder_channels[i];
    EncoderStage st;
    st.conv = make_conv_or_dsc(dsc, c_in, c_out, cfg.kernel_f, cfg.kernel_t, down, false, rng);
    st.norm = make_complex_norm(c_out, m.freq_dims[i + 1]);
    st.has_ftb = stage_has_ftb(cfg, i);
    if (st.has_ftb) st.ftb = make_ftb(c_out, m.freq_dims[i + 1], dsc, cfg.ftb_order, rng);
    m.encoder.push_back(std::move(st));
  }

  const int c_last = cfg.encoder_channels.back();
  const int feat = 2 * c_last * m.freq_dims.back();
  const int d = cfg.bottleneck_dim;
  m.proj_in_W = init_leaf({d, feat}, feat, rng);
  m.proj_in_b = leaf(Tensor::zeros({d}));
  for (int b = 0; b < cfg.datrnn_blocks; ++b)
    m.blocks.push_back(make_dat_rnn_block(d, cfg.lstm_hidden, cfg.chunk_len, cfg.mask_target, rng));
  m.proj_out_W = init_leaf({feat, d}, d, rng);
  m.proj_out_b = leaf(Tensor::zeros({feat}));

  m.decoder.resize(D);
  for (int i = D - 1; i >= 0; --i) {
    const int c_enc = cfg.encoder_channels[i];
    const int c_out = i == 0 ? 1 : cfg.encoder_channels[i - 1];
    DecoderStage st;
    st.skip = make_conv_or_dsc(dsc, c_enc, c_enc, 1, 1, unit, false, rng);
    st.tconv =
        make_conv_or_dsc(dsc, 2 * c_enc, c_out, cfg.kernel_f, cfg.kernel_t, down, true, rng);
    st.has_norm = i > 0;
    if (st.has_norm) st.norm = make_complex_norm(c_out, m.freq_dims[i]);
    m.decoder[i] = std::move(st);
  }
  return m;
}

ParamList Model::params() const {
  ParamList out;
  for (size_t i = 0; i < encoder.size(); ++i) {
    const std::string p = "enc." + std::to_string(i);
    encoder[i].conv.collect(out, p + ".conv");
    encoder[i].norm.collect(out, p + ".norm");
    if (encoder[i].has_ftb) encoder[i].ftb.collect(out, p + ".ftb");
  }
  out.push_back({"bottleneck.proj_in.W", proj_in_W});
  out.push_back({"bottleneck.proj_in.b", proj_in_b});
  for (size_t b = 0; b < blocks.size(); ++b)
    blocks[b].collect(out, "datrnn." + std::to_string(b));
  out.push_back({"bottleneck.proj_out.W", proj_out_W});
  out.push_back({"bottleneck.proj_out.b", proj_out_b});
  for (size_t i = 0; i < decoder.size(); ++i) {
    const std::string p = "dec." + std::to_string(i);
    decoder[i].skip.collect(out, p + ".skip");
    decoder[i].tconv.collect(out, p + ".tconv");
    if (decoder[i].has_norm) decoder[i].norm.collect(out, p + ".norm");
  }
  return out;
}

int64_t Model::count_params() const { return param_list_size(params()); }

int Model::ftb_count() const {
  int n = 0;
  for (const auto& st : encoder) n += st.has_ftb ? 1 : 0;
  return n;
}

namespace {

void count_convs(const Model& m, int& standard, int& separable) {
  standard = separable = 0;
  auto add = [&](const ConvOrDsc& c) { (c.use_dsc ? separable : standard)++; };
  for (const auto& st : m.encoder) {
    add(st.conv);
    if (st.has_ftb) {
      add(st.ftb.attn_in);
      add(st.ftb.attn_out);
      add(st.ftb.fuse);
    }
  }
  for (const auto& st : m.decoder) {
    add(st.skip);
    add(st.tconv);
  }
}

// zero frames prepended so a kernel spanning k_t frames sees only the past
CVar pad_time_left(const CVar& x, int frames) {
  if (frames == 0) return x;
  std::vector<int> shape = x.re->val.shape;
  shape[3] = frames;
  Var z = constant(Tensor::zeros(shape));
  return {concat({z, x.re}, 3), concat({z, x.im}, 3)};
}

CVar crop_time(const CVar& x, int len) {
  return {slice(x.re, 3, 0, len), slice(x.im, 3, 0, len)};
}

}  // namespace

int Model::standard_conv_count() const {
  int s, d;
  count_convs(*this, s, d);
  return s;
}

int Model::dsc_conv_count() const {
  int s, d;
  count_convs(*this, s, d);
  return d;
}

CVar model_forward(const Model& m, const CVar& x) {
  if (x.re->val.ndim() != 4 || x.re->val.shape[1] != 1)
    throw ConfigError("model_forward expects a [B, 1, F, T] complex pair");
  if (x.re->val.shape[2] != m.freq_dims[0])
    throw ConfigError("model_forward: frequency dim does not match the model");
  const int B = x.re->val.shape[0];
  const int T = x.re->val.shape[3];
  const int D = m.cfg.depth();
  const int pad_t = m.cfg.kernel_t - 1;

  std::vector<CVar> enc_outs;
  CVar cur = x;
  for (int i = 0; i < D; ++i) {
    const EncoderStage& st = m.encoder[i];
    CVar y = st.conv.apply(pad_time_left(cur, pad_t));
    y = complex_activation(complex_norm(y, st.norm));
    if (st.has_ftb) y = ftb_forward(y, st.ftb);
    enc_outs.push_back(y);
    cur = y;
  }

  // bottleneck: flatten (re, im, channels, freq) into one feature axis per frame
  const int c_last = m.cfg.encoder_channels.back();
  const int fb = m.freq_dims.back();
  const int feat = 2 * c_last * fb;
  const int d = m.cfg.bottleneck_dim;
  Var flat = reshape(concat({cur.re, cur.im}, 1), {B, feat, T});
  Var rows = reshape(permute(flat, {0, 2, 1}), {B * T, feat});
  Var z = reshape(linear(rows, m.proj_in_W, m.proj_in_b), {B, T, d});
  Var seq = permute(z, {0, 2, 1});
  for (const auto& blk : m.blocks) seq = dat_rnn_forward(seq, blk);
  Var back_rows = reshape(permute(seq, {0, 2, 1}), {B * T, d});
  Var back = reshape(linear(back_rows, m.proj_out_W, m.proj_out_b), {B, T, feat});
  Var planes = reshape(permute(back, {0, 2, 1}), {B, 2 * c_last, fb, T});
  cur = {slice(planes, 1, 0, c_last), slice(planes, 1, c_last, c_last)};

  for (int i = D - 1; i >= 0; --i) {
    const DecoderStage& st = m.decoder[i];
    CVar skip = st.skip.apply(enc_outs[i]);
    CVar cat = {concat({cur.re, skip.re}, 1), concat({cur.im, skip.im}, 1)};
    CVar y = crop_time(st.tconv.apply(cat), T);
    if (st.has_norm) y = complex_activation(complex_norm(y, st.norm));
    cur = y;
  }

  if (m.cfg.output_mode == OutputMode::Mask) {
    // complex ratio mask: output = head * input (complex product)
    Var re = sub(mul(cur.re, x.re), mul(cur.im, x.im));
    Var im = add(mul(cur.re, x.im), mul(cur.im, x.re));
    cur = {re, im};
  }
  return cur;
}

ComplexSpectrogram model_forward(const Model& m, const ComplexSpectrogram& s) {
  const StftConfig& want = m.cfg.stft;
  if (s.config.frame_len != want.frame_len || s.config.hop != want.hop ||
      s.config.fft_size != want.fft_size || s.config.center_padding != want.center_padding)
    throw ConfigError("spectrogram was not produced under the model's STFT settings");
  const int F = s.n_bins(), T = s.n_frames();
  CVar x = {constant(Tensor::from({1, 1, F, T}, s.real.data)),
            constant(Tensor::from({1, 1, F, T}, s.imag.data))};
  CVar y = model_forward(m, x);
  ComplexSpectrogram out;
  out.config = s.config;
  out.original_length = s.original_length;
  out.real = Tensor::from({F, T}, y.re->val.data);
  out.imag = Tensor::from({F, T}, y.im->val.data);
  return out;
}

Waveform enhance(const Model& m, const Waveform& w) {
  ComplexSpectrogram s = stft(w, m.cfg.stft);
  ComplexSpectrogram y = model_forward(m, s);
  Waveform out = istft(y, static_cast<int64_t>(w.samples.size()));
  out.sample_rate = w.sample_rate;
  return out;
}

}  // namespace datcft

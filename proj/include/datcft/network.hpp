#pragma once

#include <string>
#include <vector>

#include "datcft/dat_rnn.hpp"
#include "datcft/ftb.hpp"
#include "datcft/stft.hpp"
#include "datcft/wav.hpp"

namespace datcft {

// base: FTB after every encoder block, standard complex convs
// f:    FTBs only after the first and last encoder blocks
// l:    f wiring with every conv replaced by its depthwise-separable form
enum class Variant { Base, F, L };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

// What the decoder head emits: the enhanced spectrum directly, or a complex
// ratio mask multiplied onto the input spectrum.
enum class OutputMode { Spectrum, Mask };

struct ModelConfig {
  Variant variant = Variant::Base;
  std::vector<int> encoder_channels = {16, 32, 64, 128, 128, 128};
  int kernel_f = 5, kernel_t = 2;
  int stride_f = 2, stride_t = 1;
  int datrnn_blocks = 2;
  int chunk_len = 32;
  int lstm_hidden = 64;
  int bottleneck_dim = 128;
  FtbOrder ftb_order = FtbOrder::AttentionFirst;
  MaskTarget mask_target = MaskTarget::InputFeatures;
  OutputMode output_mode = OutputMode::Spectrum;
  StftConfig stft;
  uint64_t seed = 1;

  int depth() const { return static_cast<int>(encoder_channels.size()); }
  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
  // calibrated preset sized to the published parameter budgets
  static ModelConfig reference(Variant v);
};

struct EncoderStage {
  ConvOrDsc conv;
  ComplexNormVars norm;
  bool has_ftb = false;
  FtbVars ftb;
};

struct DecoderStage {
  ConvOrDsc skip;   // 1x1 complex conv on the matching encoder output
  ConvOrDsc tconv;  // transposed conv, doubles frequency, restores channels
  bool has_norm = false;
  ComplexNormVars norm;
};

struct Model {
  ModelConfig cfg;
  std::vector<int> freq_dims;  // freq_dims[i] = bins entering stage i; back() = bottleneck bins
  std::vector<EncoderStage> encoder;
  std::vector<DecoderStage> decoder;  // decoder[i] mirrors encoder[i]
  Var proj_in_W, proj_in_b;           // bottleneck features -> d
  Var proj_out_W, proj_out_b;         // d -> bottleneck features
  std::vector<DatRnnBlockVars> blocks;

  ParamList params() const;
  int64_t count_params() const;
  int ftb_count() const;
  int standard_conv_count() const;  // complex convs NOT in depthwise-separable form
  int dsc_conv_count() const;
};

Model build_model(const ModelConfig& cfg);

// [B, 1, F, T] complex pair -> same shape
CVar model_forward(const Model& m, const CVar& x);
// checks the spectrogram was produced under the model's STFT settings
ComplexSpectrogram model_forward(const Model& m, const ComplexSpectrogram& s);

// stft -> forward -> istft at the original length
Waveform enhance(const Model& m, const Waveform& w);

}  // namespace datcft

#pragma once

#include <cstdint>
#include <string>

#include "datcft/autograd.hpp"
#include "datcft/tensor.hpp"
#include "datcft/wav.hpp"

namespace datcft {

enum class WindowKind { Hann };

struct StftConfig {
  int frame_len = 512;  // 32 ms at 16 kHz
  int hop = 256;        // 16 ms
  int fft_size = 512;
  WindowKind window = WindowKind::Hann;
  bool center_padding = true;

  void validate() const;
};

// One-sided complex spectrogram, planes shaped [n_bins, n_frames].
struct ComplexSpectrogram {
  Tensor real;
  Tensor imag;
  StftConfig config;
  int64_t original_length = 0;

  int n_bins() const { return real.shape.empty() ? 0 : real.shape[0]; }
  int n_frames() const { return real.ndim() < 2 ? 0 : real.shape[1]; }
};

// periodic window of length n (suitable for overlap-add analysis)
std::vector<double> make_window(WindowKind kind, int n);

ComplexSpectrogram stft(const Waveform& w, const StftConfig& cfg);

// Weighted overlap-add inverse with per-sample window-energy normalization;
// output truncated or zero-padded to target_len.
Waveform istft(const ComplexSpectrogram& s, int64_t target_len);

// Differentiable inverse for training: sr/si are [n_bins, n_frames] graph
// nodes; returns the time signal [target_len].
Var istft_op(const Var& sr, const Var& si, const StftConfig& cfg, int64_t target_len);

// simple binary container (dims + config header, row-major float64 planes)
void save_spectrogram(const std::string& path, const ComplexSpectrogram& s);
ComplexSpectrogram load_spectrogram(const std::string& path);

// log-magnitude rendering, dB floor -80 relative to peak, low bins at the
// bottom of the image
void save_spectrogram_png(const std::string& path, const ComplexSpectrogram& s);

}  // namespace datcft

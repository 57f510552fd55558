#pragma once

#include <string>
#include <vector>

#include "datcft/errors.hpp"

namespace datcft {

struct Waveform {
  std::vector<double> samples;
  int sample_rate = 16000;

  double duration_s() const {
    return static_cast<double>(samples.size()) / static_cast<double>(sample_rate);
  }
};

enum class WavEncoding { Pcm16, Float32 };

// Mono WAV only.  PCM16 samples are normalized by 1/32768; float32 is read
// as-is.  Each failure mode raises WavError with a distinct fault tag.
Waveform load_wav(const std::string& path);
void save_wav(const std::string& path, const Waveform& w, WavEncoding enc = WavEncoding::Pcm16);

}  // namespace datcft

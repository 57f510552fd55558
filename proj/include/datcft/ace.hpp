#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "datcft/tensor.hpp"
#include "datcft/wav.hpp"

namespace datcft {

// n-of-m filterbank stimulation strategy.  Electrode 1 is the most apical
// (lowest band); electrode n_electrodes the most basal.  Defaults follow
// common clinical fittings; every knob is a config field.
struct AceConfig {
  int n_electrodes = 22;
  int n_maxima = 8;
  double channel_rate_hz = 900.0;  // per selected channel
  int fft_size = 128;              // analysis FFT at 16 kHz
  int first_bin = 2;               // lowest FFT bin feeding a band
  std::vector<int> band_bins;      // FFT bins per band, apex to base
  double t_level = 100.0;          // threshold, clinical units
  double c_level = 200.0;          // comfort, clinical units
  double base_level = 0.0156;      // envelopes below emit no pulse
  double saturation_level = 0.5859;
  double rho = 416.2;              // loudness growth steepness
  int sample_rate = 16000;

  void validate() const;
  double total_rate_hz() const { return channel_rate_hz * n_maxima; }
  // n_electrodes + 1 strictly increasing edges in Hz (188..7938 by default)
  std::vector<double> band_edges_hz() const;
  double band_center_hz(int band) const;
};

// 22 bands over FFT bins 2..63: nine single-bin bands below ~1.3 kHz, then
// widths growing roughly logarithmically
AceConfig default_ace_config();

struct AceEnvelopes {
  Tensor env;                        // [n_electrodes, n_frames], normalized
  std::vector<int64_t> frame_start;  // sample index of each analysis frame
};

// Hann-windowed short-FFT filterbank at the channel frame rate; per-band
// envelope is the root-sum-square of its bin magnitudes, normalized so a
// full-scale tone at a bin center reads ~1.0.
AceEnvelopes ace_envelopes(const Waveform& w, const AceConfig& cfg);

// Per frame, marks exactly the n largest envelopes (ties go to the lower
// electrode index).  Returns a 0/1 matrix shaped like env.
Tensor select_maxima(const Tensor& env, int n);

// Logarithmic loudness growth: nullopt below base_level, C_level at or above
// saturation, T + (C-T)*log(1+rho*x)/log(1+rho) in between.
std::optional<double> loudness_map(double env, const AceConfig& cfg);

struct Pulse {
  double time_s = 0;
  int electrode = 0;  // 1-based, 1 = apex
  double amplitude = 0;
};

struct Electrodogram {
  std::vector<Pulse> pulses;  // time-ordered
  double duration_s = 0;
  int n_frames = 0;
  AceConfig config;
};

// envelopes -> n-of-m selection -> loudness map -> pulse train; within each
// frame the selected electrodes fire base to apex at the total rate
Electrodogram ace_process(const Waveform& w, const AceConfig& cfg);

void save_electrodogram_csv(const Electrodogram& eg, const std::string& path);

// Raster PNG: x = time, y = electrode with the apex on the bottom row,
// brightness follows amplitude between T and C levels.
void render_electrodogram(const Electrodogram& eg, const std::string& path, int width = 960,
                          int height = 352);

// Noise-band vocoder: each electrode's pulse amplitudes are mapped back
// through the inverse loudness growth to envelopes that modulate a
// band-limited noise carrier; carriers are summed.
Waveform vocode(const Electrodogram& eg);

}  // namespace datcft

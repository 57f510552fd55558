#pragma once

#include <string>
#include <vector>

#include "datcft/network.hpp"
#include "datcft/signal.hpp"
#include "datcft/stft.hpp"

namespace datcft {

// Scale-invariant signal-to-distortion ratio in dB.  The estimate is
// projected onto the reference; the ratio of projected power to residual
// power is clamped to [-60, +60] dB so degenerate pairs stay finite.
double sisdr_db(const std::vector<double>& ref, const std::vector<double>& est);
double sisdr_db(const Waveform& ref, const Waveform& est);

// Short-time objective intelligibility in [0, 1]: both signals are brought
// to 10 kHz, silent frames are removed by a 40 dB energy gate on the
// reference, and clipped normalized correlations of one-third-octave band
// envelopes are averaged over 384 ms segments.
double stoi_score(const Waveform& ref, const Waveform& est);

// Log-spectral distance in dB: RMS over bins of the 20*log10 magnitude
// difference, averaged over frames.
double lsd_db(const ComplexSpectrogram& ref, const ComplexSpectrogram& est);

struct MetricRow {
  std::string noise_kind;
  double snr_db = 0.0;
  std::string system;  // "noisy" or "enhanced"
  int n = 0;           // utterances averaged into this row
  double sisdr_db = 0.0;
  double stoi = 0.0;
  double lsd_db = 0.0;
};

struct MetricReport {
  std::vector<MetricRow> rows;   // one per (noise_kind, snr_db, system)
  std::vector<MetricRow> means;  // one per system, averaged over every utterance
  std::string to_csv() const;   // pesq column left empty for external tools
  std::string to_json() const;
  bool has_nan() const;
  void save_csv(const std::string& path) const;
  void save_json(const std::string& path) const;
};

// Runs every recipe through the model and scores both the untouched noisy
// mixture and the enhanced output against the clean reference.
MetricReport evaluate_grid(const Model& m, const std::vector<Utterance>& corpus,
                           const std::vector<MixRecipe>& recipes);

}  // namespace datcft

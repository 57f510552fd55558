#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "datcft/rng.hpp"
#include "datcft/wav.hpp"

namespace datcft {

enum class NoiseKind { White, SpeechShaped, BabbleSynth, CarSynth, File };

std::string to_string(NoiseKind k);
NoiseKind noise_kind_from_string(const std::string& s);

struct MixRecipe {
  std::string id;         // unique mixture id
  std::string clean_id;   // utterance id within the corpus
  NoiseKind noise_kind = NoiseKind::White;
  std::string noise_path;  // only for NoiseKind::File
  double snr_db = 0.0;
  uint64_t seed = 0;
};

struct Utterance {
  std::string id;
  Waveform audio;
};

// Band-limited windowed-sinc resampling; identical rates pass through
// bit-exactly.  Downsampling applies the anti-alias cutoff implicitly by
// stretching the kernel.
Waveform resample(const Waveform& w, int target_rate);

struct MixResult {
  Waveform noisy;
  Waveform scaled_noise;
  double gain = 0.0;
  size_t noise_offset = 0;
};

// Scales a seeded random crop of `noise` so that 10*log10(P_clean/P_noise)
// equals snr_db, then adds it to `clean`.
MixResult mix_at_snr(const Waveform& clean, const Waveform& noise, double snr_db, uint64_t seed);

// Deterministic harmonic pseudo-speech: pitch-modulated harmonic stack with
// formant-like envelope and syllabic amplitude modulation, 2-3 s at 16 kHz.
std::vector<Utterance> make_synthetic_corpus(int n_utterances, uint64_t seed);

// Synthetic noise generators at 16 kHz.  `corpus` is only consulted for
// SpeechShaped (spectral envelope); pass nullptr to have one synthesized.
Waveform make_noise(NoiseKind kind, size_t n_samples, uint64_t seed,
                    const std::vector<Utterance>* corpus = nullptr);

inline const std::vector<double>& train_snr_grid_db() {
  static const std::vector<double> g{-2, 0, 2, 4, 6, 8, 10, 12, 14};
  return g;
}
inline const std::vector<double>& test_snr_grid_db() {
  static const std::vector<double> g{-5, 0, 5};
  return g;
}

// Cross product utterances x noise kinds x SNR grid, with one derived seed
// per recipe.
std::vector<MixRecipe> build_training_grid(const std::vector<Utterance>& corpus,
                                           const std::vector<NoiseKind>& noise_kinds,
                                           uint64_t seed);
std::vector<MixRecipe> build_test_grid(const std::vector<Utterance>& corpus,
                                       const std::vector<NoiseKind>& noise_kinds, uint64_t seed);

struct RealizedMix {
  Waveform clean;
  Waveform noisy;
};

// Materializes one recipe: synthesizes (or loads) the noise, crops and scales
// it to the requested SNR, and adds it to the clean utterance.
RealizedMix realize_mix(const Utterance& clean, const MixRecipe& recipe);

// JSON-lines manifest: one {id, clean_path, noise_kind, snr_db, seed} object
// per row.  clean_path is formed as `<dir>/<clean_id>.wav`.
void write_manifest(const std::string& path, const std::vector<MixRecipe>& recipes,
                    const std::string& clean_dir);
std::vector<MixRecipe> read_manifest(const std::string& path);

// exposed for oracle-style tests
double mean_power(const std::vector<double>& x);

}  // namespace datcft

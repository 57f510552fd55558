#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "datcft/errors.hpp"
#include "datcft/fft.hpp"
#include "datcft/signal.hpp"
#include "datcft/wav.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace datcft;

namespace {

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

// FFT peak frequency with parabolic interpolation on log magnitude
double spectral_peak_hz(const std::vector<double>& x, int rate) {
  const int nfft = next_pow2(static_cast<int>(x.size()) * 2);
  std::vector<double> buf(static_cast<size_t>(nfft), 0.0);
  for (size_t i = 0; i < x.size(); ++i) {
    const double w = 0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) / static_cast<double>(x.size()));
    buf[i] = x[i] * w;
  }
  auto bins = rfft(buf);
  size_t peak = 1;
  for (size_t b = 1; b + 1 < bins.size(); ++b)
    if (std::abs(bins[b]) > std::abs(bins[peak])) peak = b;
  const double l = std::log(std::abs(bins[peak - 1]) + 1e-300);
  const double c = std::log(std::abs(bins[peak]) + 1e-300);
  const double r = std::log(std::abs(bins[peak + 1]) + 1e-300);
  const double denom = l - 2 * c + r;
  const double delta = std::fabs(denom) < 1e-12 ? 0.0 : 0.5 * (l - r) / denom;
  return (static_cast<double>(peak) + delta) * rate / nfft;
}

}  // namespace

TEST_CASE("wav round trip pcm16 and float32") {
  Rng rng(3);
  Waveform w;
  w.sample_rate = 16000;
  w.samples.resize(1000);
  for (auto& v : w.samples) v = 0.8 * rng.uniform(-1, 1);

  const auto p16 = tmp_path("dc_test_pcm16.wav");
  save_wav(p16, w, WavEncoding::Pcm16);
  auto r16 = load_wav(p16);
  CHECK(r16.sample_rate == 16000);
  REQUIRE(r16.samples.size() == w.samples.size());
  for (size_t i = 0; i < w.samples.size(); ++i)
    CHECK(std::fabs(r16.samples[i] - w.samples[i]) <= 0.5 / 32768.0 + 1e-12);

  const auto pf = tmp_path("dc_test_f32.wav");
  save_wav(pf, w, WavEncoding::Float32);
  auto rf = load_wav(pf);
  REQUIRE(rf.samples.size() == w.samples.size());
  for (size_t i = 0; i < w.samples.size(); ++i)
    CHECK(std::fabs(rf.samples[i] - w.samples[i]) <= 1e-7);
  std::remove(p16.c_str());
  std::remove(pf.c_str());
}

TEST_CASE("wav digital silence and full-scale normalization") {
  Waveform w;
  w.sample_rate = 16000;
  w.samples.assign(16000, 0.0);
  const auto p = tmp_path("dc_test_silence.wav");
  save_wav(p, w);
  auto r = load_wav(p);
  CHECK(r.sample_rate == 16000);
  REQUIRE(r.samples.size() == 16000);
  for (double v : r.samples) CHECK(v == 0.0);

  // full-scale PCM16 maps to 32767/32768
  Waveform full;
  full.sample_rate = 16000;
  full.samples.assign(100, 1.0);
  save_wav(p, full);
  auto rf = load_wav(p);
  for (double v : rf.samples) CHECK(v == doctest::Approx(32767.0 / 32768.0).epsilon(1e-9));
  std::remove(p.c_str());
}

TEST_CASE("wav error taxonomy") {
  CHECK_THROWS_AS(load_wav("/nonexistent/nope.wav"), WavError);
  try {
    load_wav("/nonexistent/nope.wav");
  } catch (const WavError& e) {
    CHECK(e.fault == WavFault::MissingFile);
  }

  // stereo file: craft a 2-channel header
  const auto p = tmp_path("dc_test_stereo.wav");
  {
    Waveform w;
    w.sample_rate = 8000;
    w.samples.assign(10, 0.1);
    save_wav(p, w);
    std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(22);  // num_channels field
    const uint16_t two = 2;
    f.write(reinterpret_cast<const char*>(&two), 2);
  }
  try {
    load_wav(p);
    CHECK(false);
  } catch (const WavError& e) {
    CHECK(e.fault == WavFault::Multichannel);
  }

  // 24-bit PCM: unsupported encoding
  {
    Waveform w;
    w.sample_rate = 8000;
    w.samples.assign(10, 0.1);
    save_wav(p, w);
    std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(34);  // bits_per_sample field
    const uint16_t b24 = 24;
    f.write(reinterpret_cast<const char*>(&b24), 2);
  }
  try {
    load_wav(p);
    CHECK(false);
  } catch (const WavError& e) {
    CHECK(e.fault == WavFault::UnsupportedEncoding);
  }

  // garbage bytes: malformed
  {
    std::ofstream f(p, std::ios::binary);
    f << "this is not a wav file at all, nowhere near";
  }
  try {
    load_wav(p);
    CHECK(false);
  } catch (const WavError& e) {
    CHECK(e.fault == WavFault::Malformed);
  }
  std::remove(p.c_str());
}

TEST_CASE("resample identity, length contract, spectral fidelity") {
  Rng rng(9);
  Waveform w;
  w.sample_rate = 16000;
  w.samples.resize(5000);
  for (auto& v : w.samples) v = rng.uniform(-1, 1);
  auto same = resample(w, 16000);
  CHECK(same.samples == w.samples);  // bit-identical pass-through

  Waveform w25;
  w25.sample_rate = 25000;
  w25.samples.assign(25000, 0.0);
  for (size_t i = 0; i < w25.samples.size(); ++i)
    w25.samples[i] = std::sin(2.0 * M_PI * 440.0 * static_cast<double>(i) / 25000.0);
  auto w16 = resample(w25, 16000);
  CHECK(w16.sample_rate == 16000);
  CHECK(w16.samples.size() == 16000);

  // 1 kHz sine at 48 kHz -> 16 kHz: peak within 1 Hz
  Waveform s48;
  s48.sample_rate = 48000;
  s48.samples.resize(48000);
  for (size_t i = 0; i < s48.samples.size(); ++i)
    s48.samples[i] = std::sin(2.0 * M_PI * 1000.0 * static_cast<double>(i) / 48000.0);
  auto s16 = resample(s48, 16000);
  CHECK(std::fabs(spectral_peak_hz(s16.samples, 16000) - 1000.0) < 1.0);
}

TEST_CASE("resample round trip preserves a band-limited sine") {
  Waveform s;
  s.sample_rate = 16000;
  s.samples.resize(16000);
  for (size_t i = 0; i < s.samples.size(); ++i)
    s.samples[i] = 0.7 * std::sin(2.0 * M_PI * 440.0 * static_cast<double>(i) / 16000.0);
  auto up = resample(s, 24000);
  auto back = resample(up, 16000);
  REQUIRE(back.samples.size() == s.samples.size());
  // interior comparison (outside the filter's edge transient)
  double err = 0, ref = 0;
  for (size_t i = 512; i + 512 < s.samples.size(); ++i) {
    const double d = back.samples[i] - s.samples[i];
    err += d * d;
    ref += s.samples[i] * s.samples[i];
  }
  CHECK(std::sqrt(err / ref) < 0.01);
}

TEST_CASE("mix_at_snr gain arithmetic and achieved snr") {
  // equal powers at 0 dB -> unit gain
  Waveform c, n;
  c.sample_rate = n.sample_rate = 16000;
  c.samples.assign(1000, 0.5);
  n.samples.assign(1000, -0.5);
  auto m = mix_at_snr(c, n, 0.0, 1);
  CHECK(m.gain == doctest::Approx(1.0).epsilon(1e-12));

  // P_clean = 1, P_noise = 4 at 0 dB -> g = 0.5
  for (auto& v : c.samples) v = 1.0;
  for (auto& v : n.samples) v = 2.0;
  auto m2 = mix_at_snr(c, n, 0.0, 1);
  CHECK(m2.gain == doctest::Approx(0.5).epsilon(1e-12));

  // achieved SNR within 0.01 dB across the working range
  Rng rng(77);
  Waveform clean, noise;
  clean.sample_rate = noise.sample_rate = 16000;
  clean.samples.resize(8000);
  noise.samples.resize(12000);
  for (auto& v : clean.samples) v = rng.normal() * 0.2;
  for (auto& v : noise.samples) v = rng.normal() * 0.3;
  for (double snr : {-10.0, -5.0, -2.0, 0.0, 3.5, 5.0, 10.0, 14.0, 20.0}) {
    auto r = mix_at_snr(clean, noise, snr, 42);
    const double measured = 10.0 * std::log10(oracle::power_of(clean.samples) /
                                              oracle::power_of(r.scaled_noise.samples));
    CHECK(std::fabs(measured - snr) < 0.01);
    for (size_t i = 0; i < clean.samples.size(); ++i)
      CHECK(r.noisy.samples[i] == doctest::Approx(clean.samples[i] + r.scaled_noise.samples[i]));
  }

  // zero-power inputs are rejected
  Waveform z;
  z.sample_rate = 16000;
  z.samples.assign(1000, 0.0);
  CHECK_THROWS_AS(mix_at_snr(z, noise, 0.0, 1), NumericError);
  Waveform zn;
  zn.sample_rate = 16000;
  zn.samples.assign(noise.samples.size(), 0.0);
  CHECK_THROWS_AS(mix_at_snr(clean, zn, 0.0, 1), NumericError);
  // mismatched rates / too-short noise are config errors
  Waveform shortn = noise;
  shortn.samples.resize(100);
  CHECK_THROWS_AS(mix_at_snr(clean, shortn, 0.0, 1), ConfigError);
}

TEST_CASE("synthetic corpus determinism, lengths, band energy") {
  auto a = make_synthetic_corpus(10, 1234);
  auto b = make_synthetic_corpus(10, 1234);
  REQUIRE(a.size() == 10);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].id == b[i].id);
    CHECK(a[i].audio.samples == b[i].audio.samples);
    CHECK(a[i].audio.sample_rate == 16000);
    CHECK(a[i].audio.samples.size() >= 32000);
    CHECK(a[i].audio.samples.size() <= 48000);
  }
  auto c = make_synthetic_corpus(2, 999);
  CHECK(c[0].audio.samples != a[0].audio.samples);

  // nonzero energy in the 100-4000 Hz band
  for (const auto& u : a) {
    const int nfft = next_pow2(static_cast<int>(u.audio.samples.size()));
    std::vector<double> buf(static_cast<size_t>(nfft), 0.0);
    std::copy(u.audio.samples.begin(), u.audio.samples.end(), buf.begin());
    auto bins = rfft(buf);
    double band = 0, total = 0;
    for (size_t k = 0; k < bins.size(); ++k) {
      const double f = static_cast<double>(k) * 16000.0 / nfft;
      const double e = std::norm(bins[k]);
      total += e;
      if (f >= 100.0 && f <= 4000.0) band += e;
    }
    CHECK(band > 0.5 * total);  // dominated by the speech band
  }
}

TEST_CASE("noise generators deterministic with sensible spectra") {
  for (NoiseKind k : {NoiseKind::White, NoiseKind::SpeechShaped, NoiseKind::BabbleSynth,
                      NoiseKind::CarSynth}) {
    auto n1 = make_noise(k, 16000, 5);
    auto n2 = make_noise(k, 16000, 5);
    CHECK(n1.samples == n2.samples);
    CHECK(std::sqrt(oracle::power_of(n1.samples)) == doctest::Approx(0.1).epsilon(0.05));
  }
  // car noise concentrates energy at low frequency
  auto car = make_noise(NoiseKind::CarSynth, 32768, 5);
  auto bins = rfft(car.samples);
  double low = 0, high = 0;
  for (size_t kk = 1; kk < bins.size(); ++kk) {
    const double f = static_cast<double>(kk) * 16000.0 / 32768.0;
    (f < 400.0 ? low : high) += std::norm(bins[kk]);
  }
  CHECK(low > 10.0 * high);
  CHECK_THROWS_AS(make_noise(NoiseKind::File, 100, 1), ConfigError);
}

TEST_CASE("training and test grids") {
  auto corpus = make_synthetic_corpus(2, 42);
  auto grid = build_training_grid(corpus, {NoiseKind::White}, 7);
  CHECK(grid.size() == 2 * 9);
  std::vector<double> snrs;
  for (const auto& r : grid)
    if (r.clean_id == corpus[0].id) snrs.push_back(r.snr_db);
  CHECK(snrs == std::vector<double>{-2, 0, 2, 4, 6, 8, 10, 12, 14});

  auto test = build_test_grid(corpus, {NoiseKind::White, NoiseKind::CarSynth}, 7);
  CHECK(test.size() == 2 * 2 * 3);
  for (const auto& r : test)
    CHECK((r.snr_db == -5 || r.snr_db == 0 || r.snr_db == 5));

  auto empty = build_training_grid(corpus, {}, 7);
  CHECK(empty.empty());

  // recipe seeds deterministic and distinct
  auto grid2 = build_training_grid(corpus, {NoiseKind::White}, 7);
  for (size_t i = 0; i < grid.size(); ++i) CHECK(grid[i].seed == grid2[i].seed);
  CHECK(grid[0].seed != grid[1].seed);
}

TEST_CASE("manifest round trip") {
  auto corpus = make_synthetic_corpus(1, 1);
  auto grid = build_training_grid(corpus, {NoiseKind::SpeechShaped}, 3);
  const auto p = tmp_path("dc_test_manifest.jsonl");
  write_manifest(p, grid, "clean_dir");
  auto back = read_manifest(p);
  REQUIRE(back.size() == grid.size());
  for (size_t i = 0; i < grid.size(); ++i) {
    CHECK(back[i].id == grid[i].id);
    CHECK(back[i].clean_id == grid[i].clean_id);
    CHECK(back[i].noise_kind == grid[i].noise_kind);
    CHECK(back[i].snr_db == grid[i].snr_db);
    CHECK(back[i].seed == grid[i].seed);
  }
  std::remove(p.c_str());
}

#include "datcft/signal.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "datcft/errors.hpp"
#include "datcft/fft.hpp"
#include "json.hpp"

namespace datcft {

namespace {

constexpr int kSampleRate = 16000;
constexpr double kPi = 3.14159265358979323846;

double bessel_i0(double x) {
  // power series; converges quickly for the argument range the window uses
  double sum = 1.0, term = 1.0;
  const double q = x * x / 4.0;
  for (int k = 1; k < 64; ++k) {
    term *= q / (static_cast<double>(k) * k);
    sum += term;
    if (term < 1e-16 * sum) break;
  }
  return sum;
}

// Kaiser window lookup over v in [0,1], shared by every resample call.
const std::vector<double>& kaiser_table() {
  static const std::vector<double> table = [] {
    constexpr double beta = 9.0;
    const double norm = 1.0 / bessel_i0(beta);
    std::vector<double> t(8193);
    for (size_t i = 0; i < t.size(); ++i) {
      const double v = static_cast<double>(i) / 8192.0;
      t[i] = bessel_i0(beta * std::sqrt(std::max(0.0, 1.0 - v * v))) * norm;
    }
    return t;
  }();
  return table;
}

double kaiser_win(double v) {
  if (v >= 1.0) return 0.0;
  const auto& t = kaiser_table();
  const double p = v * 8192.0;
  const size_t i = static_cast<size_t>(p);
  const double fr = p - static_cast<double>(i);
  return t[i] * (1.0 - fr) + t[i + 1] * fr;
}

}  // namespace

double mean_power(const std::vector<double>& x) {
  double p = 0.0;
  for (double v : x) p += v * v;
  return x.empty() ? 0.0 : p / static_cast<double>(x.size());
}

Waveform resample(const Waveform& w, int target_rate) {
  if (target_rate <= 0) throw ConfigError("resample: target rate must be positive");
  if (w.samples.empty()) throw ConfigError("resample: empty waveform");
  if (target_rate == w.sample_rate) return w;

  const double ratio = static_cast<double>(target_rate) / w.sample_rate;
  const double fc = 0.97 * std::min(1.0, ratio);  // fraction of input Nyquist
  const int half = static_cast<int>(std::ceil(32.0 / std::min(1.0, ratio)));
  const long n_in = static_cast<long>(w.samples.size());
  const long n_out = std::max<long>(1, std::lround(static_cast<double>(n_in) * ratio));

  auto mirrored = [&](long i) -> double {
    // symmetric reflection keeps edge behavior smooth
    while (i < 0 || i >= n_in) {
      if (i < 0) i = -i;
      if (i >= n_in) i = 2 * (n_in - 1) - i;
      if (n_in == 1) return w.samples[0];
    }
    return w.samples[static_cast<size_t>(i)];
  };

  Waveform out;
  out.sample_rate = target_rate;
  out.samples.resize(static_cast<size_t>(n_out));
  for (long j = 0; j < n_out; ++j) {
    const double t = static_cast<double>(j) / ratio;
    const long i0 = static_cast<long>(std::ceil(t)) - half;
    const long i1 = static_cast<long>(std::floor(t)) + half;
    double acc = 0.0;
    for (long i = i0; i <= i1; ++i) {
      const double u = t - static_cast<double>(i);
      const double s = std::fabs(u) < 1e-12 ? fc : std::sin(kPi * fc * u) / (kPi * u);
      acc += mirrored(i) * s * kaiser_win(std::fabs(u) / half);
    }
    out.samples[static_cast<size_t>(j)] = acc;
  }
  return out;
}

MixResult mix_at_snr(const Waveform& clean, const Waveform& noise, double snr_db, uint64_t seed) {
  if (clean.sample_rate != noise.sample_rate)
    throw ConfigError("mix_at_snr: sample rate mismatch");
  if (noise.samples.size() < clean.samples.size())
    throw ConfigError("mix_at_snr: noise shorter than clean signal");
  if (!std::isfinite(snr_db)) throw ConfigError("mix_at_snr: non-finite snr");

  const size_t n = clean.samples.size();
  const size_t slack = noise.samples.size() - n;
  Rng rng(seed);
  const size_t offset = slack == 0 ? 0 : static_cast<size_t>(rng.fork("crop", 0).uniform_int(static_cast<int64_t>(slack) + 1));

  std::vector<double> crop(noise.samples.begin() + static_cast<long>(offset),
                           noise.samples.begin() + static_cast<long>(offset + n));
  const double p_clean = mean_power(clean.samples);
  const double p_noise = mean_power(crop);
  if (p_clean <= 0.0) throw NumericError("mix_at_snr: zero-power clean segment");
  if (p_noise <= 0.0) throw NumericError("mix_at_snr: zero-power noise segment");

  const double g = std::sqrt(p_clean / (p_noise * std::pow(10.0, snr_db / 10.0)));
  MixResult r;
  r.gain = g;
  r.noise_offset = offset;
  r.scaled_noise.sample_rate = clean.sample_rate;
  r.scaled_noise.samples.resize(n);
  r.noisy.sample_rate = clean.sample_rate;
  r.noisy.samples.resize(n);
  for (size_t i = 0; i < n; ++i) {
    r.scaled_noise.samples[i] = g * crop[i];
    r.noisy.samples[i] = clean.samples[i] + r.scaled_noise.samples[i];
  }
  return r;
}

namespace {

Waveform synth_utterance(Rng rng) {
  const double dur = rng.uniform(2.0, 3.0);
  const size_t n = static_cast<size_t>(std::lround(dur * kSampleRate));
  const double f0 = rng.uniform(90.0, 220.0);
  const double vib_rate = rng.uniform(4.0, 6.5);
  const double vib_depth = rng.uniform(0.01, 0.04);
  const double drift = rng.uniform(-0.08, 0.08);
  const double fmt_c[3] = {rng.uniform(300.0, 800.0), rng.uniform(1000.0, 2200.0),
                           rng.uniform(2400.0, 3400.0)};
  const double fmt_b[3] = {90.0, 140.0, 220.0};
  const double fmt_g[3] = {1.0, 0.6, 0.35};
  const double am_rate = rng.uniform(3.0, 6.0);
  const double am_depth = rng.uniform(0.4, 0.8);
  const double am_phase = rng.uniform(0.0, 2.0 * kPi);

  const int n_harm = std::max(3, static_cast<int>(4000.0 / (f0 * (1.0 + std::fabs(drift)))));
  std::vector<double> amp(static_cast<size_t>(n_harm));
  for (int h = 1; h <= n_harm; ++h) {
    const double f = h * f0;
    double env = 0.0;
    for (int m = 0; m < 3; ++m) {
      const double d = (f - fmt_c[m]) / fmt_b[m];
      env += fmt_g[m] / (1.0 + d * d);
    }
    amp[static_cast<size_t>(h - 1)] = env / std::sqrt(static_cast<double>(h));
  }

  Waveform w;
  w.sample_rate = kSampleRate;
  w.samples.resize(n);
  double phase = rng.uniform(0.0, 2.0 * kPi);
  double peak = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / kSampleRate;
    const double inst_f0 =
        f0 * (1.0 + vib_depth * std::sin(2.0 * kPi * vib_rate * t) + drift * (t / dur - 0.5));
    phase += 2.0 * kPi * inst_f0 / kSampleRate;
    double s = 0.0;
    for (int h = 1; h <= n_harm; ++h) s += amp[static_cast<size_t>(h - 1)] * std::sin(h * phase);
    const double am =
        (1.0 - am_depth) + am_depth * 0.5 * (1.0 + std::sin(2.0 * kPi * am_rate * t + am_phase));
    const double v = am * s + 0.002 * rng.normal();
    w.samples[i] = v;
    peak = std::max(peak, std::fabs(v));
  }
  if (peak > 0)
    for (auto& v : w.samples) v *= 0.5 / peak;
  return w;
}

std::string format_snr(double snr) {
  const long r = std::lround(snr);
  std::string s = std::to_string(std::labs(r));
  return (r < 0 ? "m" : "p") + s;
}

std::vector<MixRecipe> build_grid(const std::vector<Utterance>& corpus,
                                  const std::vector<NoiseKind>& noise_kinds,
                                  const std::vector<double>& snrs, uint64_t seed) {
  if (corpus.empty()) throw ConfigError("grid: empty corpus");
  std::vector<MixRecipe> out;
  out.reserve(corpus.size() * noise_kinds.size() * snrs.size());
  for (const auto& u : corpus)
    for (NoiseKind k : noise_kinds)
      for (double snr : snrs) {
        MixRecipe r;
        r.clean_id = u.id;
        r.noise_kind = k;
        r.snr_db = snr;
        r.id = u.id + "_" + to_string(k) + "_" + format_snr(snr);
        r.seed = splitmix64(seed ^ fnv1a(r.id.c_str()));
        out.push_back(std::move(r));
      }
  return out;
}

}  // namespace

std::vector<Utterance> make_synthetic_corpus(int n_utterances, uint64_t seed) {
  if (n_utterances < 1) throw ConfigError("make_synthetic_corpus: need at least one utterance");
  Rng root(seed);
  std::vector<Utterance> out;
  out.reserve(static_cast<size_t>(n_utterances));
  for (int i = 0; i < n_utterances; ++i) {
    Utterance u;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "utt_%04d", i);
    u.id = buf;
    u.audio = synth_utterance(root.fork("utt", i));
    out.push_back(std::move(u));
  }
  return out;
}

Waveform make_noise(NoiseKind kind, size_t n_samples, uint64_t seed,
                    const std::vector<Utterance>* corpus) {
  if (n_samples == 0) throw ConfigError("make_noise: zero length");
  Rng root(seed);
  Waveform w;
  w.sample_rate = kSampleRate;
  w.samples.assign(n_samples, 0.0);

  auto normalize_rms = [&](double target) {
    const double p = mean_power(w.samples);
    if (p > 0) {
      const double g = target / std::sqrt(p);
      for (auto& v : w.samples) v *= g;
    }
  };

  switch (kind) {
    case NoiseKind::White: {
      Rng r = root.fork("white", 0);
      for (auto& v : w.samples) v = 0.1 * r.normal();
      break;
    }
    case NoiseKind::CarSynth: {
      // leaky-integrated white (brown-ish slope) through a low-pass: rumble
      Rng r = root.fork("car", 0);
      double acc = 0.0, lp = 0.0;
      const double a = std::exp(-2.0 * kPi * 150.0 / kSampleRate);
      for (auto& v : w.samples) {
        acc = 0.999 * acc + r.normal();
        lp = a * lp + (1.0 - a) * acc;
        v = lp;
      }
      normalize_rms(0.1);
      break;
    }
    case NoiseKind::BabbleSynth: {
      for (int k = 0; k < 8; ++k) {
        Waveform stream = synth_utterance(root.fork("babble", k));
        Rng r = root.fork("babble_off", k);
        size_t pos = static_cast<size_t>(r.uniform_int(static_cast<int64_t>(stream.samples.size())));
        for (size_t i = 0; i < n_samples; ++i) {
          w.samples[i] += stream.samples[pos];
          if (++pos == stream.samples.size()) pos = 0;
        }
      }
      normalize_rms(0.1);
      break;
    }
    case NoiseKind::SpeechShaped: {
      // average 257-bin magnitude envelope of the corpus, imposed on white noise
      std::vector<Utterance> local;
      const std::vector<Utterance>* src = corpus;
      if (src == nullptr || src->empty()) {
        local = make_synthetic_corpus(4, splitmix64(seed ^ 0x5353u));
        src = &local;
      }
      constexpr int kFrame = 512;
      std::vector<double> env(kFrame / 2 + 1, 0.0);
      std::vector<double> win(kFrame);
      for (int i = 0; i < kFrame; ++i) win[static_cast<size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / kFrame);
      size_t n_frames = 0;
      for (const auto& u : *src) {
        for (size_t start = 0; start + kFrame <= u.audio.samples.size(); start += kFrame / 2) {
          std::vector<double> frame(static_cast<size_t>(kFrame));
          for (int i = 0; i < kFrame; ++i)
            frame[static_cast<size_t>(i)] = u.audio.samples[start + static_cast<size_t>(i)] * win[static_cast<size_t>(i)];
          auto bins = rfft(frame);
          for (size_t b = 0; b < env.size(); ++b) env[b] += std::abs(bins[b]);
          ++n_frames;
        }
      }
      for (auto& e : env) e /= std::max<size_t>(1, n_frames);
      // shape a white buffer in the frequency domain
      Rng r = root.fork("ssn", 0);
      const int nfft = next_pow2(static_cast<int>(n_samples));
      std::vector<double> white(static_cast<size_t>(nfft));
      for (auto& v : white) v = r.normal();
      auto bins = rfft(white);
      for (size_t b = 0; b < bins.size(); ++b) {
        const double pos = static_cast<double>(b) * kFrame / nfft;  // envelope-bin coordinate
        const size_t i0 = std::min(env.size() - 2, static_cast<size_t>(pos));
        const double fr = std::min(1.0, pos - static_cast<double>(i0));
        bins[b] *= env[i0] * (1.0 - fr) + env[i0 + 1] * fr;
      }
      auto shaped = irfft(bins, nfft);
      std::copy_n(shaped.begin(), n_samples, w.samples.begin());
      normalize_rms(0.1);
      break;
    }
    case NoiseKind::File:
      throw ConfigError("make_noise: file-backed noise must be loaded, not synthesized");
  }
  return w;
}

std::string to_string(NoiseKind k) {
  switch (k) {
    case NoiseKind::White: return "white";
    case NoiseKind::SpeechShaped: return "speech_shaped";
    case NoiseKind::BabbleSynth: return "babble_synth";
    case NoiseKind::CarSynth: return "car_synth";
    case NoiseKind::File: return "file";
  }
  return "white";
}

NoiseKind noise_kind_from_string(const std::string& s) {
  if (s == "white") return NoiseKind::White;
  if (s == "speech_shaped") return NoiseKind::SpeechShaped;
  if (s == "babble_synth") return NoiseKind::BabbleSynth;
  if (s == "car_synth") return NoiseKind::CarSynth;
  if (s == "file") return NoiseKind::File;
  throw ConfigError("unknown noise kind: " + s);
}

std::vector<MixRecipe> build_training_grid(const std::vector<Utterance>& corpus,
                                           const std::vector<NoiseKind>& noise_kinds,
                                           uint64_t seed) {
  return build_grid(corpus, noise_kinds, train_snr_grid_db(), seed);
}

std::vector<MixRecipe> build_test_grid(const std::vector<Utterance>& corpus,
                                       const std::vector<NoiseKind>& noise_kinds, uint64_t seed) {
  return build_grid(corpus, noise_kinds, test_snr_grid_db(), splitmix64(seed ^ 0x7e57u));
}

RealizedMix realize_mix(const Utterance& clean, const MixRecipe& recipe) {
  const size_t margin = clean.audio.sample_rate / 2;  // room for a random crop
  Waveform noise;
  if (recipe.noise_kind == NoiseKind::File) {
    noise = load_wav(recipe.noise_path);
    if (noise.sample_rate != clean.audio.sample_rate)
      noise = resample(noise, clean.audio.sample_rate);
  } else {
    noise = make_noise(recipe.noise_kind, clean.audio.samples.size() + margin, recipe.seed);
  }
  RealizedMix out;
  out.clean = clean.audio;
  out.noisy = mix_at_snr(clean.audio, noise, recipe.snr_db, recipe.seed).noisy;
  return out;
}

void write_manifest(const std::string& path, const std::vector<MixRecipe>& recipes,
                    const std::string& clean_dir) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write manifest: " + path);
  for (const auto& r : recipes) {
    nlohmann::json j;
    j["id"] = r.id;
    j["clean_path"] = clean_dir + "/" + r.clean_id + ".wav";
    j["noise_kind"] = to_string(r.noise_kind);
    if (r.noise_kind == NoiseKind::File) j["noise_path"] = r.noise_path;
    j["snr_db"] = r.snr_db;
    j["seed"] = r.seed;
    f << j.dump() << "\n";
  }
}

std::vector<MixRecipe> read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read manifest: " + path);
  std::vector<MixRecipe> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw IoError("manifest parse error at " + path + ":" + std::to_string(lineno) + ": " +
                    e.what());
    }
    MixRecipe r;
    r.id = j.at("id").get<std::string>();
    const std::string clean_path = j.at("clean_path").get<std::string>();
    const size_t slash = clean_path.find_last_of('/');
    std::string base = slash == std::string::npos ? clean_path : clean_path.substr(slash + 1);
    if (base.size() > 4 && base.substr(base.size() - 4) == ".wav") base.resize(base.size() - 4);
    r.clean_id = base;
    r.noise_kind = noise_kind_from_string(j.at("noise_kind").get<std::string>());
    if (j.contains("noise_path")) r.noise_path = j["noise_path"].get<std::string>();
    r.snr_db = j.at("snr_db").get<double>();
    r.seed = j.at("seed").get<uint64_t>();
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace datcft

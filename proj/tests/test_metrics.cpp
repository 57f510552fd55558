#include "datcft/metrics.hpp"

#include <cmath>

#include "datcft/errors.hpp"
#include "datcft/rng.hpp"
#include "doctest.h"
#include "json.hpp"
#include "oracles.hpp"

using namespace datcft;

namespace {

std::vector<double> random_signal(size_t n, uint64_t seed) {
  Rng rng(seed);
  std::vector<double> x(n);
  for (auto& v : x) v = rng.normal();
  return x;
}

// remove the component of n along ref, then scale so power(ref)/power(n)
// equals the requested ratio
std::vector<double> orthogonal_noise(const std::vector<double>& ref, double power_ratio,
                                     uint64_t seed) {
  std::vector<double> n = random_signal(ref.size(), seed);
  double nr = 0, rr = 0;
  for (size_t i = 0; i < ref.size(); ++i) {
    nr += n[i] * ref[i];
    rr += ref[i] * ref[i];
  }
  for (size_t i = 0; i < ref.size(); ++i) n[i] -= nr / rr * ref[i];
  double nn = 0;
  for (double v : n) nn += v * v;
  const double g = std::sqrt(rr / (power_ratio * nn));
  for (auto& v : n) v *= g;
  return n;
}

}  // namespace

TEST_CASE("si-sdr: perfect and scaled estimates hit the +60 dB cap") {
  std::vector<double> ref = random_signal(4000, 11);
  CHECK(sisdr_db(ref, ref) == 60.0);
  std::vector<double> scaled = ref;
  for (auto& v : scaled) v *= 2.5;
  CHECK(sisdr_db(ref, scaled) == 60.0);
}

TEST_CASE("si-sdr: scale invariance in the estimate") {
  std::vector<double> ref = random_signal(3000, 21);
  std::vector<double> est = ref;
  std::vector<double> bump = random_signal(3000, 22);
  for (size_t i = 0; i < est.size(); ++i) est[i] += 0.3 * bump[i];
  const double base = sisdr_db(ref, est);
  for (double a : {2.0, 0.5, -4.0}) {  // power-of-two scales stay bit-exact
    std::vector<double> e2 = est;
    for (auto& v : e2) v *= a;
    CHECK(sisdr_db(ref, e2) == base);
  }
  std::vector<double> e3 = est;
  for (auto& v : e3) v *= 3.7;
  CHECK(sisdr_db(ref, e3) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("si-sdr: orthogonal-noise closed form") {
  std::vector<double> ref = random_signal(5000, 31);
  for (double ratio : {10.0, 100.0, 4.0}) {
    std::vector<double> est = ref;
    std::vector<double> n = orthogonal_noise(ref, ratio, 32);
    for (size_t i = 0; i < est.size(); ++i) est[i] += n[i];
    CHECK(std::fabs(sisdr_db(ref, est) - 10.0 * std::log10(ratio)) <= 1e-6);
  }
}

TEST_CASE("si-sdr: degenerate inputs") {
  std::vector<double> ref = random_signal(1000, 41);
  CHECK_THROWS_AS(sisdr_db(ref, random_signal(999, 42)), ConfigError);
  CHECK_THROWS_AS(sisdr_db(std::vector<double>(1000, 0.0), ref), NumericError);
  CHECK(sisdr_db(ref, std::vector<double>(1000, 0.0)) == -60.0);
  // estimate orthogonal to the reference carries no target component at all
  CHECK(sisdr_db(ref, orthogonal_noise(ref, 1.0, 43)) == -60.0);
}

TEST_CASE("lsd: identity, constant ratio, symmetry, scalar oracle") {
  Rng rng(51);
  StftConfig cfg;
  Waveform w;
  w.sample_rate = 16000;
  w.samples.resize(8000);
  for (auto& v : w.samples) v = rng.normal();
  ComplexSpectrogram a = stft(w, cfg);
  CHECK(lsd_db(a, a) == 0.0);

  ComplexSpectrogram b = a;
  for (auto& v : b.real.data) v *= 2.0;
  for (auto& v : b.imag.data) v *= 2.0;
  CHECK(lsd_db(a, b) == doctest::Approx(20.0 * std::log10(2.0)).epsilon(1e-4));
  CHECK(lsd_db(a, b) == lsd_db(b, a));
  // larger constant log-offset gives strictly larger distance
  ComplexSpectrogram c = a;
  for (auto& v : c.real.data) v *= 4.0;
  for (auto& v : c.imag.data) v *= 4.0;
  CHECK(lsd_db(a, c) > lsd_db(a, b));

  // element-wise recomputation on an unrelated random pair
  ComplexSpectrogram d = a;
  for (auto& v : d.real.data) v += 0.1 * rng.normal();
  for (auto& v : d.imag.data) v += 0.1 * rng.normal();
  const int F = a.n_bins(), T = a.n_frames();
  double want = 0;
  for (int t = 0; t < T; ++t) {
    double fr = 0;
    for (int f = 0; f < F; ++f) {
      const size_t i = static_cast<size_t>(f) * T + t;
      const double m1 = std::sqrt(a.real.data[i] * a.real.data[i] + a.imag.data[i] * a.imag.data[i]);
      const double m2 = std::sqrt(d.real.data[i] * d.real.data[i] + d.imag.data[i] * d.imag.data[i]);
      const double diff = 20.0 * std::log10(m1 + 1e-8) - 20.0 * std::log10(m2 + 1e-8);
      fr += diff * diff;
    }
    want += std::sqrt(fr / F);
  }
  want /= T;
  CHECK(lsd_db(a, d) == doctest::Approx(want).epsilon(1e-12));

  Waveform shorter = w;
  shorter.samples.resize(4000);
  CHECK_THROWS_AS(lsd_db(a, stft(shorter, cfg)), ConfigError);
}

TEST_CASE("stoi: self comparison scores at the top of the scale") {
  auto corpus = make_synthetic_corpus(1, 61);
  const Waveform& x = corpus[0].audio;
  CHECK(stoi_score(x, x) >= 0.99);
}

TEST_CASE("stoi: independent noise scores low") {
  auto corpus = make_synthetic_corpus(1, 71);
  const Waveform& x = corpus[0].audio;
  Waveform n = make_noise(NoiseKind::White, x.samples.size(), 72);
  n.samples.resize(x.samples.size());
  CHECK(stoi_score(x, n) <= 0.3);
}

TEST_CASE("stoi: monotone non-increasing in noise level across the corpus") {
  auto corpus = make_synthetic_corpus(20, 81);
  int wins = 0;
  double mean_hi = 0, mean_lo = 0;
  for (size_t i = 0; i < corpus.size(); ++i) {
    const Waveform& clean = corpus[i].audio;
    Waveform noise = make_noise(NoiseKind::White, clean.samples.size() + 8000, 900 + i);
    const Waveform at10 = mix_at_snr(clean, noise, 10.0, 5000 + i).noisy;
    const Waveform at0 = mix_at_snr(clean, noise, 0.0, 5000 + i).noisy;
    const double s_hi = stoi_score(clean, at10);
    const double s_lo = stoi_score(clean, at0);
    mean_hi += s_hi;
    mean_lo += s_lo;
    if (s_hi >= s_lo) ++wins;
  }
  CHECK(wins >= 18);
  CHECK(mean_hi / 20.0 > mean_lo / 20.0);
}

TEST_CASE("stoi: rejects unusable inputs") {
  Waveform a, b;
  a.sample_rate = 16000;
  b.sample_rate = 8000;
  a.samples.assign(16000, 0.1);
  b.samples.assign(16000, 0.1);
  CHECK_THROWS_AS(stoi_score(a, b), ConfigError);
  Waveform tiny;
  tiny.sample_rate = 16000;
  tiny.samples.assign(3200, 0.1);  // 0.2 s: fewer frames than one segment
  CHECK_THROWS_AS(stoi_score(tiny, tiny), ConfigError);
}

TEST_CASE("evaluate_grid: per-condition rows, baselines, determinism") {
  ModelConfig cfg;
  cfg.encoder_channels = {2, 4};
  cfg.datrnn_blocks = 1;
  cfg.chunk_len = 4;
  cfg.lstm_hidden = 4;
  cfg.bottleneck_dim = 6;
  cfg.seed = 3;
  Model m = build_model(cfg);

  auto corpus = make_synthetic_corpus(1, 91);
  std::vector<MixRecipe> recipes;
  for (double snr : {0.0, 5.0}) {
    MixRecipe r;
    r.id = "m" + std::to_string(static_cast<int>(snr));
    r.clean_id = corpus[0].id;
    r.noise_kind = NoiseKind::White;
    r.snr_db = snr;
    r.seed = 17;
    recipes.push_back(r);
  }

  MetricReport rep = evaluate_grid(m, corpus, recipes);
  REQUIRE(rep.rows.size() == 4);  // 2 conditions x {noisy, enhanced}
  REQUIRE(rep.means.size() == 2);
  for (const auto& row : rep.rows) {
    CHECK(row.n == 1);
    CHECK(row.stoi >= 0.0);
    CHECK(row.stoi <= 1.0);
    CHECK(row.lsd_db >= 0.0);
    CHECK((row.system == "noisy" || row.system == "enhanced"));
  }
  CHECK(!rep.has_nan());

  // noisy baseline at 5 dB SNR should score around 5 dB SI-SDR
  bool found = false;
  for (const auto& row : rep.rows)
    if (row.system == "noisy" && row.snr_db == 5.0) {
      found = true;
      CHECK(row.sisdr_db > 2.0);
      CHECK(row.sisdr_db < 8.0);
    }
  CHECK(found);

  // schema and determinism
  const std::string csv = rep.to_csv();
  CHECK(csv.rfind("noise_kind,snr_db,system,n,sisdr_db,stoi,lsd_db,pesq\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);  // header + 4 rows + 2 means
  nlohmann::json j = nlohmann::json::parse(rep.to_json());
  CHECK(j["rows"].size() == 4);
  CHECK(j["means"].size() == 2);

  MetricReport rep2 = evaluate_grid(m, corpus, recipes);
  CHECK(rep.to_json() == rep2.to_json());

  CHECK_THROWS_AS(evaluate_grid(m, corpus, {}), ConfigError);
  std::vector<MixRecipe> bad = recipes;
  bad[0].clean_id = "nope";
  CHECK_THROWS_AS(evaluate_grid(m, corpus, bad), ConfigError);
}

#include "datcft/ace.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <numeric>

#include "datcft/errors.hpp"
#include "datcft/fft.hpp"
#include "datcft/png_image.hpp"
#include "datcft/rng.hpp"

namespace datcft {

namespace {

bool power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

}  // namespace

AceConfig default_ace_config() {
  AceConfig cfg;
  cfg.band_bins = {1, 1, 1, 1, 1, 1, 1, 1, 1, 2, 2, 2, 2, 3, 3, 4, 4, 5, 5, 6, 7, 8};
  return cfg;
}

void AceConfig::validate() const {
  if (n_electrodes < 1) throw ConfigError("ace: need at least one electrode");
  if (n_maxima < 1 || n_maxima > n_electrodes)
    throw ConfigError("ace: n_maxima must be in [1, n_electrodes]");
  if (static_cast<int>(band_bins.size()) != n_electrodes)
    throw ConfigError("ace: band table size must equal n_electrodes");
  for (int b : band_bins)
    if (b < 1) throw ConfigError("ace: every band needs at least one bin");
  if (!power_of_two(fft_size)) throw ConfigError("ace: fft_size must be a power of two");
  const int total = std::accumulate(band_bins.begin(), band_bins.end(), 0);
  if (first_bin < 0 || first_bin + total > fft_size / 2 + 1)
    throw ConfigError("ace: band table exceeds the FFT bin range");
  if (channel_rate_hz <= 0 || sample_rate <= 0) throw ConfigError("ace: rates must be positive");
  if (!(t_level < c_level)) throw ConfigError("ace: T level must lie below C level");
  if (!(base_level < saturation_level) || base_level < 0)
    throw ConfigError("ace: base level must lie below saturation");
  if (rho <= 0) throw ConfigError("ace: rho must be positive");
}

std::vector<double> AceConfig::band_edges_hz() const {
  const double df = static_cast<double>(sample_rate) / fft_size;
  std::vector<double> edges;
  edges.reserve(band_bins.size() + 1);
  int bin = first_bin;
  edges.push_back((bin - 0.5) * df);
  for (int b : band_bins) {
    bin += b;
    edges.push_back((bin - 0.5) * df);
  }
  return edges;
}

double AceConfig::band_center_hz(int band) const {
  const auto edges = band_edges_hz();
  return 0.5 * (edges[static_cast<size_t>(band)] + edges[static_cast<size_t>(band) + 1]);
}

AceEnvelopes ace_envelopes(const Waveform& w, const AceConfig& cfg) {
  cfg.validate();
  if (w.sample_rate != cfg.sample_rate) throw ConfigError("ace: sample rate mismatch");
  const int N = cfg.fft_size;
  std::vector<double> win(static_cast<size_t>(N));
  double win_sum = 0;
  for (int n = 0; n < N; ++n) {
    win[static_cast<size_t>(n)] = 0.5 * (1.0 - std::cos(2.0 * M_PI * n / N));
    win_sum += win[static_cast<size_t>(n)];
  }
  const double norm = win_sum / 2.0;  // a unit tone at a bin center reads ~1

  AceEnvelopes out;
  const int64_t len = static_cast<int64_t>(w.samples.size());
  for (int64_t k = 0;; ++k) {
    const int64_t start = std::llround(static_cast<double>(k) * cfg.sample_rate / cfg.channel_rate_hz);
    if (start + N > len) break;
    out.frame_start.push_back(start);
  }
  const int n_frames = static_cast<int>(out.frame_start.size());
  out.env = Tensor::zeros({cfg.n_electrodes, n_frames});

  std::vector<std::complex<double>> buf(static_cast<size_t>(N));
  for (int k = 0; k < n_frames; ++k) {
    const int64_t start = out.frame_start[static_cast<size_t>(k)];
    for (int n = 0; n < N; ++n)
      buf[static_cast<size_t>(n)] = w.samples[static_cast<size_t>(start + n)] * win[static_cast<size_t>(n)];
    fft_inplace(buf, false);
    int bin = cfg.first_bin;
    for (int e = 0; e < cfg.n_electrodes; ++e) {
      double acc = 0;
      for (int b = 0; b < cfg.band_bins[static_cast<size_t>(e)]; ++b, ++bin) {
        const double m = std::abs(buf[static_cast<size_t>(bin)]);
        acc += m * m;
      }
      out.env.at2(e, k) = std::sqrt(acc) / norm;
    }
  }
  return out;
}

Tensor select_maxima(const Tensor& env, int n) {
  if (env.ndim() != 2) throw ConfigError("select_maxima: expected [electrodes, frames]");
  const int E = env.dim(0), F = env.dim(1);
  if (n < 1 || n > E) throw ConfigError("select_maxima: n out of range");
  Tensor sel = Tensor::zeros(env.shape);
  std::vector<int> idx(static_cast<size_t>(E));
  for (int k = 0; k < F; ++k) {
    for (int e = 0; e < E; ++e) idx[static_cast<size_t>(e)] = e;
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
      const double va = env.at2(a, k), vb = env.at2(b, k);
      return va != vb ? va > vb : a < b;  // ties favor the apical electrode
    });
    for (int j = 0; j < n; ++j) sel.at2(idx[static_cast<size_t>(j)], k) = 1.0;
  }
  return sel;
}

std::optional<double> loudness_map(double env, const AceConfig& cfg) {
  if (env < cfg.base_level) return std::nullopt;
  if (env >= cfg.saturation_level) return cfg.c_level;
  const double v = (env - cfg.base_level) / (cfg.saturation_level - cfg.base_level);
  return cfg.t_level +
         (cfg.c_level - cfg.t_level) * std::log1p(cfg.rho * v) / std::log1p(cfg.rho);
}

Electrodogram ace_process(const Waveform& w, const AceConfig& cfg) {
  AceEnvelopes ae = ace_envelopes(w, cfg);
  const int n_frames = ae.env.ndim() == 2 ? ae.env.dim(1) : 0;
  Tensor sel = n_frames > 0 ? select_maxima(ae.env, cfg.n_maxima) : Tensor();

  Electrodogram eg;
  eg.config = cfg;
  eg.n_frames = n_frames;
  eg.duration_s = static_cast<double>(w.samples.size()) / cfg.sample_rate;
  for (int k = 0; k < n_frames; ++k) {
    const double frame_time = static_cast<double>(ae.frame_start[static_cast<size_t>(k)]) / cfg.sample_rate;
    int slot = 0;
    // base-to-apex stimulation order; sub-threshold slots stay idle but keep
    // their position in the timing cycle
    for (int e = cfg.n_electrodes - 1; e >= 0; --e) {
      if (sel.at2(e, k) == 0.0) continue;
      const auto amp = loudness_map(ae.env.at2(e, k), cfg);
      if (amp.has_value())
        eg.pulses.push_back({frame_time + slot / cfg.total_rate_hz(), e + 1, *amp});
      ++slot;
    }
  }
  return eg;
}

void save_electrodogram_csv(const Electrodogram& eg, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << "time_s,electrode,amplitude\n";
  f.precision(9);
  for (const auto& p : eg.pulses) f << p.time_s << ',' << p.electrode << ',' << p.amplitude << '\n';
}

void render_electrodogram(const Electrodogram& eg, const std::string& path, int width,
                          int height) {
  if (width < 64 || height < 64) throw ConfigError("render: canvas too small");
  const int ml = 28, mr = 8, mt = 8, mb = 20;  // margins leave room for the axes
  const int pw = width - ml - mr, ph = height - mt - mb;
  std::vector<uint8_t> img(static_cast<size_t>(width) * height, 0);
  auto put = [&](int x, int y, uint8_t v) {
    if (x >= 0 && x < width && y >= 0 && y < height)
      img[static_cast<size_t>(y) * width + x] = v;
  };
  for (int x = ml - 1; x < width - mr; ++x) {
    put(x, mt - 1, 96);
    put(x, height - mb, 96);
  }
  for (int y = mt - 1; y <= height - mb; ++y) {
    put(ml - 1, y, 96);
    put(width - mr, y, 96);
  }

  const AceConfig& cfg = eg.config;
  const double span = eg.duration_s > 0 ? eg.duration_s : 1.0;
  const double row_h = static_cast<double>(ph) / std::max(1, cfg.n_electrodes);
  const int tick = std::max(1, static_cast<int>(row_h * 0.7));
  for (const auto& p : eg.pulses) {
    const int x = ml + static_cast<int>(p.time_s / span * (pw - 1));
    // apex (electrode 1) on the bottom row
    const double yc = mt + ph - (p.electrode - 0.5) * row_h;
    const double level = (p.amplitude - cfg.t_level) / (cfg.c_level - cfg.t_level);
    const uint8_t v = static_cast<uint8_t>(96 + 159 * std::clamp(level, 0.0, 1.0));
    for (int dy = -tick / 2; dy <= tick / 2; ++dy) put(x, static_cast<int>(yc) + dy, v);
  }
  write_png_gray(path, width, height, img);
}

Waveform vocode(const Electrodogram& eg) {
  const AceConfig& cfg = eg.config;
  cfg.validate();
  Waveform out;
  out.sample_rate = cfg.sample_rate;
  const int64_t n = std::llround(eg.duration_s * cfg.sample_rate);
  out.samples.assign(static_cast<size_t>(std::max<int64_t>(n, 0)), 0.0);
  if (out.samples.empty() || eg.pulses.empty()) return out;

  // per-electrode envelope: inverse loudness growth, held for one frame period
  const double lg = std::log1p(cfg.rho);
  const int64_t hold = std::llround(static_cast<double>(cfg.sample_rate) / cfg.channel_rate_hz);
  std::vector<std::vector<double>> envs(static_cast<size_t>(cfg.n_electrodes));
  for (const auto& p : eg.pulses) {
    auto& env = envs[static_cast<size_t>(p.electrode - 1)];
    if (env.empty()) env.assign(out.samples.size(), 0.0);
    const double q = (p.amplitude - cfg.t_level) / (cfg.c_level - cfg.t_level);
    const double v = (std::exp(q * lg) - 1.0) / cfg.rho;
    const double value = cfg.base_level + v * (cfg.saturation_level - cfg.base_level);
    const int64_t at = std::llround(p.time_s * cfg.sample_rate);
    for (int64_t i = at; i < at + hold && i < n; ++i)
      if (i >= 0) env[static_cast<size_t>(i)] = value;
  }

  // band-limited noise carriers via full-length FFT masking
  int64_t n2 = 1;
  while (n2 < n) n2 <<= 1;
  const auto edges = cfg.band_edges_hz();
  for (int e = 0; e < cfg.n_electrodes; ++e) {
    const auto& env = envs[static_cast<size_t>(e)];
    if (env.empty()) continue;
    Rng rng(0xACEull * 1000003ull + static_cast<uint64_t>(e));
    std::vector<std::complex<double>> buf(static_cast<size_t>(n2));
    for (auto& v : buf) v = rng.normal();
    fft_inplace(buf, false);
    const double lo = edges[static_cast<size_t>(e)], hi = edges[static_cast<size_t>(e) + 1];
    for (int64_t k = 0; k < n2; ++k) {
      // fold to the analog frequency of this DFT bin
      const double f = std::min<double>(k, n2 - k) * cfg.sample_rate / static_cast<double>(n2);
      if (f < lo || f >= hi) buf[static_cast<size_t>(k)] = 0.0;
    }
    fft_inplace(buf, true);
    double power = 0;
    for (int64_t i = 0; i < n; ++i) power += buf[static_cast<size_t>(i)].real() * buf[static_cast<size_t>(i)].real();
    power /= static_cast<double>(n);
    const double g = power > 0 ? 1.0 / std::sqrt(power) : 0.0;
    for (int64_t i = 0; i < n; ++i)
      out.samples[static_cast<size_t>(i)] += g * buf[static_cast<size_t>(i)].real() * env[static_cast<size_t>(i)];
  }
  return out;
}

}  // namespace datcft

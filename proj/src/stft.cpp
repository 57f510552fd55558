#include "datcft/stft.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "datcft/errors.hpp"
#include "datcft/fft.hpp"
#include "datcft/png_image.hpp"

namespace datcft {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kWsumGuard = 1e-10;

// input signal with reflect padding folded in
struct PaddedSignal {
  std::vector<double> x;
  int64_t pad = 0;
};

double mirrored_at(const std::vector<double>& s, int64_t i) {
  const int64_t n = static_cast<int64_t>(s.size());
  if (n == 1) return s[0];
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return s[static_cast<size_t>(i)];
}

PaddedSignal prepare_input(const std::vector<double>& samples, const StftConfig& cfg) {
  PaddedSignal p;
  p.pad = cfg.center_padding ? cfg.frame_len / 2 : 0;
  const int64_t n = static_cast<int64_t>(samples.size());
  int64_t total = n + 2 * p.pad;
  if (total < cfg.frame_len) total = cfg.frame_len;  // short input: zero-pad right
  p.x.assign(static_cast<size_t>(total), 0.0);
  for (int64_t i = 0; i < n + 2 * p.pad && i < total; ++i) {
    const int64_t src = i - p.pad;
    p.x[static_cast<size_t>(i)] =
        (src >= 0 && src < n) ? samples[static_cast<size_t>(src)]
                              : (cfg.center_padding ? mirrored_at(samples, src) : 0.0);
  }
  return p;
}

int64_t frame_count(int64_t padded_len, const StftConfig& cfg) {
  return 1 + (padded_len - cfg.frame_len) / cfg.hop;
}

// per-sample sum of squared synthesis windows over the padded extent
std::vector<double> window_energy(const std::vector<double>& win, int64_t padded_len,
                                  int64_t n_frames, int hop) {
  std::vector<double> wsum(static_cast<size_t>(padded_len), 0.0);
  for (int64_t f = 0; f < n_frames; ++f)
    for (size_t i = 0; i < win.size(); ++i)
      wsum[static_cast<size_t>(f * hop) + i] += win[i] * win[i];
  return wsum;
}

}  // namespace

void StftConfig::validate() const {
  if (frame_len <= 0 || hop <= 0) throw ConfigError("stft config: non-positive frame/hop");
  if (fft_size < frame_len) throw ConfigError("stft config: fft_size must cover frame_len");
  if (!is_pow2(fft_size)) throw ConfigError("stft config: fft_size must be a power of two");
  if (hop * 2 != frame_len)
    throw ConfigError("stft config: hop must equal frame_len/2 for exact reconstruction");
}

std::vector<double> make_window(WindowKind kind, int n) {
  std::vector<double> w(static_cast<size_t>(n));
  switch (kind) {
    case WindowKind::Hann:
      for (int i = 0; i < n; ++i)
        w[static_cast<size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / n);
      break;
  }
  return w;
}

ComplexSpectrogram stft(const Waveform& w, const StftConfig& cfg) {
  cfg.validate();
  if (w.samples.empty()) throw ConfigError("stft: empty waveform");
  if (w.sample_rate != 16000) throw ConfigError("stft: expected 16 kHz input");
  for (double v : w.samples)
    if (!std::isfinite(v)) throw NumericError("stft: non-finite sample");

  const PaddedSignal p = prepare_input(w.samples, cfg);
  const int64_t n_frames = frame_count(static_cast<int64_t>(p.x.size()), cfg);
  const int n_bins = cfg.fft_size / 2 + 1;
  const auto win = make_window(cfg.window, cfg.frame_len);

  ComplexSpectrogram s;
  s.config = cfg;
  s.original_length = static_cast<int64_t>(w.samples.size());
  s.real = Tensor({n_bins, static_cast<int>(n_frames)});
  s.imag = Tensor({n_bins, static_cast<int>(n_frames)});

  std::vector<double> frame(static_cast<size_t>(cfg.fft_size), 0.0);
  for (int64_t f = 0; f < n_frames; ++f) {
    std::fill(frame.begin(), frame.end(), 0.0);
    for (int i = 0; i < cfg.frame_len; ++i)
      frame[static_cast<size_t>(i)] =
          p.x[static_cast<size_t>(f * cfg.hop + i)] * win[static_cast<size_t>(i)];
    const auto bins = rfft(frame);
    for (int b = 0; b < n_bins; ++b) {
      s.real.at2(b, static_cast<int>(f)) = bins[static_cast<size_t>(b)].real();
      s.imag.at2(b, static_cast<int>(f)) = bins[static_cast<size_t>(b)].imag();
    }
  }
  return s;
}

Waveform istft(const ComplexSpectrogram& s, int64_t target_len) {
  s.config.validate();
  const StftConfig& cfg = s.config;
  const int n_bins = cfg.fft_size / 2 + 1;
  if (s.n_bins() != n_bins || !s.real.same_shape(s.imag))
    throw ConfigError("istft: spectrogram planes inconsistent with config");
  const int64_t n_frames = s.n_frames();
  const int64_t padded_len = (n_frames - 1) * cfg.hop + cfg.frame_len;
  const int64_t pad = cfg.center_padding ? cfg.frame_len / 2 : 0;
  const auto win = make_window(cfg.window, cfg.frame_len);
  const auto wsum = window_energy(win, padded_len, n_frames, cfg.hop);

  std::vector<double> acc(static_cast<size_t>(padded_len), 0.0);
  std::vector<cplx> bins(static_cast<size_t>(n_bins));
  for (int64_t f = 0; f < n_frames; ++f) {
    for (int b = 0; b < n_bins; ++b)
      bins[static_cast<size_t>(b)] =
          cplx(s.real.at2(b, static_cast<int>(f)), s.imag.at2(b, static_cast<int>(f)));
    const auto frame = irfft(bins, cfg.fft_size);
    for (int i = 0; i < cfg.frame_len; ++i)
      acc[static_cast<size_t>(f * cfg.hop + i)] +=
          frame[static_cast<size_t>(i)] * win[static_cast<size_t>(i)];
  }

  Waveform out;
  out.sample_rate = 16000;
  out.samples.assign(static_cast<size_t>(target_len), 0.0);
  for (int64_t i = 0; i < target_len; ++i) {
    const int64_t j = i + pad;
    if (j < 0 || j >= padded_len) continue;
    const double ws = wsum[static_cast<size_t>(j)];
    out.samples[static_cast<size_t>(i)] = ws < kWsumGuard ? 0.0 : acc[static_cast<size_t>(j)] / ws;
  }
  return out;
}

Var istft_op(const Var& sr, const Var& si, const StftConfig& cfg, int64_t target_len) {
  cfg.validate();
  const int n_bins = cfg.fft_size / 2 + 1;
  if (sr->val.ndim() != 2 || sr->val.shape[0] != n_bins || !sr->val.same_shape(si->val))
    throw ConfigError("istft_op: plane shapes inconsistent with config");
  const int64_t n_frames = sr->val.shape[1];
  const int64_t padded_len = (n_frames - 1) * cfg.hop + cfg.frame_len;
  const int64_t pad = cfg.center_padding ? cfg.frame_len / 2 : 0;
  const auto win = make_window(cfg.window, cfg.frame_len);
  const auto wsum = window_energy(win, padded_len, n_frames, cfg.hop);
  const int N = cfg.fft_size;

  std::vector<double> acc(static_cast<size_t>(padded_len), 0.0);
  {
    std::vector<cplx> bins(static_cast<size_t>(n_bins));
    for (int64_t f = 0; f < n_frames; ++f) {
      for (int b = 0; b < n_bins; ++b)
        bins[static_cast<size_t>(b)] =
            cplx(sr->val.at2(b, static_cast<int>(f)), si->val.at2(b, static_cast<int>(f)));
      const auto frame = irfft(bins, N);
      for (int i = 0; i < cfg.frame_len; ++i)
        acc[static_cast<size_t>(f * cfg.hop + i)] +=
            frame[static_cast<size_t>(i)] * win[static_cast<size_t>(i)];
    }
  }
  Tensor out({static_cast<int>(target_len)});
  for (int64_t i = 0; i < target_len; ++i) {
    const int64_t j = i + pad;
    if (j < 0 || j >= padded_len) continue;
    const double ws = wsum[static_cast<size_t>(j)];
    out.data[static_cast<size_t>(i)] = ws < kWsumGuard ? 0.0 : acc[static_cast<size_t>(j)] / ws;
  }

  Var vr = sr, vi = si;
  auto back = [vr, vi, cfg, target_len, pad, padded_len, n_frames, win, wsum, N](Node& self) {
    // scatter output grad back onto the padded, normalized accumulation buffer
    std::vector<double> gacc(static_cast<size_t>(padded_len), 0.0);
    for (int64_t i = 0; i < target_len; ++i) {
      const int64_t j = i + pad;
      if (j < 0 || j >= padded_len) continue;
      const double ws = wsum[static_cast<size_t>(j)];
      if (ws >= kWsumGuard)
        gacc[static_cast<size_t>(j)] = self.grad.data[static_cast<size_t>(i)] / ws;
    }
    const int n_bins = N / 2 + 1;
    std::vector<double> gframe(static_cast<size_t>(N), 0.0);
    for (int64_t f = 0; f < n_frames; ++f) {
      std::fill(gframe.begin(), gframe.end(), 0.0);
      for (int i = 0; i < cfg.frame_len; ++i)
        gframe[static_cast<size_t>(i)] =
            gacc[static_cast<size_t>(f * cfg.hop + i)] * win[static_cast<size_t>(i)];
      // adjoint of the one-sided inverse FFT (hermitian synthesis)
      const auto G = rfft(gframe);
      for (int b = 0; b < n_bins; ++b) {
        const bool edge = (b == 0 || b == N / 2);
        const double cr = (edge ? 1.0 : 2.0) / N;
        if (vr->needs_grad)
          vr->g().at2(b, static_cast<int>(f)) += cr * G[static_cast<size_t>(b)].real();
        if (vi->needs_grad && !edge)
          vi->g().at2(b, static_cast<int>(f)) += (2.0 / N) * G[static_cast<size_t>(b)].imag();
      }
    }
  };
  return make_op_node(std::move(out), {sr, si}, std::move(back));
}

void save_spectrogram(const std::string& path, const ComplexSpectrogram& s) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write spectrogram: " + path);
  const char magic[8] = {'D', 'C', 'S', 'G', '0', '0', '0', '1'};
  f.write(magic, 8);
  auto w32 = [&](uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
  auto w64 = [&](uint64_t v) { f.write(reinterpret_cast<const char*>(&v), 8); };
  w32(static_cast<uint32_t>(s.n_bins()));
  w32(static_cast<uint32_t>(s.n_frames()));
  w32(static_cast<uint32_t>(s.config.frame_len));
  w32(static_cast<uint32_t>(s.config.hop));
  w32(static_cast<uint32_t>(s.config.fft_size));
  w32((s.config.center_padding ? 1u : 0u) | (static_cast<uint32_t>(s.config.window) << 8));
  w64(static_cast<uint64_t>(s.original_length));
  f.write(reinterpret_cast<const char*>(s.real.data.data()),
          static_cast<std::streamsize>(s.real.data.size() * 8));
  f.write(reinterpret_cast<const char*>(s.imag.data.data()),
          static_cast<std::streamsize>(s.imag.data.size() * 8));
  if (!f) throw IoError("short write on spectrogram: " + path);
}

ComplexSpectrogram load_spectrogram(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read spectrogram: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, "DCSG0001", 8) != 0)
    throw IoError("bad spectrogram header: " + path);
  auto r32 = [&]() {
    uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    return v;
  };
  auto r64 = [&]() {
    uint64_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 8);
    return v;
  };
  ComplexSpectrogram s;
  const int n_bins = static_cast<int>(r32());
  const int n_frames = static_cast<int>(r32());
  s.config.frame_len = static_cast<int>(r32());
  s.config.hop = static_cast<int>(r32());
  s.config.fft_size = static_cast<int>(r32());
  const uint32_t flags = r32();
  s.config.center_padding = (flags & 1u) != 0;
  s.config.window = static_cast<WindowKind>((flags >> 8) & 0xff);
  s.original_length = static_cast<int64_t>(r64());
  if (!f || n_bins <= 0 || n_frames <= 0) throw IoError("bad spectrogram dims: " + path);
  s.real = Tensor({n_bins, n_frames});
  s.imag = Tensor({n_bins, n_frames});
  f.read(reinterpret_cast<char*>(s.real.data.data()),
         static_cast<std::streamsize>(s.real.data.size() * 8));
  f.read(reinterpret_cast<char*>(s.imag.data.data()),
         static_cast<std::streamsize>(s.imag.data.size() * 8));
  if (!f) throw IoError("truncated spectrogram: " + path);
  return s;
}

void save_spectrogram_png(const std::string& path, const ComplexSpectrogram& s) {
  const int n_bins = s.n_bins(), n_frames = s.n_frames();
  if (n_bins == 0 || n_frames == 0) throw ConfigError("save_spectrogram_png: empty spectrogram");
  std::vector<double> db(static_cast<size_t>(n_bins) * n_frames);
  double peak = -1e300;
  for (int b = 0; b < n_bins; ++b)
    for (int t = 0; t < n_frames; ++t) {
      const double re = s.real.at2(b, t), im = s.imag.at2(b, t);
      const double mag = std::sqrt(re * re + im * im);
      const double v = 20.0 * std::log10(mag + 1e-12);
      db[static_cast<size_t>(b) * n_frames + t] = v;
      peak = std::max(peak, v);
    }
  std::vector<uint8_t> px(db.size());
  for (int b = 0; b < n_bins; ++b)
    for (int t = 0; t < n_frames; ++t) {
      // top row = highest frequency
      const double v = db[static_cast<size_t>(b) * n_frames + t];
      const double clipped = std::max(peak - 80.0, v);
      const double norm = (clipped - (peak - 80.0)) / 80.0;
      px[static_cast<size_t>(n_bins - 1 - b) * n_frames + t] =
          static_cast<uint8_t>(std::lround(norm * 255.0));
    }
  write_png_gray(path, n_frames, n_bins, px);
}

}  // namespace datcft

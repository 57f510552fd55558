#include "datcft/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <map>
#include <sstream>

#include "datcft/errors.hpp"
#include "datcft/fft.hpp"
#include "json.hpp"

namespace datcft {

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

double sisdr_db(const std::vector<double>& ref, const std::vector<double>& est) {
  if (ref.size() != est.size()) throw ConfigError("sisdr: length mismatch");
  if (ref.empty()) throw ConfigError("sisdr: empty signals");
  const double rr = dot(ref, ref);
  if (rr <= 0.0) throw NumericError("sisdr: zero-energy reference");
  const double proj = dot(est, ref) / rr;
  double target = 0, resid = 0;
  for (size_t i = 0; i < ref.size(); ++i) {
    const double t = proj * ref[i];
    const double e = est[i] - t;
    target += t * t;
    resid += e * e;
  }
  // clamp instead of epsilon-pollution so in-range values stay exact
  if (target <= resid * 1e-6) return -60.0;
  if (resid <= target * 1e-6) return 60.0;
  return 10.0 * std::log10(target / resid);
}

double sisdr_db(const Waveform& ref, const Waveform& est) {
  if (ref.sample_rate != est.sample_rate) throw ConfigError("sisdr: sample rate mismatch");
  return sisdr_db(ref.samples, est.samples);
}

// ---------------------------------------------------------------------------
// STOI

namespace {

constexpr int kStoiRate = 10000;
constexpr int kStoiFrame = 256;
constexpr int kStoiHop = 128;
constexpr int kStoiFft = 512;
constexpr int kStoiBands = 15;
constexpr int kStoiSegment = 30;      // frames per 384 ms analysis segment
constexpr double kSilenceRangeDb = 40.0;
constexpr double kClipDb = -15.0;

std::vector<double> stoi_window() {
  std::vector<double> w(kStoiFrame);
  for (int n = 0; n < kStoiFrame; ++n)
    w[n] = 0.5 * (1.0 - std::cos(2.0 * M_PI * n / kStoiFrame));
  return w;
}

// Frames whose windowed reference energy falls more than 40 dB below the
// loudest frame are dropped from BOTH signals; survivors are re-packed
// contiguously by overlap-add.
void remove_silent_frames(std::vector<double>& x, std::vector<double>& y) {
  const std::vector<double> w = stoi_window();
  if (x.size() < static_cast<size_t>(kStoiFrame))
    throw ConfigError("stoi: signal shorter than one frame");
  const int n_frames = 1 + static_cast<int>((x.size() - kStoiFrame) / kStoiHop);
  std::vector<double> energy_db(n_frames);
  double peak = -1e300;
  for (int m = 0; m < n_frames; ++m) {
    double e = 0;
    for (int n = 0; n < kStoiFrame; ++n) {
      const double v = x[m * kStoiHop + n] * w[n];
      e += v * v;
    }
    energy_db[m] = 10.0 * std::log10(e + 1e-300);
    peak = std::max(peak, energy_db[m]);
  }
  std::vector<int> keep;
  for (int m = 0; m < n_frames; ++m)
    if (energy_db[m] > peak - kSilenceRangeDb) keep.push_back(m);
  if (keep.empty()) throw NumericError("stoi: no active frames in reference");

  const size_t out_len = (keep.size() - 1) * kStoiHop + kStoiFrame;
  std::vector<double> xs(out_len, 0.0), ys(out_len, 0.0);
  for (size_t k = 0; k < keep.size(); ++k) {
    const int src = keep[k] * kStoiHop;
    const size_t dst = k * kStoiHop;
    for (int n = 0; n < kStoiFrame; ++n) {
      xs[dst + n] += x[src + n] * w[n];
      ys[dst + n] += y[src + n] * w[n];
    }
  }
  x = std::move(xs);
  y = std::move(ys);
}

// magnitude spectrogram, [n_frames][kStoiFft/2+1]
std::vector<std::vector<double>> stoi_spectrogram(const std::vector<double>& x) {
  const std::vector<double> w = stoi_window();
  const int n_frames = 1 + static_cast<int>((x.size() - kStoiFrame) / kStoiHop);
  std::vector<std::vector<double>> mag(n_frames);
  std::vector<std::complex<double>> buf(kStoiFft);
  for (int m = 0; m < n_frames; ++m) {
    for (int n = 0; n < kStoiFft; ++n)
      buf[n] = n < kStoiFrame ? std::complex<double>(x[m * kStoiHop + n] * w[n], 0.0) : 0.0;
    fft_inplace(buf, false);
    mag[m].resize(kStoiFft / 2 + 1);
    for (int k = 0; k <= kStoiFft / 2; ++k) mag[m][k] = std::abs(buf[k]);
  }
  return mag;
}

// one-third-octave band edges snapped to the nearest FFT bin
std::vector<std::pair<int, int>> stoi_bands() {
  auto nearest_bin = [](double f) {
    int best = 0;
    double best_d = 1e300;
    for (int i = 0; i <= kStoiFft / 2; ++i) {
      const double fi = static_cast<double>(i) * kStoiRate / kStoiFft;
      const double d = (fi - f) * (fi - f);
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    return best;
  };
  std::vector<std::pair<int, int>> bands(kStoiBands);
  for (int k = 0; k < kStoiBands; ++k) {
    const double cf = 150.0 * std::pow(2.0, k / 3.0);
    bands[k] = {nearest_bin(cf / std::pow(2.0, 1.0 / 6.0)),
                nearest_bin(cf * std::pow(2.0, 1.0 / 6.0))};
  }
  return bands;
}

double segment_correlation(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double num = 0, dx = 0, dy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    num += (x[i] - mx) * (y[i] - my);
    dx += (x[i] - mx) * (x[i] - mx);
    dy += (y[i] - my) * (y[i] - my);
  }
  const double den = std::sqrt(dx * dy);
  return den > 0 ? num / den : 0.0;
}

}  // namespace

double stoi_score(const Waveform& ref, const Waveform& est) {
  if (ref.sample_rate != est.sample_rate) throw ConfigError("stoi: sample rate mismatch");
  if (ref.samples.size() != est.samples.size()) throw ConfigError("stoi: length mismatch");
  std::vector<double> x = resample(ref, kStoiRate).samples;
  std::vector<double> y = resample(est, kStoiRate).samples;
  y.resize(x.size(), 0.0);
  remove_silent_frames(x, y);

  const auto xs = stoi_spectrogram(x);
  const auto ys = stoi_spectrogram(y);
  const int n_frames = static_cast<int>(xs.size());
  if (n_frames < kStoiSegment) throw ConfigError("stoi: signal shorter than one analysis segment");

  const auto bands = stoi_bands();
  // band envelopes X[j][m]
  std::vector<std::vector<double>> bx(kStoiBands, std::vector<double>(n_frames));
  std::vector<std::vector<double>> by(kStoiBands, std::vector<double>(n_frames));
  for (int j = 0; j < kStoiBands; ++j)
    for (int m = 0; m < n_frames; ++m) {
      double ex = 0, ey = 0;
      for (int k = bands[j].first; k < bands[j].second; ++k) {
        ex += xs[m][k] * xs[m][k];
        ey += ys[m][k] * ys[m][k];
      }
      bx[j][m] = std::sqrt(ex);
      by[j][m] = std::sqrt(ey);
    }

  const double clip_gain = 1.0 + std::pow(10.0, -kClipDb / 20.0);
  double acc = 0;
  int count = 0;
  std::vector<double> seg_x(kStoiSegment), seg_y(kStoiSegment);
  for (int m = kStoiSegment - 1; m < n_frames; ++m) {
    for (int j = 0; j < kStoiBands; ++j) {
      double px = 0, py = 0;
      for (int t = 0; t < kStoiSegment; ++t) {
        seg_x[t] = bx[j][m - kStoiSegment + 1 + t];
        seg_y[t] = by[j][m - kStoiSegment + 1 + t];
        px += seg_x[t] * seg_x[t];
        py += seg_y[t] * seg_y[t];
      }
      const double alpha = std::sqrt(px) / (std::sqrt(py) + 1e-300);
      for (int t = 0; t < kStoiSegment; ++t)
        seg_y[t] = std::min(alpha * seg_y[t], clip_gain * seg_x[t]);
      acc += segment_correlation(seg_x, seg_y);
      ++count;
    }
  }
  // adversarial pairs can drive single-segment correlations slightly negative;
  // the reported score is defined on [0, 1]
  return std::clamp(acc / count, 0.0, 1.0);
}

double lsd_db(const ComplexSpectrogram& ref, const ComplexSpectrogram& est) {
  if (ref.n_bins() != est.n_bins() || ref.n_frames() != est.n_frames())
    throw ConfigError("lsd: spectrogram shape mismatch");
  const double eps = 1e-8;
  const int F = ref.n_bins(), T = ref.n_frames();
  double acc = 0;
  for (int t = 0; t < T; ++t) {
    double frame = 0;
    for (int f = 0; f < F; ++f) {
      const size_t i = static_cast<size_t>(f) * T + t;
      const double mr = std::hypot(ref.real.data[i], ref.imag.data[i]);
      const double me = std::hypot(est.real.data[i], est.imag.data[i]);
      const double d = 20.0 * std::log10(mr + eps) - 20.0 * std::log10(me + eps);
      frame += d * d;
    }
    acc += std::sqrt(frame / F);
  }
  return acc / T;
}

// ---------------------------------------------------------------------------
// Grid evaluation

namespace {

struct Accum {
  int n = 0;
  double sisdr = 0, stoi = 0, lsd = 0;
  void add(double a, double b, double c) {
    ++n;
    sisdr += a;
    stoi += b;
    lsd += c;
  }
  MetricRow finish(const std::string& kind, double snr, const std::string& system) const {
    MetricRow r;
    r.noise_kind = kind;
    r.snr_db = snr;
    r.system = system;
    r.n = n;
    r.sisdr_db = sisdr / n;
    r.stoi = stoi / n;
    r.lsd_db = lsd / n;
    return r;
  }
};

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << v;
  return os.str();
}

}  // namespace

MetricReport evaluate_grid(const Model& m, const std::vector<Utterance>& corpus,
                           const std::vector<MixRecipe>& recipes) {
  if (recipes.empty()) throw ConfigError("evaluate_grid: empty recipe grid");
  std::map<std::string, const Utterance*> by_id;
  for (const auto& u : corpus) by_id[u.id] = &u;

  using Key = std::pair<std::string, double>;
  std::map<Key, Accum> noisy_acc, enh_acc;
  Accum noisy_all, enh_all;
  for (const auto& r : recipes) {
    auto it = by_id.find(r.clean_id);
    if (it == by_id.end()) throw ConfigError("evaluate_grid: unknown clean id " + r.clean_id);
    RealizedMix mix = realize_mix(*it->second, r);
    const ComplexSpectrogram clean_spec = stft(mix.clean, m.cfg.stft);
    const Key key{to_string(r.noise_kind), r.snr_db};

    const double n_sisdr = sisdr_db(mix.clean, mix.noisy);
    const double n_stoi = stoi_score(mix.clean, mix.noisy);
    const double n_lsd = lsd_db(clean_spec, stft(mix.noisy, m.cfg.stft));
    noisy_acc[key].add(n_sisdr, n_stoi, n_lsd);
    noisy_all.add(n_sisdr, n_stoi, n_lsd);

    Waveform est = enhance(m, mix.noisy);
    const double e_sisdr = sisdr_db(mix.clean, est);
    const double e_stoi = stoi_score(mix.clean, est);
    const double e_lsd = lsd_db(clean_spec, stft(est, m.cfg.stft));
    enh_acc[key].add(e_sisdr, e_stoi, e_lsd);
    enh_all.add(e_sisdr, e_stoi, e_lsd);
  }

  MetricReport report;
  for (const auto& [key, acc] : noisy_acc) {
    report.rows.push_back(acc.finish(key.first, key.second, "noisy"));
    report.rows.push_back(enh_acc.at(key).finish(key.first, key.second, "enhanced"));
  }
  report.means.push_back(noisy_all.finish("all", 0.0, "noisy"));
  report.means.push_back(enh_all.finish("all", 0.0, "enhanced"));
  return report;
}

std::string MetricReport::to_csv() const {
  std::ostringstream os;
  os << "noise_kind,snr_db,system,n,sisdr_db,stoi,lsd_db,pesq\n";
  for (const auto& r : rows)
    os << r.noise_kind << ',' << format_double(r.snr_db) << ',' << r.system << ',' << r.n << ','
       << format_double(r.sisdr_db) << ',' << format_double(r.stoi) << ','
       << format_double(r.lsd_db) << ",\n";
  for (const auto& r : means)
    os << r.noise_kind << ",," << r.system << ',' << r.n << ',' << format_double(r.sisdr_db) << ','
       << format_double(r.stoi) << ',' << format_double(r.lsd_db) << ",\n";
  return os.str();
}

std::string MetricReport::to_json() const {
  nlohmann::json j;
  auto row_json = [](const MetricRow& r) {
    return nlohmann::json{{"noise_kind", r.noise_kind}, {"snr_db", r.snr_db},
                          {"system", r.system},         {"n", r.n},
                          {"sisdr_db", r.sisdr_db},     {"stoi", r.stoi},
                          {"lsd_db", r.lsd_db}};
  };
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rows) j["rows"].push_back(row_json(r));
  j["means"] = nlohmann::json::array();
  for (const auto& r : means) j["means"].push_back(row_json(r));
  return j.dump(2);
}

bool MetricReport::has_nan() const {
  auto bad = [](const MetricRow& r) {
    return !std::isfinite(r.sisdr_db) || !std::isfinite(r.stoi) || !std::isfinite(r.lsd_db);
  };
  return std::any_of(rows.begin(), rows.end(), bad) || std::any_of(means.begin(), means.end(), bad);
}

void MetricReport::save_csv(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << to_csv();
}

void MetricReport::save_json(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << to_json();
}

}  // namespace datcft

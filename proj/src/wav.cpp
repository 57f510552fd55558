#include "datcft/wav.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace datcft {

namespace {

uint32_t rd_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

uint16_t rd_u16(const unsigned char* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

void wr_u32(std::vector<unsigned char>& v, uint32_t x) {
  v.push_back(static_cast<unsigned char>(x & 0xff));
  v.push_back(static_cast<unsigned char>((x >> 8) & 0xff));
  v.push_back(static_cast<unsigned char>((x >> 16) & 0xff));
  v.push_back(static_cast<unsigned char>((x >> 24) & 0xff));
}

void wr_u16(std::vector<unsigned char>& v, uint16_t x) {
  v.push_back(static_cast<unsigned char>(x & 0xff));
  v.push_back(static_cast<unsigned char>((x >> 8) & 0xff));
}

void wr_tag(std::vector<unsigned char>& v, const char* t) {
  v.insert(v.end(), t, t + 4);
}

}  // namespace

Waveform load_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw WavError(WavFault::MissingFile, "cannot open wav file: " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw WavError(WavFault::Malformed, "not a RIFF/WAVE file: " + path);

  bool have_fmt = false;
  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  const unsigned char* data = nullptr;
  uint32_t data_len = 0;

  size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const char* tag = reinterpret_cast<const char*>(buf.data() + pos);
    const uint32_t len = rd_u32(buf.data() + pos + 4);
    pos += 8;
    if (pos + len > buf.size())
      throw WavError(WavFault::Malformed, "truncated chunk in wav file: " + path);
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      if (len < 16) throw WavError(WavFault::Malformed, "short fmt chunk: " + path);
      format = rd_u16(buf.data() + pos);
      channels = rd_u16(buf.data() + pos + 2);
      rate = rd_u32(buf.data() + pos + 4);
      bits = rd_u16(buf.data() + pos + 14);
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      data = buf.data() + pos;
      data_len = len;
    }
    pos += len + (len & 1);  // chunks are word-aligned
  }
  if (!have_fmt || data == nullptr)
    throw WavError(WavFault::Malformed, "missing fmt or data chunk: " + path);
  if (channels != 1)
    throw WavError(WavFault::Multichannel,
                   "expected mono, got " + std::to_string(channels) + " channels: " + path);
  if (rate == 0) throw WavError(WavFault::Malformed, "zero sample rate: " + path);

  Waveform w;
  w.sample_rate = static_cast<int>(rate);
  if (format == 1 && bits == 16) {
    const size_t n = data_len / 2;
    w.samples.resize(n);
    for (size_t i = 0; i < n; ++i) {
      const int16_t s = static_cast<int16_t>(rd_u16(data + 2 * i));
      w.samples[i] = static_cast<double>(s) / 32768.0;
    }
  } else if (format == 3 && bits == 32) {
    const size_t n = data_len / 4;
    w.samples.resize(n);
    for (size_t i = 0; i < n; ++i) {
      const uint32_t u = rd_u32(data + 4 * i);
      float fv;
      std::memcpy(&fv, &u, 4);
      w.samples[i] = static_cast<double>(fv);
    }
  } else {
    throw WavError(WavFault::UnsupportedEncoding,
                   "unsupported wav encoding (format " + std::to_string(format) + ", " +
                       std::to_string(bits) + " bit): " + path);
  }
  if (w.samples.empty()) throw WavError(WavFault::Malformed, "empty data chunk: " + path);
  for (double v : w.samples)
    if (!std::isfinite(v)) throw WavError(WavFault::Malformed, "non-finite sample: " + path);
  return w;
}

void save_wav(const std::string& path, const Waveform& w, WavEncoding enc) {
  const uint32_t n = static_cast<uint32_t>(w.samples.size());
  const uint16_t bits = enc == WavEncoding::Pcm16 ? 16 : 32;
  const uint16_t fmt = enc == WavEncoding::Pcm16 ? 1 : 3;
  const uint32_t bytes_per = bits / 8;
  std::vector<unsigned char> out;
  out.reserve(44 + static_cast<size_t>(n) * bytes_per);
  wr_tag(out, "RIFF");
  wr_u32(out, 36 + n * bytes_per);
  wr_tag(out, "WAVE");
  wr_tag(out, "fmt ");
  wr_u32(out, 16);
  wr_u16(out, fmt);
  wr_u16(out, 1);  // mono
  wr_u32(out, static_cast<uint32_t>(w.sample_rate));
  wr_u32(out, static_cast<uint32_t>(w.sample_rate) * bytes_per);
  wr_u16(out, static_cast<uint16_t>(bytes_per));
  wr_u16(out, bits);
  wr_tag(out, "data");
  wr_u32(out, n * bytes_per);
  if (enc == WavEncoding::Pcm16) {
    for (double v : w.samples) {
      double s = std::round(v * 32768.0);
      s = std::min(32767.0, std::max(-32768.0, s));
      wr_u16(out, static_cast<uint16_t>(static_cast<int16_t>(s)));
    }
  } else {
    for (double v : w.samples) {
      const float fv = static_cast<float>(v);
      uint32_t u;
      std::memcpy(&u, &fv, 4);
      wr_u32(out, u);
    }
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write wav file: " + path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("short write on wav file: " + path);
}

}  // namespace datcft

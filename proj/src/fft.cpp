#include "datcft/fft.hpp"

#include <cmath>

#include "datcft/errors.hpp"

namespace datcft {

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

int next_pow2(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

void fft_inplace(std::vector<cplx>& a, bool inverse) {
  const size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0) throw NumericError("fft size must be a power of two");
  // bit reversal
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  const double sign = inverse ? 1.0 : -1.0;
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = sign * 2.0 * M_PI / static_cast<double>(len);
    const cplx wlen(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      cplx w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        cplx u = a[i + k];
        cplx v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  if (inverse) {
    const double inv = 1.0 / static_cast<double>(n);
    for (auto& z : a) z *= inv;
  }
}

std::vector<cplx> rfft(const std::vector<double>& x) {
  const int n = static_cast<int>(x.size());
  std::vector<cplx> a(x.begin(), x.end());
  fft_inplace(a, false);
  a.resize(static_cast<size_t>(n / 2 + 1));
  return a;
}

std::vector<double> irfft(const std::vector<cplx>& bins, int n) {
  if (static_cast<int>(bins.size()) != n / 2 + 1)
    throw NumericError("irfft: bin count must be n/2+1");
  std::vector<cplx> a(static_cast<size_t>(n));
  a[0] = cplx(bins[0].real(), 0.0);
  a[static_cast<size_t>(n / 2)] = cplx(bins[static_cast<size_t>(n / 2)].real(), 0.0);
  for (int b = 1; b < n / 2; ++b) {
    a[static_cast<size_t>(b)] = bins[static_cast<size_t>(b)];
    a[static_cast<size_t>(n - b)] = std::conj(bins[static_cast<size_t>(b)]);
  }
  fft_inplace(a, true);
  std::vector<double> out(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) out[static_cast<size_t>(i)] = a[static_cast<size_t>(i)].real();
  return out;
}

}  // namespace datcft

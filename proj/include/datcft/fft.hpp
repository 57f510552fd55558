#pragma once
#include <complex>
#include <vector>

namespace datcft {

using cplx = std::complex<double>;

bool is_pow2(int n);
int next_pow2(int n);

// In-place iterative radix-2 FFT; n = data.size() must be a power of two.
void fft_inplace(std::vector<cplx>& data, bool inverse);

// One-sided real FFT: x (length n, pow2) -> n/2+1 bins.
std::vector<cplx> rfft(const std::vector<double>& x);

// Inverse of rfft given one-sided bins (n/2+1) for even n; imag parts of
// bins 0 and n/2 are ignored.
std::vector<double> irfft(const std::vector<cplx>& bins, int n);

}  // namespace datcft

#include "datcft/tensor.hpp"

namespace datcft {

void gemm_nn(const double* A, const double* B, double* C, int m, int k, int n, bool acc) {
  if (!acc) std::fill(C, C + static_cast<size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i) {
    const double* a = A + static_cast<size_t>(i) * k;
    double* c = C + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = a[p];
      if (av == 0.0) continue;
      const double* b = B + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

void gemm_nt(const double* A, const double* B, double* C, int m, int k, int n, bool acc) {
  for (int i = 0; i < m; ++i) {
    const double* a = A + static_cast<size_t>(i) * k;
    double* c = C + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* b = B + static_cast<size_t>(j) * k;
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += a[p] * b[p];
      if (acc)
        c[j] += s;
      else
        c[j] = s;
    }
  }
}

void gemm_tn(const double* A, const double* B, double* C, int m, int k, int n, bool acc) {
  if (!acc) std::fill(C, C + static_cast<size_t>(m) * n, 0.0);
  for (int p = 0; p < k; ++p) {
    const double* a = A + static_cast<size_t>(p) * m;
    const double* b = B + static_cast<size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const double av = a[i];
      if (av == 0.0) continue;
      double* c = C + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

}  // namespace datcft

#pragma once
#include <cassert>
#include <cstdint>
#include <numeric>
#include <vector>

#include "datcft/errors.hpp"

namespace datcft {

inline int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

// Dense row-major double tensor. Shapes are small (<= 4 axes in practice).
class Tensor {
 public:
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int> s, double v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }
  static Tensor scalar(double v) {
    Tensor t({1});
    t.data[0] = v;
    return t;
  }
  static Tensor from(std::vector<int> s, std::vector<double> d) {
    Tensor t;
    t.shape = std::move(s);
    t.data = std::move(d);
    assert(shape_numel(t.shape) == static_cast<int64_t>(t.data.size()));
    return t;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  double* ptr() { return data.data(); }
  const double* ptr() const { return data.data(); }

  double& at2(int i, int j) { return data[static_cast<size_t>(i) * shape[1] + j]; }
  double at2(int i, int j) const { return data[static_cast<size_t>(i) * shape[1] + j]; }
  double& at3(int i, int j, int k) {
    return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  double at3(int i, int j, int k) const {
    return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  double& at4(int i, int j, int k, int l) {
    return data[((static_cast<size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }
  double at4(int i, int j, int k, int l) const {
    return data[((static_cast<size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }
};

// C = A * B for row-major [m x k] * [k x n]; accumulates when acc is true.
void gemm_nn(const double* A, const double* B, double* C, int m, int k, int n, bool acc);
// C = A * B^T, A [m x k], B [n x k]
void gemm_nt(const double* A, const double* B, double* C, int m, int k, int n, bool acc);
// C = A^T * B, A [k x m], B [k x n]
void gemm_tn(const double* A, const double* B, double* C, int m, int k, int n, bool acc);

}  // namespace datcft

#pragma once

// Dense row-major double tensor. All numerics in this project run at 64-bit
// precision; gradient checks against central differences rely on it.

#include <cstddef>
#include <cstdint>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tonet {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << ")";
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

struct Tensor {
  Shape shape;
  std::vector<double> values;

  Tensor() = default;

  explicit Tensor(Shape s, double fill = 0.0)
      : shape(std::move(s)), values(shape_numel(shape), fill) {
    for (std::size_t d : shape) {
      if (d == 0) throw std::invalid_argument("tensor dimension must be positive, got " + shape_str(shape));
    }
  }

  static Tensor scalar(double v) {
    Tensor t(Shape{1});
    t.values[0] = v;
    return t;
  }

  static Tensor from(Shape s, std::vector<double> v) {
    Tensor t(std::move(s));
    if (v.size() != t.values.size())
      throw std::invalid_argument("tensor value count " + std::to_string(v.size()) +
                                  " does not match shape " + shape_str(t.shape));
    t.values = std::move(v);
    return t;
  }

  std::size_t numel() const { return values.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  double& operator[](std::size_t i) { return values[i]; }
  const double& operator[](std::size_t i) const { return values[i]; }

  // Row-major accessors for the ranks the model uses.
  double& at(std::size_t i, std::size_t j) { return values[i * shape[1] + j]; }
  const double& at(std::size_t i, std::size_t j) const { return values[i * shape[1] + j]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return values[(i * shape[1] + j) * shape[2] + k];
  }
  const double& at(std::size_t i, std::size_t j, std::size_t k) const {
    return values[(i * shape[1] + j) * shape[2] + k];
  }
  double& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    return values[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }
  const double& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return values[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double v : values)
      if (!std::isfinite(v)) return false;
    return true;
  }

  double max_abs() const {
    double m = 0.0;
    for (double v : values) m = std::max(m, std::abs(v));
    return m;
  }
};

inline void fill_uniform(Tensor& t, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  for (double& v : t.values) v = d(rng);
}

namespace detail {

// C[M,N] += A[M,K] * B[K,N]
inline void gemm_nn(const double* a, const double* b, double* c,
                    std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[M,N] += A[M,K] * B[N,K]^T
inline void gemm_nt(const double* a, const double* b, double* c,
                    std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// C[K,N] += A[M,K]^T * B[M,N]
inline void gemm_tn(const double* a, const double* b, double* c,
                    std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail
}  // namespace tonet

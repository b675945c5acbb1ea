#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fluxtalk/errors.hpp"

namespace fluxtalk {

// Small row-major dense matrix. Sized for crosstalk work (N <= ~10), not BLAS.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static DenseMatrix identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static DenseMatrix from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) return {};
    DenseMatrix m(rows.size(), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != m.cols_) {
        fail(ErrorKind::kDimension, "ragged matrix rows");
      }
      std::copy(rows[i].begin(), rows[i].end(), m.data_.begin() + i * m.cols_);
    }
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool square() const noexcept { return rows_ == cols_; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<const double> row(std::size_t i) const {
    return {data_.data() + i * cols_, cols_};
  }

  std::vector<std::vector<double>> to_rows() const {
    std::vector<std::vector<double>> out(rows_);
    for (std::size_t i = 0; i < rows_; ++i) {
      out[i].assign(data_.begin() + i * cols_, data_.begin() + (i + 1) * cols_);
    }
    return out;
  }

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline DenseMatrix operator*(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) fail(ErrorKind::kDimension, "matrix product shape mismatch");
  DenseMatrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
    }
  }
  return c;
}

inline std::vector<double> operator*(const DenseMatrix& a, std::span<const double> x) {
  if (a.cols() != x.size()) fail(ErrorKind::kDimension, "matrix-vector shape mismatch");
  std::vector<double> y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) acc += a(i, j) * x[j];
    y[i] = acc;
  }
  return y;
}

inline double norm_1(const DenseMatrix& a) {
  double best = 0.0;
  for (std::size_t j = 0; j < a.cols(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) s += std::abs(a(i, j));
    best = std::max(best, s);
  }
  return best;
}

// LU factorisation with partial (row) pivoting: P A = L U, unit-diagonal L
// stored below the diagonal of `lu`.
class LuDecomposition {
 public:
  explicit LuDecomposition(const DenseMatrix& a) : lu_(a), perm_(a.rows()) {
    if (!a.square()) fail(ErrorKind::kDimension, "LU of a non-square matrix");
    const std::size_t n = a.rows();
    for (std::size_t i = 0; i < n; ++i) perm_[i] = i;
    for (std::size_t k = 0; k < n; ++k) {
      std::size_t piv = k;
      double best = std::abs(lu_(k, k));
      for (std::size_t i = k + 1; i < n; ++i) {
        if (std::abs(lu_(i, k)) > best) {
          best = std::abs(lu_(i, k));
          piv = i;
        }
      }
      if (piv != k) {
        for (std::size_t j = 0; j < n; ++j) std::swap(lu_(k, j), lu_(piv, j));
        std::swap(perm_[k], perm_[piv]);
        sign_ = -sign_;
      }
      if (lu_(k, k) == 0.0) {
        exactly_singular_ = true;
        continue;
      }
      for (std::size_t i = k + 1; i < n; ++i) {
        const double f = lu_(i, k) / lu_(k, k);
        lu_(i, k) = f;
        for (std::size_t j = k + 1; j < n; ++j) lu_(i, j) -= f * lu_(k, j);
      }
    }
  }

  std::size_t size() const noexcept { return lu_.rows(); }
  bool exactly_singular() const noexcept { return exactly_singular_; }

  double determinant() const {
    double det = sign_;
    for (std::size_t i = 0; i < size(); ++i) det *= lu_(i, i);
    return det;
  }

  std::vector<double> solve(std::span<const double> b) const {
    const std::size_t n = size();
    if (b.size() != n) fail(ErrorKind::kDimension, "LU solve: rhs size mismatch");
    if (exactly_singular_) fail(ErrorKind::kSingular, "LU solve: matrix is singular");
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) {
      double acc = b[perm_[i]];
      for (std::size_t j = 0; j < i; ++j) acc -= lu_(i, j) * x[j];
      x[i] = acc;
    }
    for (std::size_t i = n; i-- > 0;) {
      double acc = x[i];
      for (std::size_t j = i + 1; j < n; ++j) acc -= lu_(i, j) * x[j];
      x[i] = acc / lu_(i, i);
    }
    return x;
  }

  DenseMatrix inverse() const {
    const std::size_t n = size();
    DenseMatrix inv(n, n);
    std::vector<double> e(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      std::fill(e.begin(), e.end(), 0.0);
      e[j] = 1.0;
      const auto col = solve(e);
      for (std::size_t i = 0; i < n; ++i) inv(i, j) = col[i];
    }
    return inv;
  }

 private:
  DenseMatrix lu_;
  std::vector<std::size_t> perm_;
  double sign_ = 1.0;
  bool exactly_singular_ = false;
};

struct InverseResult {
  DenseMatrix inverse;
  double determinant = 0.0;
  double condition_1 = 0.0;  // ||A||_1 * ||A^-1||_1
};

// Inverts `a` by partial-pivot elimination; throws kSingular when
// |det(a)| <= det_floor.
inline InverseResult invert(const DenseMatrix& a, double det_floor = 1e-9) {
  LuDecomposition lu(a);
  const double det = lu.determinant();
  if (lu.exactly_singular() || !(std::abs(det) > det_floor)) {
    fail(ErrorKind::kSingular,
         "matrix is singular: |det| = " + std::to_string(std::abs(det)) +
             " <= floor " + std::to_string(det_floor));
  }
  InverseResult r;
  r.inverse = lu.inverse();
  r.determinant = det;
  r.condition_1 = norm_1(a) * norm_1(r.inverse);
  return r;
}

}  // namespace fluxtalk

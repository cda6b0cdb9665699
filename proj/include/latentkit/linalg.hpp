#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "latentkit/error.hpp"

namespace latentkit {

using Vector = std::vector<double>;

// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
      throw InvalidArgument("matrix data size does not match " + shape_string());
  }
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw InvalidArgument("ragged matrix initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix diagonal(std::span<const double> d) {
    Matrix m(d.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  Vector col(std::size_t c) const {
    Vector v(rows_);
    for (std::size_t r = 0; r < rows_; ++r) v[r] = (*this)(r, c);
    return v;
  }
  void set_col(std::size_t c, std::span<const double> v) {
    for (std::size_t r = 0; r < rows_; ++r) (*this)(r, c) = v[r];
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  Matrix transpose() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
  }

  std::string shape_string() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
  }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline Matrix operator*(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw InvalidArgument("matrix product shape mismatch: " + a.shape_string() + " * " +
                          b.shape_string());
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  return out;
}

inline Vector operator*(const Matrix& a, std::span<const double> x) {
  if (a.cols() != x.size())
    throw InvalidArgument("matrix-vector shape mismatch: " + a.shape_string() + " * " +
                          std::to_string(x.size()));
  Vector y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j) * x[j];
    y[i] = s;
  }
  return y;
}

inline Matrix operator*(double s, Matrix m) {
  for (double& v : m.data()) v *= s;
  return m;
}

inline Matrix operator-(Matrix a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw InvalidArgument("matrix difference shape mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] -= b.data()[i];
  return a;
}

inline Matrix operator+(Matrix a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw InvalidArgument("matrix sum shape mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] += b.data()[i];
  return a;
}

// y = Aᵀ x without forming the transpose.
inline Vector transpose_times(const Matrix& a, std::span<const double> x) {
  if (a.rows() != x.size()) throw InvalidArgument("transpose-vector shape mismatch");
  Vector y(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double xi = x[i];
    for (std::size_t j = 0; j < a.cols(); ++j) y[j] += a(i, j) * xi;
  }
  return y;
}

// AᵀA, accumulated row by row in fixed order.
inline Matrix gram(const Matrix& a) {
  Matrix g(a.cols(), a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const auto row = a.row(r);
    for (std::size_t i = 0; i < a.cols(); ++i)
      for (std::size_t j = i; j < a.cols(); ++j) g(i, j) += row[i] * row[j];
  }
  for (std::size_t i = 0; i < a.cols(); ++i)
    for (std::size_t j = 0; j < i; ++j) g(i, j) = g(j, i);
  return g;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double frobenius_norm(const Matrix& m) { return norm2(m.data()); }

inline double max_abs(const Matrix& m) {
  double best = 0.0;
  for (double v : m.data()) best = std::max(best, std::abs(v));
  return best;
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

// Eigen-decomposition of a symmetric matrix. Column i of `vectors` pairs with
// values[i]; values are sorted descending.
struct EigenResult {
  Vector values;
  Matrix vectors;
};

namespace detail {

inline double off_diagonal_norm(const Matrix& m) {
  double s = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j)
      if (i != j) s += m(i, j) * m(i, j);
  return std::sqrt(s);
}

}  // namespace detail

// Cyclic Jacobi eigensolver for symmetric matrices.
//
// Sweeps the strictly upper triangle in row-major order and annihilates each
// (p, q) entry with one rotation. Stops once the off-diagonal Frobenius norm
// drops below 1e-12 * ||M||_F, or after 100 sweeps.
inline EigenResult sym_eigendecompose(const Matrix& m) {
  const std::size_t n = m.rows();
  if (n == 0 || m.cols() != n)
    throw InvalidArgument("eigendecomposition needs a square matrix, got " + m.shape_string());
  if (!all_finite(m.data())) throw InvalidArgument("eigendecomposition input has non-finite entries");
  const double scale = frobenius_norm(m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::abs(m(i, j) - m(j, i)) > 1e-12 * std::max(scale, 1e-300))
        throw InvalidArgument("eigendecomposition input is not symmetric at (" + std::to_string(i) +
                              "," + std::to_string(j) + ")");

  Matrix a = m;
  // Symmetrize exactly so the rotations see a single consistent value per pair.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) a(i, j) = a(j, i) = 0.5 * (m(i, j) + m(j, i));
  Matrix v = Matrix::identity(n);

  constexpr int kMaxSweeps = 100;
  const double target = 1e-12 * scale;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    if (detail::off_diagonal_norm(a) <= target) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double app = a(p, p);
        const double aqq = a(q, q);
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = a(q, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });
  EigenResult out{Vector(n), Matrix(n, n)};
  for (std::size_t i = 0; i < n; ++i) {
    out.values[i] = a(order[i], order[i]);
    for (std::size_t k = 0; k < n; ++k) out.vectors(k, i) = v(k, order[i]);
  }
  return out;
}

// Column means of a samples-by-variables matrix.
inline Vector column_means(const Matrix& a) {
  Vector mean(a.cols(), 0.0);
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) mean[c] += a(r, c);
  for (double& m : mean) m /= static_cast<double>(a.rows());
  return mean;
}

inline Matrix center_columns(const Matrix& a) {
  const Vector mean = column_means(a);
  Matrix out = a;
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) out(r, c) -= mean[c];
  return out;
}

// Sample covariance of the columns of A (rows are observations), d - 1 denominator.
inline Matrix covariance(const Matrix& a) {
  if (a.rows() < 2)
    throw InvalidArgument("covariance needs at least 2 rows, got " + std::to_string(a.rows()));
  Matrix c = gram(center_columns(a));
  const double denom = static_cast<double>(a.rows() - 1);
  for (double& v : c.data()) v /= denom;
  return c;
}

// Scales each row to unit L2 norm.
inline Matrix l2_normalize_rows(const Matrix& a) {
  Matrix out = a;
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const double n = norm2(a.row(r));
    if (!(n > 1e-12))
      throw InvalidArgument("cannot normalize row " + std::to_string(r) + ": norm " +
                            std::to_string(n));
    for (double& v : out.row(r)) v /= n;
  }
  return out;
}

inline Matrix l2_normalize_cols(const Matrix& a) {
  return l2_normalize_rows(a.transpose()).transpose();
}

struct WhitenResult {
  Matrix whitened;   // samples x keep
  Matrix transform;  // vars x keep; whitened = (X - mean) * transform
  Vector mean;       // column means removed before projecting
  Vector variances;  // retained covariance eigenvalues, descending
};

// PCA whitening: centers the columns of X and projects onto the top `keep`
// principal axes scaled to unit variance.
inline WhitenResult whiten(const Matrix& x, std::size_t keep) {
  if (keep == 0 || keep > x.cols())
    throw InvalidArgument("whiten: keep must be in [1, " + std::to_string(x.cols()) + "], got " +
                          std::to_string(keep));
  const Matrix cov = covariance(x);
  const EigenResult eig = sym_eigendecompose(cov);
  const double lmax = eig.values.front();
  if (!(lmax > 0.0) || eig.values[keep - 1] < 1e-10 * lmax)
    throw NumericalError("whiten: keep=" + std::to_string(keep) +
                         " exceeds the numerical rank of the covariance");
  WhitenResult out;
  out.mean = column_means(x);
  out.transform = Matrix(x.cols(), keep);
  out.variances.assign(eig.values.begin(), eig.values.begin() + static_cast<std::ptrdiff_t>(keep));
  for (std::size_t j = 0; j < keep; ++j) {
    const double s = 1.0 / std::sqrt(eig.values[j]);
    for (std::size_t i = 0; i < x.cols(); ++i) out.transform(i, j) = eig.vectors(i, j) * s;
  }
  out.whitened = center_columns(x) * out.transform;
  return out;
}

// M^(-1/2) for a symmetric positive definite matrix.
inline Matrix sym_inverse_sqrt(const Matrix& m) {
  const EigenResult eig = sym_eigendecompose(m);
  const std::size_t n = m.rows();
  if (!(eig.values.back() > 1e-14 * std::max(eig.values.front(), 1e-300)))
    throw NumericalError("inverse square root of a singular matrix");
  Matrix out(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    const double s = 1.0 / std::sqrt(eig.values[k]);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) out(i, j) += eig.vectors(i, k) * s * eig.vectors(j, k);
  }
  return out;
}

// Symmetric orthonormalization of the columns: Q = N (NᵀN)^(-1/2).
inline Matrix orthonormalize_columns(const Matrix& n) {
  return n * sym_inverse_sqrt(gram(n));
}

}  // namespace latentkit

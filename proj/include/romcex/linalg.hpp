#pragma once

// Dense linear algebra: a row-major matrix type, a cyclic Jacobi symmetric
// eigensolver, an SVD built on it, spectral projectors, PSD square roots,
// jittered Cholesky, and singular numbers.

#include <cstddef>
#include <initializer_list>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace romcex {

using Vector = std::vector<double>;

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> entries);

  static Matrix identity(std::size_t n);
  static Matrix diagonal(std::span<const double> values);
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  /// Builds a matrix whose columns are the given vectors (all of equal length).
  static Matrix from_columns(const std::vector<Vector>& columns);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return entries_.empty(); }
  bool is_square() const noexcept { return rows_ == cols_; }

  double& operator()(std::size_t i, std::size_t j) { return entries_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return entries_[i * cols_ + j]; }

  std::span<double> row(std::size_t i) { return {entries_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const { return {entries_.data() + i * cols_, cols_}; }
  Vector col(std::size_t j) const;
  void set_col(std::size_t j, std::span<const double> values);

  std::span<const double> entries() const noexcept { return entries_; }
  std::span<double> entries() noexcept { return entries_; }

  Matrix transpose() const;
  /// The first `count` columns.
  Matrix leading_cols(std::size_t count) const;

  Matrix& operator+=(const Matrix& other);
  Matrix& operator-=(const Matrix& other);
  Matrix& operator*=(double factor);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> entries_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(double factor, Matrix a);
Matrix operator*(const Matrix& a, const Matrix& b);
Vector operator*(const Matrix& a, std::span<const double> x);

/// a^T * b without forming the transpose.
Matrix transpose_times(const Matrix& a, const Matrix& b);
Vector transpose_times(const Matrix& a, std::span<const double> x);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);
void axpy(double alpha, std::span<const double> x, std::span<double> y);
Matrix outer(std::span<const double> a, std::span<const double> b);

double max_abs(const Matrix& a);
double max_abs(std::span<const double> a);
double frobenius_norm(const Matrix& a);
double trace(const Matrix& a);
bool is_symmetric(const Matrix& a, double tol);
/// Largest singular value.
double spectral_norm(const Matrix& a);

/// Scales v so that its first entry of (near-)largest magnitude is positive.
void fix_sign(std::span<double> v);

// ---------------------------------------------------------------------------

struct SymEigen {
  Vector values;   // ascending
  Matrix vectors;  // column k belongs to values[k]
};

struct SymEigenOptions {
  double tol = 1e-13;  // off-diagonal Frobenius threshold relative to ||A||_F
  int max_sweeps = 100;
};

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix.
SymEigen sym_eigen(const Matrix& a, const SymEigenOptions& options = {});
inline SymEigen sym_eigen(const Matrix& a, double tol) {
  return sym_eigen(a, SymEigenOptions{tol, 100});
}

struct SvdResult {
  Matrix left;           // m x m, orthonormal columns
  Vector singular_values;  // min(m, n), descending
  Matrix right;          // n x n, orthonormal columns

  std::size_t rank(double relative_tol = 1e-12) const;
  /// left[:, :k] diag(s[:k]) right[:, :k]^T
  Matrix truncated(std::size_t k) const;
};

/// Full SVD via the eigen-decomposition of the smaller Gram matrix. Singular
/// values below tol * s_1 are treated as zero; their vectors are completed by
/// Gram-Schmidt.
SvdResult svd(const Matrix& r, double tol = 1e-13);
/// Economy SVD: left is m x p and right is n x p with p = min(m, n).
SvdResult svd_thin(const Matrix& r, double tol = 1e-13);

struct SpectralOptions {
  double tie_tolerance = 1e-12;  // eigenvalues closer than this (times ||A||_F) are one value
  double gap = 1e-8;             // required separation (times ||A||_F) from other values
};

/// Distinct eigenvalues of a decomposition, ascending, grouped by tie tolerance.
Vector distinct_eigenvalues(const SymEigen& eig, double scale, const SpectralOptions& options = {});

/// Orthogonal projector onto the eigenspace of the `which`-th distinct
/// eigenvalue, evaluated as the Lagrange interpolation polynomial L_which(A).
Matrix spectral_projector(const Matrix& a, const SymEigen& eig, std::size_t which,
                          const SpectralOptions& options = {});

/// Symmetric PSD square root V sqrt(L) V^T. Eigenvalues down to -tol * max(1, ||C||_F)
/// are clamped to zero.
Matrix matrix_sqrt_psd(const Matrix& c, double tol = 1e-10);

struct CholFactor {
  Matrix lower;
  double jitter_used = 0.0;
};

struct CholOptions {
  double base_jitter = 1e-12;  // relative to trace / n
  double growth = 10.0;
  double max_jitter = 1e-4;    // relative to trace / n
};

/// Cholesky factorization with geometric diagonal jitter escalation. The first
/// attempt uses no jitter.
CholFactor chol_psd(const Matrix& c, const CholOptions& options = {});
inline CholFactor chol_psd(const Matrix& c, double base_jitter) {
  CholOptions options;
  options.base_jitter = base_jitter;
  return chol_psd(c, options);
}

Vector chol_solve(const CholFactor& factor, std::span<const double> b);
/// Solves column-wise.
Matrix chol_solve(const CholFactor& factor, const Matrix& b);

/// k-th singular number, 1-based; k may be min(m, n) + 1, which yields zero.
double s_number(const Matrix& r, std::size_t k);

/// Modified Gram-Schmidt (two passes) of v against the first `count` columns of q.
/// Returns the norm of the remainder before normalization.
double orthogonalize(const Matrix& q, std::size_t count, std::span<double> v);

// CSV interchange: one row per line, '.' decimal separator, no header.
void write_csv(std::ostream& out, const Matrix& a);
Matrix read_csv(std::istream& in);
std::string format_double(double value);

}  // namespace romcex

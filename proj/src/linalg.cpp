#include "romcex/linalg.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "romcex/error.hpp"

namespace romcex {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), entries_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> entries)
    : rows_(rows), cols_(cols), entries_(std::move(entries)) {
  require(entries_.size() == rows * cols, ErrorKind::kDomain,
          "matrix entry count does not match its shape");
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::diagonal(std::span<const double> values) {
  Matrix m(values.size(), values.size());
  for (std::size_t i = 0; i < values.size(); ++i) m(i, i) = values[i];
  return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  Matrix m(r, c);
  std::size_t i = 0;
  for (const auto& row : rows) {
    require(row.size() == c, ErrorKind::kDomain, "ragged matrix literal");
    std::copy(row.begin(), row.end(), m.row(i++).begin());
  }
  return m;
}

Matrix Matrix::from_columns(const std::vector<Vector>& columns) {
  if (columns.empty()) return {};
  Matrix m(columns.front().size(), columns.size());
  for (std::size_t j = 0; j < columns.size(); ++j) m.set_col(j, columns[j]);
  return m;
}

Vector Matrix::col(std::size_t j) const {
  Vector v(rows_);
  for (std::size_t i = 0; i < rows_; ++i) v[i] = (*this)(i, j);
  return v;
}

void Matrix::set_col(std::size_t j, std::span<const double> values) {
  require(values.size() == rows_, ErrorKind::kDomain, "column length mismatch");
  for (std::size_t i = 0; i < rows_; ++i) (*this)(i, j) = values[i];
}

Matrix Matrix::transpose() const {
  Matrix t(cols_, rows_);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
  return t;
}

Matrix Matrix::leading_cols(std::size_t count) const {
  require(count <= cols_, ErrorKind::kDomain, "leading_cols: count exceeds column count");
  Matrix m(rows_, count);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < count; ++j) m(i, j) = (*this)(i, j);
  return m;
}

Matrix& Matrix::operator+=(const Matrix& other) {
  require(rows_ == other.rows_ && cols_ == other.cols_, ErrorKind::kDomain, "shape mismatch in +");
  for (std::size_t k = 0; k < entries_.size(); ++k) entries_[k] += other.entries_[k];
  return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
  require(rows_ == other.rows_ && cols_ == other.cols_, ErrorKind::kDomain, "shape mismatch in -");
  for (std::size_t k = 0; k < entries_.size(); ++k) entries_[k] -= other.entries_[k];
  return *this;
}

Matrix& Matrix::operator*=(double factor) {
  for (double& e : entries_) e *= factor;
  return *this;
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(double factor, Matrix a) { return a *= factor; }

Matrix operator*(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.rows(), ErrorKind::kDomain, "shape mismatch in matrix product");
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ci = c.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto bk = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

Vector operator*(const Matrix& a, std::span<const double> x) {
  require(a.cols() == x.size(), ErrorKind::kDomain, "shape mismatch in matrix-vector product");
  Vector y(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) y[i] = dot(a.row(i), x);
  return y;
}

Matrix transpose_times(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows(), ErrorKind::kDomain, "shape mismatch in transpose product");
  Matrix c(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    auto ak = a.row(k);
    auto bk = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = ak[i];
      if (aki == 0.0) continue;
      auto ci = c.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) ci[j] += aki * bk[j];
    }
  }
  return c;
}

Vector transpose_times(const Matrix& a, std::span<const double> x) {
  require(a.rows() == x.size(), ErrorKind::kDomain, "shape mismatch in transpose product");
  Vector y(a.cols(), 0.0);
  for (std::size_t k = 0; k < a.rows(); ++k) axpy(x[k], a.row(k), y);
  return y;
}

double dot(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorKind::kDomain, "dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  require(x.size() == y.size(), ErrorKind::kDomain, "axpy: length mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

Matrix outer(std::span<const double> a, std::span<const double> b) {
  Matrix m(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) m(i, j) = a[i] * b[j];
  return m;
}

double max_abs(std::span<const double> a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

double max_abs(const Matrix& a) { return max_abs(a.entries()); }

double frobenius_norm(const Matrix& a) { return norm2(a.entries()); }

double trace(const Matrix& a) {
  double t = 0.0;
  for (std::size_t i = 0; i < std::min(a.rows(), a.cols()); ++i) t += a(i, i);
  return t;
}

bool is_symmetric(const Matrix& a, double tol) {
  if (!a.is_square()) return false;
  const double scale = std::max(1.0, max_abs(a));
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j)
      if (std::abs(a(i, j) - a(j, i)) > tol * scale) return false;
  return true;
}

double spectral_norm(const Matrix& a) {
  if (a.empty()) return 0.0;
  return svd(a).singular_values.front();
}

void fix_sign(std::span<double> v) {
  const double m = max_abs(v);
  if (m == 0.0) return;
  for (double& x : v) {
    if (std::abs(x) >= m * (1.0 - 1e-9)) {
      if (x < 0.0)
        for (double& y : v) y = -y;
      return;
    }
  }
}

// ---------------------------------------------------------------------------

SymEigen sym_eigen(const Matrix& input, const SymEigenOptions& options) {
  require(input.is_square(), ErrorKind::kDomain, "sym_eigen: matrix is not square");
  require(options.tol > 0.0, ErrorKind::kDomain, "sym_eigen: tolerance must be positive");
  require(is_symmetric(input, std::max(options.tol, 1e-12)), ErrorKind::kDomain,
          "sym_eigen: matrix is not symmetric");

  const std::size_t n = input.rows();
  Matrix a = input;
  // Work on the exactly symmetrized input.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) a(i, j) = a(j, i) = 0.5 * (a(i, j) + a(j, i));
  Matrix v = Matrix::identity(n);

  const double threshold = options.tol * frobenius_norm(a);
  auto off_norm = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) s += 2.0 * a(i, j) * a(i, j);
    return std::sqrt(s);
  };

  int sweep = 0;
  double off = off_norm();
  while (off > threshold) {
    if (sweep++ >= options.max_sweeps) {
      fail(ErrorKind::kConvergence,
           "sym_eigen: no convergence after " + std::to_string(options.max_sweeps) +
               " sweeps, off-diagonal residual " + format_double(off));
    }
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        a(p, p) -= t * apq;
        a(q, q) += t * apq;
        a(p, q) = a(q, p) = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
          if (r == p || r == q) continue;
          const double arp = a(r, p);
          const double arq = a(r, q);
          a(r, p) = a(p, r) = c * arp - s * arq;
          a(r, q) = a(q, r) = s * arp + c * arq;
        }
        for (std::size_t r = 0; r < n; ++r) {
          const double vrp = v(r, p);
          const double vrq = v(r, q);
          v(r, p) = c * vrp - s * vrq;
          v(r, q) = s * vrp + c * vrq;
        }
      }
    }
    off = off_norm();
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a(i, i) < a(j, j); });

  SymEigen result{Vector(n), Matrix(n, n)};
  for (std::size_t k = 0; k < n; ++k) {
    result.values[k] = a(order[k], order[k]);
    Vector col = v.col(order[k]);
    fix_sign(col);
    result.vectors.set_col(k, col);
  }
  return result;
}

double orthogonalize(const Matrix& q, std::size_t count, std::span<double> v) {
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t j = 0; j < count; ++j) {
      double proj = 0.0;
      for (std::size_t i = 0; i < q.rows(); ++i) proj += q(i, j) * v[i];
      for (std::size_t i = 0; i < q.rows(); ++i) v[i] -= proj * q(i, j);
    }
  }
  return norm2(v);
}

namespace {

// Fills columns [filled, q.cols()) of q with an orthonormal completion.
void complete_basis(Matrix& q, std::size_t filled) {
  const std::size_t n = q.rows();
  for (std::size_t e = 0; e < n && filled < q.cols(); ++e) {
    Vector v(n, 0.0);
    v[e] = 1.0;
    const double nrm = orthogonalize(q, filled, v);
    if (nrm < 1e-8) continue;
    for (double& x : v) x /= nrm;
    fix_sign(v);
    q.set_col(filled++, v);
  }
  require(filled == q.cols(), ErrorKind::kConvergence, "svd: basis completion failed");
}

// SVD for rows >= cols; `thin` keeps only cols left vectors.
SvdResult svd_tall(const Matrix& r, double tol, bool thin) {
  const std::size_t m = r.rows();
  const std::size_t n = r.cols();
  const SymEigen eig = sym_eigen(transpose_times(r, r));
  Matrix right(n, n);
  for (std::size_t k = 0; k < n; ++k) right.set_col(k, eig.vectors.col(n - 1 - k));

  // Singular values as column norms of R V; more accurate than sqrt(lambda).
  const Matrix rv = r * right;
  Vector sigma(n);
  for (std::size_t k = 0; k < n; ++k) sigma[k] = norm2(rv.col(k));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return sigma[i] > sigma[j]; });

  SvdResult out{Matrix(m, thin ? n : m), Vector(n), Matrix(n, n)};
  const double cutoff = n == 0 ? 0.0 : tol * sigma[order[0]];
  std::size_t filled = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t src = order[k];
    Vector v = right.col(src);
    Vector u = rv.col(src);
    double s = sigma[src];
    if (s <= cutoff || s == 0.0) {
      s = 0.0;
    } else {
      for (double& x : u) x /= s;
      // Sign convention applies to the right vector; the left one follows.
      const double m_abs = max_abs(v);
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (std::abs(v[i]) >= m_abs * (1.0 - 1e-9)) {
          if (v[i] < 0.0) {
            for (double& x : v) x = -x;
            for (double& x : u) x = -x;
          }
          break;
        }
      }
      out.left.set_col(filled++, u);
    }
    out.singular_values[k] = s;
    out.right.set_col(k, v);
  }
  complete_basis(out.left, filled);
  return out;
}

}  // namespace

SvdResult svd(const Matrix& r, double tol) {
  if (r.rows() >= r.cols()) return svd_tall(r, tol, false);
  SvdResult t = svd_tall(r.transpose(), tol, false);
  return SvdResult{std::move(t.right), std::move(t.singular_values), std::move(t.left)};
}

SvdResult svd_thin(const Matrix& r, double tol) {
  if (r.rows() >= r.cols()) return svd_tall(r, tol, true);
  SvdResult t = svd_tall(r.transpose(), tol, true);
  return SvdResult{std::move(t.right), std::move(t.singular_values), std::move(t.left)};
}

std::size_t SvdResult::rank(double relative_tol) const {
  if (singular_values.empty() || singular_values.front() == 0.0) return 0;
  const double cutoff = relative_tol * singular_values.front();
  return static_cast<std::size_t>(std::count_if(singular_values.begin(), singular_values.end(),
                                                [&](double s) { return s > cutoff; }));
}

Matrix SvdResult::truncated(std::size_t k) const {
  require(k <= singular_values.size(), ErrorKind::kDomain, "truncated: rank exceeds singular count");
  Matrix out(left.rows(), right.rows());
  for (std::size_t j = 0; j < k; ++j) {
    const double s = singular_values[j];
    if (s == 0.0) continue;
    for (std::size_t i = 0; i < out.rows(); ++i) {
      const double ui = s * left(i, j);
      for (std::size_t l = 0; l < out.cols(); ++l) out(i, l) += ui * right(l, j);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

Vector distinct_eigenvalues(const SymEigen& eig, double scale, const SpectralOptions& options) {
  Vector distinct;
  const double tie = options.tie_tolerance * std::max(scale, 1e-300);
  for (double value : eig.values) {
    if (distinct.empty() || value - distinct.back() > tie) distinct.push_back(value);
  }
  return distinct;
}

Matrix spectral_projector(const Matrix& a, const SymEigen& eig, std::size_t which,
                          const SpectralOptions& options) {
  require(a.is_square() && eig.values.size() == a.rows(), ErrorKind::kDomain,
          "spectral_projector: decomposition does not match the matrix");
  const double scale = frobenius_norm(a);
  const Vector distinct = distinct_eigenvalues(eig, scale, options);
  require(which < distinct.size(), ErrorKind::kDomain,
          "spectral_projector: distinct-eigenvalue index out of range");
  const double target = distinct[which];
  const double gap = options.gap * std::max(scale, 1e-300);
  for (std::size_t k = 0; k < distinct.size(); ++k) {
    if (k != which && std::abs(distinct[k] - target) <= gap) {
      fail(ErrorKind::kDegeneracy, "spectral_projector: eigenvalue " + format_double(target) +
                                       " is not separated from " + format_double(distinct[k]));
    }
  }

  const std::size_t n = a.rows();
  Matrix p = Matrix::identity(n);
  for (std::size_t k = 0; k < distinct.size(); ++k) {
    if (k == which) continue;
    Matrix factor = a;
    for (std::size_t i = 0; i < n; ++i) factor(i, i) -= distinct[k];
    factor *= 1.0 / (target - distinct[k]);
    p = p * factor;
  }
  // Symmetrize the product, which is symmetric in exact arithmetic.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) p(i, j) = p(j, i) = 0.5 * (p(i, j) + p(j, i));
  return p;
}

Matrix matrix_sqrt_psd(const Matrix& c, double tol) {
  const SymEigen eig = sym_eigen(c);
  const double floor = -tol * std::max(1.0, frobenius_norm(c));
  const std::size_t n = c.rows();
  Matrix scaled = eig.vectors;
  for (std::size_t k = 0; k < n; ++k) {
    const double lambda = eig.values[k];
    if (lambda < floor) {
      fail(ErrorKind::kNotPsd, "matrix_sqrt_psd: eigenvalue " + format_double(lambda) +
                                   " is below the PSD tolerance");
    }
    const double root = std::sqrt(std::max(lambda, 0.0));
    for (std::size_t i = 0; i < n; ++i) scaled(i, k) *= root;
  }
  Matrix s = scaled * eig.vectors.transpose();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) s(i, j) = s(j, i) = 0.5 * (s(i, j) + s(j, i));
  return s;
}

namespace {

bool try_cholesky(const Matrix& c, double jitter, Matrix& lower) {
  const std::size_t n = c.rows();
  lower = Matrix(n, n);
  double max_diag = 0.0;
  for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, std::abs(c(i, i)));
  const double pivot_floor = 8.0 * static_cast<double>(n) * 2.220446049250313e-16 * max_diag;
  for (std::size_t j = 0; j < n; ++j) {
    double d = c(j, j) + jitter;
    for (std::size_t k = 0; k < j; ++k) d -= lower(j, k) * lower(j, k);
    if (!(d > pivot_floor)) return false;
    const double ljj = std::sqrt(d);
    lower(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = c(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= lower(i, k) * lower(j, k);
      lower(i, j) = s / ljj;
    }
  }
  return true;
}

}  // namespace

CholFactor chol_psd(const Matrix& c, const CholOptions& options) {
  require(c.is_square(), ErrorKind::kDomain, "chol_psd: matrix is not square");
  require(is_symmetric(c, 1e-10), ErrorKind::kDomain, "chol_psd: matrix is not symmetric");
  CholFactor f;
  if (c.rows() == 0) return f;
  if (try_cholesky(c, 0.0, f.lower)) return f;

  double scale = trace(c) / static_cast<double>(c.rows());
  if (!(scale > 0.0)) scale = 1.0;
  const double cap = options.max_jitter * scale;
  for (double jitter = options.base_jitter * scale; jitter <= cap * (1.0 + 1e-12);
       jitter *= options.growth) {
    if (try_cholesky(c, jitter, f.lower)) {
      f.jitter_used = jitter;
      return f;
    }
  }
  fail(ErrorKind::kConditioning,
       "chol_psd: factorization failed with jitter up to " + format_double(cap));
}

Vector chol_solve(const CholFactor& factor, std::span<const double> b) {
  const Matrix& l = factor.lower;
  const std::size_t n = l.rows();
  require(b.size() == n, ErrorKind::kDomain, "chol_solve: right-hand side length mismatch");
  Vector y(b.begin(), b.end());
  for (std::size_t i = 0; i < n; ++i) {
    double s = y[i];
    for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * y[k];
    y[i] = s / l(i, i);
  }
  for (std::size_t ii = n; ii-- > 0;) {
    double s = y[ii];
    for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * y[k];
    y[ii] = s / l(ii, ii);
  }
  return y;
}

Matrix chol_solve(const CholFactor& factor, const Matrix& b) {
  Matrix x(b.rows(), b.cols());
  for (std::size_t j = 0; j < b.cols(); ++j) x.set_col(j, chol_solve(factor, b.col(j)));
  return x;
}

double s_number(const Matrix& r, std::size_t k) {
  const std::size_t p = std::min(r.rows(), r.cols());
  require(k >= 1 && k <= p + 1, ErrorKind::kDomain,
          "s_number: index " + std::to_string(k) + " outside [1, " + std::to_string(p + 1) + "]");
  if (k == p + 1) return 0.0;
  return svd(r).singular_values[k - 1];
}

// ---------------------------------------------------------------------------

std::string format_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, ptr);
}

void write_csv(std::ostream& out, const Matrix& a) {
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) {
      if (j) out << ',';
      out << format_double(a(i, j));
    }
    out << '\n';
  }
}

Matrix read_csv(std::istream& in) {
  std::vector<double> entries;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t count = 0;
    std::size_t start = 0;
    while (start <= line.size()) {
      std::size_t end = line.find(',', start);
      if (end == std::string::npos) end = line.size();
      const std::string field = line.substr(start, end - start);
      std::size_t first = field.find_first_not_of(" \t");
      std::size_t last = field.find_last_not_of(" \t");
      if (first == std::string::npos) fail(ErrorKind::kIo, "csv: empty field on line " + std::to_string(rows + 1));
      double value = 0.0;
      auto [ptr, ec] = std::from_chars(field.data() + first, field.data() + last + 1, value);
      if (ec != std::errc() || ptr != field.data() + last + 1) {
        fail(ErrorKind::kIo, "csv: cannot parse '" + field + "' on line " + std::to_string(rows + 1));
      }
      if (!std::isfinite(value)) fail(ErrorKind::kIo, "csv: non-finite entry on line " + std::to_string(rows + 1));
      entries.push_back(value);
      ++count;
      start = end + 1;
    }
    if (rows == 0) cols = count;
    if (count != cols) fail(ErrorKind::kIo, "csv: ragged row " + std::to_string(rows + 1));
    ++rows;
  }
  return Matrix(rows, cols, std::move(entries));
}

}  // namespace romcex

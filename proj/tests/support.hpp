#pragma once

#include <cstdint>
#include <functional>

#include "romcex/error.hpp"
#include "romcex/linalg.hpp"
#include "romcex/random.hpp"

namespace romcex::testing {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  NormalStream rng(seed, 777);
  Matrix a(rows, cols);
  for (double& x : a.entries()) x = rng();
  return a;
}

inline Matrix random_symmetric(std::size_t n, std::uint64_t seed) {
  Matrix a = random_matrix(n, n, seed);
  return 0.5 * (a + a.transpose());
}

inline Matrix random_psd(std::size_t n, std::size_t rank, std::uint64_t seed) {
  const Matrix b = random_matrix(n, rank, seed);
  return b * b.transpose();
}

/// Random n x k matrix with orthonormal columns (Gram-Schmidt of Gaussians).
inline Matrix random_stiefel(std::size_t n, std::size_t k, NormalStream& rng) {
  Matrix q(n, k);
  for (std::size_t j = 0; j < k; ++j) {
    Vector v = rng.draw(n);
    const double nrm = orthogonalize(q, j, v);
    for (double& x : v) x /= nrm;
    q.set_col(j, v);
  }
  return q;
}

inline bool throws_kind(const std::function<void()>& fn, ErrorKind kind) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind() == kind;
  }
  return false;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) { return max_abs(a - b); }

}  // namespace romcex::testing

#pragma once

// A parametric object mu -> r(mu), sampled on a SnapshotSet, viewed through
// its associated linear map R u = <r(.), u>. The correlation pair
// C_U = R^T R and C_Q = R R^T share their nonzero spectrum; the SVD of R
// gives the Karhunen-Loeve expansion r(mu) = sum_j sigma_j s_j(mu) v_j.

#include <filesystem>
#include <string>

#include "json.hpp"
#include "romcex/linalg.hpp"
#include "romcex/snapshots.hpp"

namespace romcex {

/// Row k is sqrt(rho_k) * r(mu_k)^T, so that R^T R is the rho-weighted
/// correlation and the adjoint with respect to the weighted inner product is
/// a plain transpose.
Matrix build_map(const SnapshotSet& snapshots);

struct CorrelationPair {
  Matrix c_u;  // n x n, sum_k rho_k r_k r_k^T
  Matrix c_q;  // m x m, sqrt(rho_i rho_j) <r_i, r_j>
};

CorrelationPair correlation_u(const SnapshotSet& snapshots);

/// Unweighted Gram kernel <r(mu_i), r(mu_j)>.
Matrix gram_kernel(const SnapshotSet& snapshots);

struct KleBasis {
  Vector sigmas;           // descending, positive
  Matrix modes;            // n x rank, orthonormal
  Matrix param_functions;  // m x rank, s_j(mu_k); rho-orthonormal columns
  Vector weights;          // rho of the source snapshots
  double tol = 1e-12;
  std::string source_hash;

  std::size_t rank() const noexcept { return sigmas.size(); }
};

/// Components with sigma_j <= tol * sigma_1 are dropped. An all-zero snapshot
/// set yields an empty basis.
KleBasis kle(const SnapshotSet& snapshots, double tol = 1e-12);

/// sum_{j < rank} sigma_j s_j(mu_k) v_j
Vector reconstruct(const KleBasis& basis, std::size_t rank, std::size_t k);

/// rho-weighted squared reconstruction error sum_k rho_k ||r_k - r_M(mu_k)||^2.
double weighted_reconstruction_error(const SnapshotSet& snapshots, const KleBasis& basis, std::size_t rank);

/// Keeps the triplets with sigma_j >= threshold.
KleBasis truncate_by_threshold(const KleBasis& basis, double threshold);

/// `<dir>/sigmas.csv`, `modes.csv`, `param_functions.csv`, `kle.json`.
void save_kle(const KleBasis& basis, const std::filesystem::path& dir);
KleBasis load_kle(const std::filesystem::path& dir);

}  // namespace romcex

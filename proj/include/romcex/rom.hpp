#pragma once

// Reduced-order model builders: POD, the reduced basis method for affinely
// parametrized coercive problems, and greedy rank-one tensor approximation by
// alternating least squares.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "romcex/darcy.hpp"
#include "romcex/linalg.hpp"
#include "romcex/snapshots.hpp"

namespace romcex {

// ---------------------------------------------------------------------------
// POD

struct PodBasis {
  Matrix columns;          // n x k, orthonormal
  double captured_energy = 0.0;
  Vector singular_values;  // all nonzero singular values of the weighted snapshot matrix
};

/// Leading k left singular vectors of Z = states * diag(sqrt(weights)).
PodBasis pod_basis(const SnapshotSet& snapshots, std::size_t k);

/// ||Z - V V^T Z||_F^2 for any V with orthonormal columns.
double pod_objective(const SnapshotSet& snapshots, const Matrix& v);

// ---------------------------------------------------------------------------
// Affine operators and RBM

/// theta(mu) = offset + scale * mu[index]; a constant form ignores mu.
struct ThetaForm {
  enum class Kind { kIdentity, kConstant, kAffine };
  Kind kind = Kind::kIdentity;
  std::size_t index = 0;
  double scale = 1.0;
  double offset = 0.0;

  static ThetaForm identity(std::size_t index) { return {Kind::kIdentity, index, 1.0, 0.0}; }
  static ThetaForm constant(double value) { return {Kind::kConstant, 0, 0.0, value}; }
  static ThetaForm affine(std::size_t index, double scale, double offset) {
    return {Kind::kAffine, index, scale, offset};
  }
  double operator()(std::span<const double> mu) const;
};

struct ParamBox {
  Vector lower;
  Vector upper;

  std::size_t dim() const noexcept { return lower.size(); }
  bool contains(std::span<const double> mu, double slack = 1e-12) const;
  Vector center() const;
};

struct AffineOperator {
  std::vector<Matrix> components;  // symmetric n x n
  std::vector<ThetaForm> theta;
  ParamBox box;

  std::size_t size() const noexcept { return components.empty() ? 0 : components.front().rows(); }
  Vector thetas(std::span<const double> mu) const;
  Matrix assemble(std::span<const double> mu) const;
  void validate() const;
  /// Attempts a Cholesky factorization at every box corner (up to 2^10 of
  /// them), the center and `random_points` seeded interior points. Throws
  /// kCoercivity naming the first failing mu.
  void check_coercivity(std::uint64_t seed = 0, std::size_t random_points = 16) const;
};

/// Piecewise-constant conductivity kappa = mu_q on subdomain q with
/// homogeneous Dirichlet data on every edge. Faces inside subdomain q and
/// boundary faces of its cells belong to A_q; a face between two subdomains
/// belongs to the lower-indexed one so that the decomposition stays affine.
struct AffineProblem {
  AffineOperator op;
  Vector load;
};

AffineProblem darcy_affine(const darcy::Grid2D& grid, const std::vector<std::size_t>& subdomain_of_cell,
                           std::span<const double> source, const ParamBox& box);

/// Two subdomains split at cell column `split` (cells with i < split are subdomain 0).
AffineProblem darcy_two_subdomain(const darcy::Grid2D& grid, std::size_t split, std::span<const double> source,
                                  const ParamBox& box);

struct RbmModel {
  Matrix basis;                          // n x n_rb, orthonormal
  std::vector<Matrix> reduced_components;  // basis^T A_q basis
  Vector reduced_load;                   // basis^T f
  std::vector<ThetaForm> theta;
  ParamBox box;
  std::vector<Vector> train_params;
  std::vector<std::size_t> kept;         // training indices that contributed a basis vector

  std::size_t dim() const noexcept { return basis.cols(); }
};

struct RbmOptions {
  double drop_tol = 1e-10;  // relative remainder below which a snapshot is dependent
  unsigned threads = 1;
};

/// Full solve u = A(mu)^{-1} f; throws kCoercivity when A(mu) is not positive definite.
Vector affine_solve(const AffineOperator& op, std::span<const double> load, std::span<const double> mu);

RbmModel rbm_offline(const AffineOperator& op, std::span<const double> load,
                     const std::vector<Vector>& train_params, const RbmOptions& options = {});

struct RbmSolution {
  Vector coefficients;
  Vector lifted;
  double energy = 0.0;  // f^T u_n
};

RbmSolution rbm_online(const RbmModel& model, std::span<const double> mu);

/// <A(mu)(u - u_n), u - u_n> computed from the difference vector.
double energy_error(const AffineOperator& op, std::span<const double> load, const RbmModel& model,
                    std::span<const double> mu);

void save_rbm(const RbmModel& model, const std::filesystem::path& dir);
RbmModel load_rbm(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Tensor ALS

class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(std::size_t n_mu, std::size_t n_m, std::size_t n_n, double fill = 0.0);

  std::size_t dim(int mode) const noexcept { return dims_[static_cast<std::size_t>(mode)]; }
  double& operator()(std::size_t a, std::size_t b, std::size_t c) { return data_[(a * dims_[1] + b) * dims_[2] + c]; }
  double operator()(std::size_t a, std::size_t b, std::size_t c) const {
    return data_[(a * dims_[1] + b) * dims_[2] + c];
  }
  std::span<const double> entries() const noexcept { return data_; }
  std::span<double> entries() noexcept { return data_; }
  double norm() const;

 private:
  std::size_t dims_[3] = {0, 0, 0};
  std::vector<double> data_;
};

struct CpTerm {
  Vector mu;  // unit norm
  Vector m;   // carries the magnitude
  Vector n;   // unit norm
};

struct TensorCP {
  std::vector<CpTerm> terms;
  /// Frobenius error of the full CP sum after every single-factor update.
  Vector objective_trace;
  std::size_t dims[3] = {0, 0, 0};

  std::size_t rank() const noexcept { return terms.size(); }
  Tensor3 full() const;
};

struct AlsOptions {
  std::size_t rank = 1;
  std::size_t sweeps = 500;
  double tol = 1e-14;  // relative objective decrease that ends a term's inner loop
  std::uint64_t seed = 0;
};

TensorCP tensor_als(const Tensor3& samples, const AlsOptions& options);

/// CSV with header `i_mu,i_M,i_N,value`, one line per entry; every entry of
/// the inferred box must appear exactly once.
void write_tensor_csv(std::ostream& out, const Tensor3& t);
Tensor3 read_tensor_csv(std::istream& in);

void save_tensor_cp(const TensorCP& cp, const std::filesystem::path& dir);
TensorCP load_tensor_cp(const std::filesystem::path& dir);

}  // namespace romcex

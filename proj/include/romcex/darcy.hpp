#pragma once

// Cell-centered finite-volume model of steady and transient Darcy flow
//   dw/dt - div(kappa grad w) = g
// on a rectangle, with kappa = exp(q) and q a Karhunen-Loeve random field.

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "json.hpp"
#include "romcex/linalg.hpp"
#include "romcex/snapshots.hpp"

namespace romcex::darcy {

struct Grid2D {
  std::size_t nx = 2;
  std::size_t ny = 2;
  double hx = 1.0;
  double hy = 1.0;
  std::vector<std::size_t> extraction_cells;

  std::size_t cell_count() const noexcept { return nx * ny; }
  std::size_t index(std::size_t i, std::size_t j) const noexcept { return i + nx * j; }
  double center_x(std::size_t i) const noexcept { return (static_cast<double>(i) + 0.5) * hx; }
  double center_y(std::size_t j) const noexcept { return (static_cast<double>(j) + 0.5) * hy; }
  double cell_volume() const noexcept { return hx * hy; }

  /// nx, ny >= 2 (unless `allow_single_cell`), positive sizes, and extraction
  /// cells strictly interior.
  void validate(bool allow_single_cell = false) const;
  bool is_extraction(std::size_t cell) const;
};

struct ConductivityField {
  Vector log_values;
  Vector kappa;

  static ConductivityField from_log(Vector log_values);
  static ConductivityField constant(std::size_t cells, double kappa);
};

enum class CovarianceKind { kExponential, kSquaredExponential };

struct KleFieldSpec {
  double mean = 0.0;
  double variance = 1.0;
  double correlation_length = 0.25;
  std::size_t n_modes = 4;
  CovarianceKind kind = CovarianceKind::kExponential;
};

/// Leading eigenpairs of the cell covariance matrix C_ij = variance * k(|x_i - x_j|),
/// where k(d) = exp(-d / l) or exp(-d^2 / (2 l^2)). The modes are Euclidean-
/// orthonormal cell vectors; the integral-operator eigenvalues are the
/// returned values times the cell volume.
struct FieldModes {
  double mean = 0.0;
  Vector eigenvalues;  // descending, nonnegative
  Matrix modes;        // cells x n_modes
};

Matrix covariance_matrix(const Grid2D& grid, const KleFieldSpec& spec);
FieldModes field_modes(const Grid2D& grid, const KleFieldSpec& spec);

/// q = mean + sum_j sqrt(lambda_j) xi_j v_j, kappa = exp(q).
ConductivityField sample_conductivity(const FieldModes& modes, std::span<const double> xi);
ConductivityField sample_conductivity(const FieldModes& modes, std::uint64_t seed, std::uint64_t stream,
                                      Vector* xi_out = nullptr);

enum class EdgeKind { kDirichlet, kNoFlux };

struct EdgeCondition {
  EdgeKind kind = EdgeKind::kDirichlet;
  Vector values;  // one per boundary face along the edge (west/east: ny, south/north: nx)
};

struct BoundaryConditions {
  EdgeCondition west, east, south, north;

  static BoundaryConditions constant(const Grid2D& grid, double value);
  /// Dirichlet data sampled at boundary face midpoints.
  static BoundaryConditions from_function(const Grid2D& grid,
                                          const std::function<double(double, double)>& w);
  bool has_dirichlet() const;
  void validate(const Grid2D& grid) const;
};

struct DarcySolution {
  Vector head;
  double time = 0.0;
};

/// Symmetric banded matrix, lower band stored row by row.
class BandMatrix {
 public:
  BandMatrix() = default;
  BandMatrix(std::size_t n, std::size_t bandwidth);

  std::size_t size() const noexcept { return n_; }
  std::size_t bandwidth() const noexcept { return bw_; }
  /// Entry (i, j) with j <= i <= j + bandwidth.
  double& lower(std::size_t i, std::size_t j) { return data_[i * (bw_ + 1) + (i - j)]; }
  double lower(std::size_t i, std::size_t j) const { return data_[i * (bw_ + 1) + (i - j)]; }
  double at(std::size_t i, std::size_t j) const;

  Vector apply(std::span<const double> x) const;
  Matrix to_dense() const;
  double max_row_sum() const;

 private:
  std::size_t n_ = 0;
  std::size_t bw_ = 0;
  std::vector<double> data_;
};

/// Banded Cholesky factor; throws kWellPosedness on a non-positive pivot.
class BandCholesky {
 public:
  explicit BandCholesky(const BandMatrix& a);
  Vector solve(std::span<const double> b) const;

 private:
  BandMatrix l_;
};

struct DarcySystem {
  BandMatrix matrix;
  Vector rhs;
};

/// Harmonic-mean transmissibility of the face between two cells.
double face_transmissibility(const Grid2D& grid, const ConductivityField& field, std::size_t a,
                             std::size_t b);

DarcySystem assemble_steady(const Grid2D& grid, const ConductivityField& field,
                            std::span<const double> source, const BoundaryConditions& bc);

DarcySolution solve_steady(const Grid2D& grid, const ConductivityField& field,
                           std::span<const double> source, const BoundaryConditions& bc);

/// Implicit Euler; returns n_steps + 1 states starting with w0 at t = 0.
std::vector<DarcySolution> solve_transient(const Grid2D& grid, const ConductivityField& field,
                                           std::span<const double> source,
                                           const BoundaryConditions& bc, std::span<const double> w0,
                                           double dt, std::size_t n_steps);

/// Total inflow into the extraction set through its boundary faces.
double qoi_inflow(const Grid2D& grid, const ConductivityField& field, const DarcySolution& solution);
double qoi_inflow(const Grid2D& grid, const ConductivityField& field,
                  const std::vector<DarcySolution>& sequence, std::size_t time_index);

/// Net flux leaving the domain through Dirichlet faces.
double boundary_outflow(const Grid2D& grid, const ConductivityField& field, const BoundaryConditions& bc,
                        const DarcySolution& solution);

// ---------------------------------------------------------------------------

/// A source term scaled by one control parameter: g += mu_q * rate on cells.
struct SourceControl {
  std::vector<std::size_t> cells;
  double rate = 0.0;
};

struct TransientSpec {
  double dt = 0.0;
  std::size_t n_steps = 0;
  double initial_head = 0.0;
  std::vector<std::size_t> qoi_time_indices;
};

struct DarcyModel {
  Grid2D grid;
  KleFieldSpec field;
  Vector source;  // per-cell base source
  std::vector<SourceControl> controls;
  BoundaryConditions boundary;
  std::optional<TransientSpec> transient;

  Vector source_for(std::span<const double> mu) const;
  void validate() const;
};

struct PlanEntry {
  Vector mu;
  Vector xi;  // empty: drawn from the entry's own stream
};

/// One steady solve per plan entry. Parameters are recorded as mu followed by
/// xi; weights are uniform. Entry k draws from stream k of `seed`, so the
/// result does not depend on `threads`.
SnapshotSet generate_snapshots(const DarcyModel& model, const std::vector<PlanEntry>& plan,
                               std::uint64_t seed, unsigned threads = 1);

DarcyModel model_from_json(const nlohmann::json& j);
nlohmann::json model_to_json(const DarcyModel& model);

}  // namespace romcex::darcy

#include "romcex/darcy.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <mutex>

#include "romcex/error.hpp"
#include "romcex/parallel.hpp"
#include "romcex/random.hpp"

namespace romcex::darcy {

void Grid2D::validate(bool allow_single_cell) const {
  if (!allow_single_cell) {
    require(nx >= 2 && ny >= 2, ErrorKind::kDomain, "grid: nx and ny must be at least 2");
  } else {
    require(nx >= 1 && ny >= 1, ErrorKind::kDomain, "grid: empty grid");
  }
  require(hx > 0.0 && hy > 0.0, ErrorKind::kDomain, "grid: cell sizes must be positive");
  for (std::size_t c : extraction_cells) {
    require(c < cell_count(), ErrorKind::kDomain, "grid: extraction cell out of range");
    const std::size_t i = c % nx;
    const std::size_t j = c / nx;
    require(i > 0 && j > 0 && i + 1 < nx && j + 1 < ny, ErrorKind::kDomain,
            "grid: extraction cell " + std::to_string(c) + " is not strictly interior");
  }
}

bool Grid2D::is_extraction(std::size_t cell) const {
  return std::find(extraction_cells.begin(), extraction_cells.end(), cell) != extraction_cells.end();
}

ConductivityField ConductivityField::from_log(Vector log_values) {
  ConductivityField f;
  f.kappa.resize(log_values.size());
  std::transform(log_values.begin(), log_values.end(), f.kappa.begin(),
                 [](double q) { return std::exp(q); });
  f.log_values = std::move(log_values);
  return f;
}

ConductivityField ConductivityField::constant(std::size_t cells, double kappa) {
  require(kappa > 0.0, ErrorKind::kDomain, "conductivity must be positive");
  return from_log(Vector(cells, std::log(kappa)));
}

// ---------------------------------------------------------------------------

Matrix covariance_matrix(const Grid2D& grid, const KleFieldSpec& spec) {
  require(spec.variance >= 0.0, ErrorKind::kDomain, "field: variance must be nonnegative");
  require(spec.correlation_length > 0.0, ErrorKind::kDomain, "field: correlation length must be positive");
  const std::size_t n = grid.cell_count();
  Matrix c(n, n);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b <= a; ++b) {
      const double dx = grid.center_x(a % grid.nx) - grid.center_x(b % grid.nx);
      const double dy = grid.center_y(a / grid.nx) - grid.center_y(b / grid.nx);
      const double d = std::sqrt(dx * dx + dy * dy) / spec.correlation_length;
      const double k = spec.kind == CovarianceKind::kExponential ? std::exp(-d) : std::exp(-0.5 * d * d);
      c(a, b) = c(b, a) = spec.variance * k;
    }
  }
  return c;
}

FieldModes field_modes(const Grid2D& grid, const KleFieldSpec& spec) {
  grid.validate(/*allow_single_cell=*/true);
  const std::size_t n = grid.cell_count();
  require(spec.n_modes <= n, ErrorKind::kDomain,
          "field_modes: n_modes " + std::to_string(spec.n_modes) + " exceeds cell count " + std::to_string(n));
  const SymEigen eig = sym_eigen(covariance_matrix(grid, spec));
  FieldModes out{spec.mean, Vector(spec.n_modes), Matrix(n, spec.n_modes)};
  for (std::size_t k = 0; k < spec.n_modes; ++k) {
    const std::size_t src = n - 1 - k;
    out.eigenvalues[k] = std::max(eig.values[src], 0.0);
    out.modes.set_col(k, eig.vectors.col(src));
  }
  return out;
}

ConductivityField sample_conductivity(const FieldModes& modes, std::span<const double> xi) {
  require(xi.size() == modes.eigenvalues.size(), ErrorKind::kDomain,
          "sample_conductivity: expected " + std::to_string(modes.eigenvalues.size()) + " draws");
  Vector q(modes.modes.rows(), modes.mean);
  for (std::size_t j = 0; j < xi.size(); ++j) {
    const double amp = std::sqrt(modes.eigenvalues[j]) * xi[j];
    if (amp == 0.0) continue;
    for (std::size_t c = 0; c < q.size(); ++c) q[c] += amp * modes.modes(c, j);
  }
  return ConductivityField::from_log(std::move(q));
}

ConductivityField sample_conductivity(const FieldModes& modes, std::uint64_t seed, std::uint64_t stream,
                                      Vector* xi_out) {
  NormalStream rng(seed, stream);
  Vector xi = rng.draw(modes.eigenvalues.size());
  ConductivityField f = sample_conductivity(modes, xi);
  if (xi_out) *xi_out = std::move(xi);
  return f;
}

// ---------------------------------------------------------------------------

BoundaryConditions BoundaryConditions::constant(const Grid2D& grid, double value) {
  BoundaryConditions bc;
  bc.west.values.assign(grid.ny, value);
  bc.east.values.assign(grid.ny, value);
  bc.south.values.assign(grid.nx, value);
  bc.north.values.assign(grid.nx, value);
  return bc;
}

BoundaryConditions BoundaryConditions::from_function(const Grid2D& grid,
                                                     const std::function<double(double, double)>& w) {
  BoundaryConditions bc = constant(grid, 0.0);
  const double lx = grid.hx * static_cast<double>(grid.nx);
  const double ly = grid.hy * static_cast<double>(grid.ny);
  for (std::size_t j = 0; j < grid.ny; ++j) {
    bc.west.values[j] = w(0.0, grid.center_y(j));
    bc.east.values[j] = w(lx, grid.center_y(j));
  }
  for (std::size_t i = 0; i < grid.nx; ++i) {
    bc.south.values[i] = w(grid.center_x(i), 0.0);
    bc.north.values[i] = w(grid.center_x(i), ly);
  }
  return bc;
}

bool BoundaryConditions::has_dirichlet() const {
  for (const EdgeCondition* e : {&west, &east, &south, &north})
    if (e->kind == EdgeKind::kDirichlet) return true;
  return false;
}

void BoundaryConditions::validate(const Grid2D& grid) const {
  auto check = [](const EdgeCondition& e, std::size_t len, const char* name) {
    if (e.kind == EdgeKind::kDirichlet) {
      require(e.values.size() == len, ErrorKind::kDomain,
              std::string("boundary: ") + name + " edge needs " + std::to_string(len) + " values");
      for (double v : e.values)
        require(std::isfinite(v), ErrorKind::kDomain, std::string("boundary: non-finite value on ") + name);
    }
  };
  check(west, grid.ny, "west");
  check(east, grid.ny, "east");
  check(south, grid.nx, "south");
  check(north, grid.nx, "north");
}

// ---------------------------------------------------------------------------

BandMatrix::BandMatrix(std::size_t n, std::size_t bandwidth)
    : n_(n), bw_(bandwidth), data_(n * (bandwidth + 1), 0.0) {}

double BandMatrix::at(std::size_t i, std::size_t j) const {
  if (i < j) std::swap(i, j);
  if (i - j > bw_) return 0.0;
  return lower(i, j);
}

Vector BandMatrix::apply(std::span<const double> x) const {
  require(x.size() == n_, ErrorKind::kDomain, "band apply: length mismatch");
  Vector y(n_, 0.0);
  for (std::size_t i = 0; i < n_; ++i) {
    const std::size_t j0 = i > bw_ ? i - bw_ : 0;
    for (std::size_t j = j0; j < i; ++j) {
      const double a = lower(i, j);
      y[i] += a * x[j];
      y[j] += a * x[i];
    }
    y[i] += lower(i, i) * x[i];
  }
  return y;
}

Matrix BandMatrix::to_dense() const {
  Matrix d(n_, n_);
  for (std::size_t i = 0; i < n_; ++i)
    for (std::size_t j = (i > bw_ ? i - bw_ : 0); j <= i; ++j) d(i, j) = d(j, i) = lower(i, j);
  return d;
}

double BandMatrix::max_row_sum() const {
  double m = 0.0;
  for (std::size_t i = 0; i < n_; ++i) {
    double s = 0.0;
    for (std::size_t j = (i > bw_ ? i - bw_ : 0); j <= std::min(n_ - 1, i + bw_); ++j) s += std::abs(at(i, j));
    m = std::max(m, s);
  }
  return m;
}

BandCholesky::BandCholesky(const BandMatrix& a) : l_(a) {
  const std::size_t n = l_.size();
  const std::size_t bw = l_.bandwidth();
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t k0 = j > bw ? j - bw : 0;
    double d = l_.lower(j, j);
    for (std::size_t k = k0; k < j; ++k) d -= l_.lower(j, k) * l_.lower(j, k);
    if (!(d > 0.0)) {
      fail(ErrorKind::kWellPosedness, "darcy: assembled system is singular (pivot " + std::to_string(j) + ")");
    }
    const double ljj = std::sqrt(d);
    l_.lower(j, j) = ljj;
    for (std::size_t i = j + 1; i <= std::min(n - 1, j + bw); ++i) {
      const std::size_t ki = i > bw ? i - bw : 0;
      double s = l_.lower(i, j);
      for (std::size_t k = std::max(ki, k0); k < j; ++k) s -= l_.lower(i, k) * l_.lower(j, k);
      l_.lower(i, j) = s / ljj;
    }
  }
}

Vector BandCholesky::solve(std::span<const double> b) const {
  const std::size_t n = l_.size();
  const std::size_t bw = l_.bandwidth();
  Vector y(b.begin(), b.end());
  for (std::size_t i = 0; i < n; ++i) {
    double s = y[i];
    for (std::size_t k = (i > bw ? i - bw : 0); k < i; ++k) s -= l_.lower(i, k) * y[k];
    y[i] = s / l_.lower(i, i);
  }
  for (std::size_t ii = n; ii-- > 0;) {
    double s = y[ii];
    for (std::size_t k = ii + 1; k <= std::min(n - 1, ii + bw); ++k) s -= l_.lower(k, ii) * y[k];
    y[ii] = s / l_.lower(ii, ii);
  }
  return y;
}

// ---------------------------------------------------------------------------

namespace {

double harmonic(double a, double b) { return 2.0 * a * b / (a + b); }

// Visits interior faces as (cell a, cell b, transmissibility).
template <typename F>
void for_each_interior_face(const Grid2D& grid, const ConductivityField& field, F&& visit) {
  const double tx = grid.hy / grid.hx;
  const double ty = grid.hx / grid.hy;
  for (std::size_t j = 0; j < grid.ny; ++j) {
    for (std::size_t i = 0; i < grid.nx; ++i) {
      const std::size_t c = grid.index(i, j);
      if (i + 1 < grid.nx) {
        const std::size_t e = grid.index(i + 1, j);
        visit(c, e, tx * harmonic(field.kappa[c], field.kappa[e]));
      }
      if (j + 1 < grid.ny) {
        const std::size_t n = grid.index(i, j + 1);
        visit(c, n, ty * harmonic(field.kappa[c], field.kappa[n]));
      }
    }
  }
}

// Visits Dirichlet faces as (cell, transmissibility, boundary value).
template <typename F>
void for_each_dirichlet_face(const Grid2D& grid, const ConductivityField& field,
                             const BoundaryConditions& bc, F&& visit) {
  const double tx = 2.0 * grid.hy / grid.hx;
  const double ty = 2.0 * grid.hx / grid.hy;
  for (std::size_t j = 0; j < grid.ny; ++j) {
    if (bc.west.kind == EdgeKind::kDirichlet) {
      const std::size_t c = grid.index(0, j);
      visit(c, tx * field.kappa[c], bc.west.values[j]);
    }
    if (bc.east.kind == EdgeKind::kDirichlet) {
      const std::size_t c = grid.index(grid.nx - 1, j);
      visit(c, tx * field.kappa[c], bc.east.values[j]);
    }
  }
  for (std::size_t i = 0; i < grid.nx; ++i) {
    if (bc.south.kind == EdgeKind::kDirichlet) {
      const std::size_t c = grid.index(i, 0);
      visit(c, ty * field.kappa[c], bc.south.values[i]);
    }
    if (bc.north.kind == EdgeKind::kDirichlet) {
      const std::size_t c = grid.index(i, grid.ny - 1);
      visit(c, ty * field.kappa[c], bc.north.values[i]);
    }
  }
}

void check_inputs(const Grid2D& grid, const ConductivityField& field, std::span<const double> source,
                  const BoundaryConditions& bc) {
  grid.validate();
  bc.validate(grid);
  require(field.kappa.size() == grid.cell_count(), ErrorKind::kDomain, "darcy: field size mismatch");
  require(source.size() == grid.cell_count(), ErrorKind::kDomain, "darcy: source size mismatch");
  for (double k : field.kappa)
    require(k > 0.0 && std::isfinite(k), ErrorKind::kDomain, "darcy: conductivity must be positive");
  require(bc.has_dirichlet(), ErrorKind::kWellPosedness,
          "darcy: at least one Dirichlet boundary edge is required");
}

Vector solve_checked(const BandMatrix& a, const BandCholesky& chol, std::span<const double> b) {
  Vector x = chol.solve(b);
  // One step of iterative refinement, then a backward-error check.
  Vector r = a.apply(x);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = b[i] - r[i];
  const Vector dx = chol.solve(r);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += dx[i];
  r = a.apply(x);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = b[i] - r[i];
  const double denom = a.max_row_sum() * max_abs(x) + max_abs(b);
  const double backward = denom > 0.0 ? max_abs(r) / denom : 0.0;
  if (backward > 1e-12) {
    fail(ErrorKind::kConvergence, "darcy: relative residual " + format_double(backward) + " exceeds 1e-12");
  }
  return x;
}

}  // namespace

double face_transmissibility(const Grid2D& grid, const ConductivityField& field, std::size_t a,
                             std::size_t b) {
  const std::size_t ia = a % grid.nx, ja = a / grid.nx;
  const std::size_t ib = b % grid.nx, jb = b / grid.nx;
  const double h = harmonic(field.kappa[a], field.kappa[b]);
  if (ja == jb && (ia + 1 == ib || ib + 1 == ia)) return h * grid.hy / grid.hx;
  if (ia == ib && (ja + 1 == jb || jb + 1 == ja)) return h * grid.hx / grid.hy;
  fail(ErrorKind::kDomain, "face_transmissibility: cells are not neighbours");
}

DarcySystem assemble_steady(const Grid2D& grid, const ConductivityField& field,
                            std::span<const double> source, const BoundaryConditions& bc) {
  check_inputs(grid, field, source, bc);
  DarcySystem sys{BandMatrix(grid.cell_count(), grid.nx), Vector(grid.cell_count())};
  const double vol = grid.cell_volume();
  for (std::size_t c = 0; c < grid.cell_count(); ++c) sys.rhs[c] = source[c] * vol;
  for_each_interior_face(grid, field, [&](std::size_t a, std::size_t b, double t) {
    sys.matrix.lower(a, a) += t;
    sys.matrix.lower(b, b) += t;
    sys.matrix.lower(b, a) -= t;  // b > a always
  });
  for_each_dirichlet_face(grid, field, bc, [&](std::size_t c, double t, double value) {
    sys.matrix.lower(c, c) += t;
    sys.rhs[c] += t * value;
  });
  return sys;
}

DarcySolution solve_steady(const Grid2D& grid, const ConductivityField& field,
                           std::span<const double> source, const BoundaryConditions& bc) {
  const DarcySystem sys = assemble_steady(grid, field, source, bc);
  const BandCholesky chol(sys.matrix);
  return DarcySolution{solve_checked(sys.matrix, chol, sys.rhs), 0.0};
}

std::vector<DarcySolution> solve_transient(const Grid2D& grid, const ConductivityField& field,
                                           std::span<const double> source,
                                           const BoundaryConditions& bc, std::span<const double> w0,
                                           double dt, std::size_t n_steps) {
  require(dt > 0.0, ErrorKind::kDomain, "solve_transient: dt must be positive");
  require(w0.size() == grid.cell_count(), ErrorKind::kDomain, "solve_transient: initial head size mismatch");
  DarcySystem sys = assemble_steady(grid, field, source, bc);
  const double mass = grid.cell_volume() / dt;
  for (std::size_t c = 0; c < grid.cell_count(); ++c) sys.matrix.lower(c, c) += mass;
  const BandCholesky chol(sys.matrix);

  std::vector<DarcySolution> out;
  out.reserve(n_steps + 1);
  out.push_back({Vector(w0.begin(), w0.end()), 0.0});
  Vector rhs(grid.cell_count());
  for (std::size_t step = 1; step <= n_steps; ++step) {
    const Vector& prev = out.back().head;
    for (std::size_t c = 0; c < rhs.size(); ++c) rhs[c] = sys.rhs[c] + mass * prev[c];
    out.push_back({solve_checked(sys.matrix, chol, rhs), dt * static_cast<double>(step)});
  }
  return out;
}

double qoi_inflow(const Grid2D& grid, const ConductivityField& field, const DarcySolution& solution) {
  require(!grid.extraction_cells.empty(), ErrorKind::kDomain, "qoi_inflow: extraction set is empty");
  require(solution.head.size() == grid.cell_count(), ErrorKind::kDomain, "qoi_inflow: head size mismatch");
  grid.validate();
  double inflow = 0.0;
  for (std::size_t e : grid.extraction_cells) {
    const std::size_t i = e % grid.nx;
    const std::size_t j = e / grid.nx;
    for (std::size_t nb : {grid.index(i - 1, j), grid.index(i + 1, j), grid.index(i, j - 1), grid.index(i, j + 1)}) {
      if (grid.is_extraction(nb)) continue;
      inflow += face_transmissibility(grid, field, e, nb) * (solution.head[nb] - solution.head[e]);
    }
  }
  return inflow;
}

double qoi_inflow(const Grid2D& grid, const ConductivityField& field,
                  const std::vector<DarcySolution>& sequence, std::size_t time_index) {
  require(time_index < sequence.size(), ErrorKind::kDomain, "qoi_inflow: time index out of range");
  return qoi_inflow(grid, field, sequence[time_index]);
}

double boundary_outflow(const Grid2D& grid, const ConductivityField& field, const BoundaryConditions& bc,
                        const DarcySolution& solution) {
  double out = 0.0;
  for_each_dirichlet_face(grid, field, bc, [&](std::size_t c, double t, double value) {
    out += t * (solution.head[c] - value);
  });
  return out;
}

// ---------------------------------------------------------------------------

Vector DarcyModel::source_for(std::span<const double> mu) const {
  require(mu.size() <= controls.size(), ErrorKind::kDomain,
          "darcy model: " + std::to_string(mu.size()) + " control values for " +
              std::to_string(controls.size()) + " controls");
  Vector g = source;
  for (std::size_t q = 0; q < mu.size(); ++q)
    for (std::size_t c : controls[q].cells) g[c] += mu[q] * controls[q].rate;
  return g;
}

void DarcyModel::validate() const {
  grid.validate();
  boundary.validate(grid);
  require(source.size() == grid.cell_count(), ErrorKind::kDomain, "darcy model: source size mismatch");
  require(field.n_modes <= grid.cell_count(), ErrorKind::kDomain, "darcy model: n_modes exceeds cell count");
  require(field.variance >= 0.0 && field.correlation_length > 0.0, ErrorKind::kDomain,
          "darcy model: invalid field specification");
  for (const auto& ctl : controls)
    for (std::size_t c : ctl.cells)
      require(c < grid.cell_count(), ErrorKind::kDomain, "darcy model: control cell out of range");
  if (transient) {
    require(transient->dt > 0.0, ErrorKind::kDomain, "darcy model: transient dt must be positive");
    for (std::size_t t : transient->qoi_time_indices)
      require(t <= transient->n_steps, ErrorKind::kDomain, "darcy model: QoI time index beyond n_steps");
  }
}

SnapshotSet generate_snapshots(const DarcyModel& model, const std::vector<PlanEntry>& plan,
                               std::uint64_t seed, unsigned threads) {
  require(!plan.empty(), ErrorKind::kDomain, "generate_snapshots: plan is empty");
  model.validate();
  const FieldModes modes = field_modes(model.grid, model.field);
  const std::size_t m = plan.size();
  const std::size_t n = model.grid.cell_count();

  std::vector<Vector> heads(m);
  std::vector<Vector> xis(m);
  parallel_for(m, threads, "plan entry", [&](std::size_t k) {
    Vector xi = plan[k].xi;
    ConductivityField field = xi.empty() ? sample_conductivity(modes, seed, k, &xi)
                                         : sample_conductivity(modes, xi);
    const Vector g = model.source_for(plan[k].mu);
    heads[k] = solve_steady(model.grid, field, g, model.boundary).head;
    xis[k] = std::move(xi);
  });

  SnapshotSet out;
  out.states = Matrix(n, m);
  nlohmann::json entries = nlohmann::json::array();
  for (std::size_t k = 0; k < m; ++k) {
    out.states.set_col(k, heads[k]);
    Vector p = plan[k].mu;
    p.insert(p.end(), xis[k].begin(), xis[k].end());
    out.params.push_back(std::move(p));
    entries.push_back({{"mu", plan[k].mu}, {"xi", xis[k]}, {"stream", k}});
  }
  out.weights.assign(m, 1.0 / static_cast<double>(m));
  out.provenance = {{"source", "darcy"}, {"seed", seed}, {"entries", std::move(entries)}};
  out.validate();
  return out;
}

// ---------------------------------------------------------------------------

namespace {

using nlohmann::json;

EdgeCondition edge_from_json(const json& j, std::size_t len, const char* name) {
  EdgeCondition e;
  const std::string type = j.value("type", "dirichlet");
  if (type == "no_flux") {
    e.kind = EdgeKind::kNoFlux;
  } else if (type == "dirichlet") {
    if (j.contains("values")) {
      e.values = j.at("values").get<Vector>();
    } else {
      e.values.assign(len, j.value("value", 0.0));
    }
  } else {
    fail(ErrorKind::kValidation, std::string("boundary.") + name + ".type must be dirichlet or no_flux");
  }
  return e;
}

json edge_to_json(const EdgeCondition& e) {
  if (e.kind == EdgeKind::kNoFlux) return {{"type", "no_flux"}};
  return {{"type", "dirichlet"}, {"values", e.values}};
}

}  // namespace

DarcyModel model_from_json(const json& j) {
  DarcyModel m;
  try {
    const json& g = j.at("grid");
    m.grid.nx = g.at("nx").get<std::size_t>();
    m.grid.ny = g.at("ny").get<std::size_t>();
    m.grid.hx = g.value("hx", 1.0 / static_cast<double>(m.grid.nx));
    m.grid.hy = g.value("hy", 1.0 / static_cast<double>(m.grid.ny));
    m.grid.extraction_cells = j.value("extraction_cells", std::vector<std::size_t>{});

    if (j.contains("field")) {
      const json& f = j.at("field");
      m.field.mean = f.value("mean", 0.0);
      m.field.variance = f.value("variance", 1.0);
      m.field.correlation_length = f.value("correlation_length", 0.25);
      m.field.n_modes = f.value("n_modes", std::size_t{4});
      const std::string kind = f.value("covariance", "exponential");
      if (kind == "exponential") {
        m.field.kind = CovarianceKind::kExponential;
      } else if (kind == "squared-exponential") {
        m.field.kind = CovarianceKind::kSquaredExponential;
      } else {
        fail(ErrorKind::kValidation, "field.covariance must be exponential or squared-exponential");
      }
    }

    const std::size_t cells = m.grid.cell_count();
    m.source.assign(cells, 0.0);
    if (j.contains("source")) {
      const json& s = j.at("source");
      if (s.contains("values")) {
        m.source = s.at("values").get<Vector>();
      } else {
        m.source.assign(cells, s.value("value", 0.0));
      }
    }
    for (const json& c : j.value("controls", json::array())) {
      m.controls.push_back({c.at("cells").get<std::vector<std::size_t>>(), c.at("rate").get<double>()});
    }

    m.boundary = BoundaryConditions::constant(m.grid, 0.0);
    if (j.contains("boundary")) {
      const json& b = j.at("boundary");
      if (b.contains("west")) m.boundary.west = edge_from_json(b.at("west"), m.grid.ny, "west");
      if (b.contains("east")) m.boundary.east = edge_from_json(b.at("east"), m.grid.ny, "east");
      if (b.contains("south")) m.boundary.south = edge_from_json(b.at("south"), m.grid.nx, "south");
      if (b.contains("north")) m.boundary.north = edge_from_json(b.at("north"), m.grid.nx, "north");
    }

    if (j.contains("transient")) {
      const json& t = j.at("transient");
      TransientSpec spec;
      spec.dt = t.at("dt").get<double>();
      spec.n_steps = t.at("n_steps").get<std::size_t>();
      spec.initial_head = t.value("initial_head", 0.0);
      spec.qoi_time_indices = t.value("qoi_time_indices", std::vector<std::size_t>{spec.n_steps});
      m.transient = spec;
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::kValidation, std::string("darcy model: ") + e.what());
  }
  try {
    m.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::kValidation, e.what());
  }
  return m;
}

json model_to_json(const DarcyModel& m) {
  json j;
  j["grid"] = {{"nx", m.grid.nx}, {"ny", m.grid.ny}, {"hx", m.grid.hx}, {"hy", m.grid.hy}};
  j["extraction_cells"] = m.grid.extraction_cells;
  j["field"] = {{"mean", m.field.mean},
                {"variance", m.field.variance},
                {"correlation_length", m.field.correlation_length},
                {"n_modes", m.field.n_modes},
                {"covariance", m.field.kind == CovarianceKind::kExponential ? "exponential" : "squared-exponential"}};
  j["source"] = {{"values", m.source}};
  json controls = json::array();
  for (const auto& c : m.controls) controls.push_back({{"cells", c.cells}, {"rate", c.rate}});
  j["controls"] = controls;
  j["boundary"] = {{"west", edge_to_json(m.boundary.west)},
                   {"east", edge_to_json(m.boundary.east)},
                   {"south", edge_to_json(m.boundary.south)},
                   {"north", edge_to_json(m.boundary.north)}};
  if (m.transient) {
    j["transient"] = {{"dt", m.transient->dt},
                      {"n_steps", m.transient->n_steps},
                      {"initial_head", m.transient->initial_head},
                      {"qoi_time_indices", m.transient->qoi_time_indices}};
  }
  return j;
}

}  // namespace romcex::darcy

#include "romcex/rom.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <tuple>

#include "romcex/error.hpp"
#include "romcex/io.hpp"
#include "romcex/parallel.hpp"
#include "romcex/random.hpp"

namespace romcex {

namespace {

Matrix weighted_states(const SnapshotSet& s) {
  s.validate();
  Matrix z = s.states;
  for (std::size_t k = 0; k < s.count(); ++k) {
    const double w = std::sqrt(s.weights[k]);
    for (std::size_t i = 0; i < z.rows(); ++i) z(i, k) *= w;
  }
  return z;
}

std::string format_point(std::span<const double> mu) {
  std::string out = "[";
  for (std::size_t i = 0; i < mu.size(); ++i) out += (i ? ", " : "") + format_double(mu[i]);
  return out + "]";
}

// Cholesky without any diagonal shift.
CholFactor strict_chol(const Matrix& a) {
  CholOptions strict;
  strict.max_jitter = 0.0;
  return chol_psd(a, strict);
}

}  // namespace

// ---------------------------------------------------------------------------
// POD

PodBasis pod_basis(const SnapshotSet& snapshots, std::size_t k) {
  const Matrix z = weighted_states(snapshots);
  PodBasis out;
  if (z.empty()) {
    require(k == 0, ErrorKind::kDomain, "pod_basis: empty snapshot set");
    out.columns = Matrix(z.rows(), 0);
    out.captured_energy = 1.0;
    return out;
  }
  const SvdResult s = svd_thin(z);
  const std::size_t rank = s.rank();
  require(k <= rank, ErrorKind::kDomain,
          "pod_basis: k = " + std::to_string(k) + " exceeds snapshot rank " + std::to_string(rank));
  out.columns = s.left.leading_cols(k);
  out.singular_values.assign(s.singular_values.begin(), s.singular_values.begin() + static_cast<long>(rank));
  double total = 0.0, kept = 0.0;
  for (std::size_t j = 0; j < rank; ++j) {
    const double e = out.singular_values[j] * out.singular_values[j];
    total += e;
    if (j < k) kept += e;
  }
  out.captured_energy = total > 0.0 ? kept / total : 1.0;
  return out;
}

double pod_objective(const SnapshotSet& snapshots, const Matrix& v) {
  const Matrix z = weighted_states(snapshots);
  require(v.rows() == z.rows(), ErrorKind::kDomain, "pod_objective: basis row count mismatch");
  const Matrix residual = z - v * transpose_times(v, z);
  const double f = frobenius_norm(residual);
  return f * f;
}

// ---------------------------------------------------------------------------
// Affine operators

double ThetaForm::operator()(std::span<const double> mu) const {
  switch (kind) {
    case Kind::kConstant:
      return offset;
    case Kind::kIdentity:
    case Kind::kAffine:
      require(index < mu.size(), ErrorKind::kDomain, "theta: parameter index out of range");
      return offset + scale * mu[index];
  }
  return 0.0;
}

bool ParamBox::contains(std::span<const double> mu, double slack) const {
  if (mu.size() != lower.size()) return false;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double pad = slack * std::max(1.0, upper[i] - lower[i]);
    if (!(mu[i] >= lower[i] - pad && mu[i] <= upper[i] + pad)) return false;
  }
  return true;
}

Vector ParamBox::center() const {
  Vector c(lower.size());
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = 0.5 * (lower[i] + upper[i]);
  return c;
}

Vector AffineOperator::thetas(std::span<const double> mu) const {
  Vector t(theta.size());
  for (std::size_t q = 0; q < t.size(); ++q) t[q] = theta[q](mu);
  return t;
}

Matrix AffineOperator::assemble(std::span<const double> mu) const {
  const Vector t = thetas(mu);
  Matrix a(size(), size());
  for (std::size_t q = 0; q < components.size(); ++q) {
    auto dst = a.entries();
    auto src = components[q].entries();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += t[q] * src[i];
  }
  return a;
}

void AffineOperator::validate() const {
  require(!components.empty(), ErrorKind::kValidation, "affine operator: no components");
  require(components.size() == theta.size(), ErrorKind::kValidation,
          "affine operator: component and theta counts differ");
  const std::size_t n = size();
  for (const Matrix& c : components) {
    require(c.rows() == n && c.cols() == n, ErrorKind::kValidation, "affine operator: component shape mismatch");
    require(is_symmetric(c, 1e-12 * std::max(1.0, max_abs(c))), ErrorKind::kValidation,
            "affine operator: component is not symmetric");
  }
  require(box.lower.size() == box.upper.size(), ErrorKind::kValidation, "affine operator: box bounds differ in size");
  for (std::size_t i = 0; i < box.dim(); ++i)
    require(box.lower[i] <= box.upper[i], ErrorKind::kValidation, "affine operator: box lower exceeds upper");
  for (const ThetaForm& t : theta)
    require(t.kind == ThetaForm::Kind::kConstant || t.index < box.dim(), ErrorKind::kValidation,
            "affine operator: theta index outside the parameter box");
}

void AffineOperator::check_coercivity(std::uint64_t seed, std::size_t random_points) const {
  validate();
  std::vector<Vector> points;
  const std::size_t d = box.dim();
  if (d <= 10) {
    for (std::size_t mask = 0; mask < (std::size_t{1} << d); ++mask) {
      Vector p(d);
      for (std::size_t i = 0; i < d; ++i) p[i] = (mask >> i) & 1U ? box.upper[i] : box.lower[i];
      points.push_back(std::move(p));
    }
  }
  points.push_back(box.center());
  NormalStream rng(seed, 0xC0E7);
  for (std::size_t k = 0; k < random_points; ++k) {
    Vector p(d);
    for (std::size_t i = 0; i < d; ++i) p[i] = rng.uniform(box.lower[i], box.upper[i]);
    points.push_back(std::move(p));
  }
  for (const Vector& p : points) {
    try {
      strict_chol(assemble(p));
    } catch (const Error&) {
      fail(ErrorKind::kCoercivity, "affine operator is not positive definite at mu = " + format_point(p));
    }
  }
}

AffineProblem darcy_affine(const darcy::Grid2D& grid, const std::vector<std::size_t>& subdomain_of_cell,
                           std::span<const double> source, const ParamBox& box) {
  grid.validate(true);
  const std::size_t n = grid.cell_count();
  require(subdomain_of_cell.size() == n, ErrorKind::kValidation, "darcy_affine: subdomain map size mismatch");
  require(source.size() == n, ErrorKind::kValidation, "darcy_affine: source size mismatch");
  const std::size_t q_count = *std::max_element(subdomain_of_cell.begin(), subdomain_of_cell.end()) + 1;
  require(box.dim() == q_count, ErrorKind::kValidation, "darcy_affine: box dimension must equal subdomain count");

  AffineProblem out;
  out.op.box = box;
  out.op.components.assign(q_count, Matrix(n, n));
  for (std::size_t q = 0; q < q_count; ++q) out.op.theta.push_back(ThetaForm::identity(q));

  auto couple = [&](std::size_t a, std::size_t b, double t) {
    Matrix& c = out.op.components[std::min(subdomain_of_cell[a], subdomain_of_cell[b])];
    c(a, a) += t;
    c(b, b) += t;
    c(a, b) -= t;
    c(b, a) -= t;
  };
  auto anchor = [&](std::size_t a, double t) { out.op.components[subdomain_of_cell[a]](a, a) += t; };

  const double tx = grid.hy / grid.hx;
  const double ty = grid.hx / grid.hy;
  for (std::size_t j = 0; j < grid.ny; ++j) {
    for (std::size_t i = 0; i < grid.nx; ++i) {
      const std::size_t c = grid.index(i, j);
      if (i + 1 < grid.nx) couple(c, grid.index(i + 1, j), tx);
      if (j + 1 < grid.ny) couple(c, grid.index(i, j + 1), ty);
      if (i == 0) anchor(c, 2.0 * tx);
      if (i + 1 == grid.nx) anchor(c, 2.0 * tx);
      if (j == 0) anchor(c, 2.0 * ty);
      if (j + 1 == grid.ny) anchor(c, 2.0 * ty);
    }
  }
  out.load.resize(n);
  for (std::size_t c = 0; c < n; ++c) out.load[c] = source[c] * grid.cell_volume();
  out.op.validate();
  return out;
}

AffineProblem darcy_two_subdomain(const darcy::Grid2D& grid, std::size_t split, std::span<const double> source,
                                  const ParamBox& box) {
  require(split >= 1 && split < grid.nx, ErrorKind::kValidation, "darcy_two_subdomain: split must lie inside the grid");
  std::vector<std::size_t> sub(grid.cell_count());
  for (std::size_t c = 0; c < sub.size(); ++c) sub[c] = (c % grid.nx) < split ? 0 : 1;
  return darcy_affine(grid, sub, source, box);
}

// ---------------------------------------------------------------------------
// RBM

Vector affine_solve(const AffineOperator& op, std::span<const double> load, std::span<const double> mu) {
  require(load.size() == op.size(), ErrorKind::kDomain, "affine_solve: load size mismatch");
  require(op.box.contains(mu), ErrorKind::kDomain, "affine_solve: mu = " + format_point(mu) + " outside the box");
  CholFactor f;
  try {
    f = strict_chol(op.assemble(mu));
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kConditioning) throw;
    fail(ErrorKind::kCoercivity, "operator is not positive definite at mu = " + format_point(mu));
  }
  return chol_solve(f, load);
}

RbmModel rbm_offline(const AffineOperator& op, std::span<const double> load,
                     const std::vector<Vector>& train_params, const RbmOptions& options) {
  op.validate();
  require(!train_params.empty(), ErrorKind::kDomain, "rbm_offline: no training parameters");
  const std::size_t n = op.size();
  const std::size_t m = train_params.size();

  std::vector<Vector> snapshots(m);
  parallel_for(m, options.threads, "training parameter",
               [&](std::size_t k) { snapshots[k] = affine_solve(op, load, train_params[k]); });

  RbmModel model;
  model.theta = op.theta;
  model.box = op.box;
  model.train_params = train_params;
  Matrix basis(n, m);
  std::size_t count = 0;
  for (std::size_t k = 0; k < m; ++k) {
    Vector v = snapshots[k];
    const double size = norm2(v);
    const double rest = orthogonalize(basis, count, v);
    if (size == 0.0 || rest <= options.drop_tol * size) continue;
    for (double& x : v) x /= rest;
    basis.set_col(count++, v);
    model.kept.push_back(k);
  }
  model.basis = basis.leading_cols(count);
  for (const Matrix& a : op.components) model.reduced_components.push_back(transpose_times(model.basis, a * model.basis));
  model.reduced_load = transpose_times(model.basis, load);
  return model;
}

RbmSolution rbm_online(const RbmModel& model, std::span<const double> mu) {
  require(model.box.contains(mu), ErrorKind::kDomain, "rbm_online: mu = " + format_point(mu) + " outside the box");
  const std::size_t r = model.dim();
  Matrix a(r, r);
  for (std::size_t q = 0; q < model.reduced_components.size(); ++q) {
    const double t = model.theta[q](mu);
    auto dst = a.entries();
    auto src = model.reduced_components[q].entries();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += t * src[i];
  }
  RbmSolution out;
  try {
    out.coefficients = chol_solve(strict_chol(a), model.reduced_load);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kConditioning) throw;
    fail(ErrorKind::kConditioning, "rbm_online: reduced system is singular at mu = " + format_point(mu));
  }
  out.lifted = model.basis * out.coefficients;
  out.energy = dot(model.reduced_load, out.coefficients);
  return out;
}

double energy_error(const AffineOperator& op, std::span<const double> load, const RbmModel& model,
                    std::span<const double> mu) {
  Vector e = affine_solve(op, load, mu);
  axpy(-1.0, rbm_online(model, mu).lifted, e);
  return dot(e, op.assemble(mu) * e);
}

namespace {

nlohmann::json theta_to_json(const ThetaForm& t) {
  static const char* names[] = {"identity", "constant", "affine"};
  return {{"kind", names[static_cast<int>(t.kind)]}, {"index", t.index}, {"scale", t.scale}, {"offset", t.offset}};
}

ThetaForm theta_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  ThetaForm t;
  if (kind == "identity") t.kind = ThetaForm::Kind::kIdentity;
  else if (kind == "constant") t.kind = ThetaForm::Kind::kConstant;
  else if (kind == "affine") t.kind = ThetaForm::Kind::kAffine;
  else fail(ErrorKind::kIo, "unknown theta form '" + kind + "'");
  t.index = j.at("index").get<std::size_t>();
  t.scale = j.at("scale").get<double>();
  t.offset = j.at("offset").get<double>();
  return t;
}

}  // namespace

void save_rbm(const RbmModel& model, const std::filesystem::path& dir) {
  nlohmann::json meta;
  meta["state_dim"] = model.basis.rows();
  meta["rb_dim"] = model.dim();
  meta["theta"] = nlohmann::json::array();
  for (const ThetaForm& t : model.theta) meta["theta"].push_back(theta_to_json(t));
  meta["box"] = {{"lower", model.box.lower}, {"upper", model.box.upper}};
  meta["reduced_load"] = model.reduced_load;
  meta["train_params"] = model.train_params;
  meta["kept"] = model.kept;
  save_matrix_csv(dir / "basis.csv", model.basis);
  for (std::size_t q = 0; q < model.reduced_components.size(); ++q)
    save_matrix_csv(dir / ("reduced_" + std::to_string(q) + ".csv"), model.reduced_components[q]);
  write_file_atomic(dir / "rbm.json", meta.dump(2) + "\n");
}

RbmModel load_rbm(const std::filesystem::path& dir) {
  RbmModel model;
  try {
    const auto meta = nlohmann::json::parse(read_file(dir / "rbm.json"));
    for (const auto& t : meta.at("theta")) model.theta.push_back(theta_from_json(t));
    model.box.lower = meta.at("box").at("lower").get<Vector>();
    model.box.upper = meta.at("box").at("upper").get<Vector>();
    model.reduced_load = meta.at("reduced_load").get<Vector>();
    model.train_params = meta.at("train_params").get<std::vector<Vector>>();
    model.kept = meta.at("kept").get<std::vector<std::size_t>>();
    const std::size_t r = meta.at("rb_dim").get<std::size_t>();
    if (r == 0) {
      model.basis = Matrix(meta.at("state_dim").get<std::size_t>(), 0);
      model.reduced_components.assign(model.theta.size(), Matrix());
    } else {
      model.basis = load_matrix_csv(dir / "basis.csv");
      for (std::size_t q = 0; q < model.theta.size(); ++q)
        model.reduced_components.push_back(load_matrix_csv(dir / ("reduced_" + std::to_string(q) + ".csv")));
    }
    require(model.basis.cols() == r && model.reduced_load.size() == r, ErrorKind::kIo,
            "rbm: artifact shapes disagree with metadata");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kIo, std::string("rbm metadata: ") + e.what());
  }
  return model;
}

// ---------------------------------------------------------------------------
// Tensor ALS

Tensor3::Tensor3(std::size_t n_mu, std::size_t n_m, std::size_t n_n, double fill)
    : dims_{n_mu, n_m, n_n}, data_(n_mu * n_m * n_n, fill) {}

double Tensor3::norm() const { return norm2(data_); }

Tensor3 TensorCP::full() const {
  Tensor3 t(dims[0], dims[1], dims[2]);
  for (const CpTerm& term : terms)
    for (std::size_t a = 0; a < dims[0]; ++a)
      for (std::size_t b = 0; b < dims[1]; ++b) {
        const double ab = term.mu[a] * term.m[b];
        for (std::size_t c = 0; c < dims[2]; ++c) t(a, b, c) += ab * term.n[c];
      }
  return t;
}

namespace {

double residual_norm(const Tensor3& e, const Vector& x, const Vector& y, const Vector& z) {
  double s = 0.0;
  for (std::size_t a = 0; a < x.size(); ++a)
    for (std::size_t b = 0; b < y.size(); ++b)
      for (std::size_t c = 0; c < z.size(); ++c) {
        const double d = e(a, b, c) - x[a] * y[b] * z[c];
        s += d * d;
      }
  return std::sqrt(s);
}

// Exact least-squares update of the factor along `mode` with the other two fixed.
Vector contract(const Tensor3& e, int mode, const Vector& x, const Vector& y, const Vector& z) {
  Vector out(e.dim(mode), 0.0);
  for (std::size_t a = 0; a < e.dim(0); ++a)
    for (std::size_t b = 0; b < e.dim(1); ++b)
      for (std::size_t c = 0; c < e.dim(2); ++c) {
        const double v = e(a, b, c);
        if (mode == 0) out[a] += v * y[b] * z[c];
        else if (mode == 1) out[b] += v * x[a] * z[c];
        else out[c] += v * x[a] * y[b];
      }
  double denom = 1.0;
  if (mode != 0) denom *= dot(x, x);
  if (mode != 1) denom *= dot(y, y);
  if (mode != 2) denom *= dot(z, z);
  for (double& v : out) v = denom > 0.0 ? v / denom : 0.0;
  return out;
}

Vector random_unit(std::size_t n, NormalStream& rng) {
  Vector v = rng.draw(n);
  const double s = norm2(v);
  for (double& x : v) x /= s;
  return v;
}

// Flips v to the sign convention and reports whether it flipped.
bool normalize_sign(Vector& v) {
  const Vector before = v;
  fix_sign(v);
  return !v.empty() && v != before;
}

}  // namespace

TensorCP tensor_als(const Tensor3& samples, const AlsOptions& options) {
  require(options.rank >= 1, ErrorKind::kDomain, "tensor_als: rank must be at least 1");
  for (double v : samples.entries())
    require(std::isfinite(v), ErrorKind::kDomain, "tensor_als: samples contain non-finite values");
  TensorCP cp;
  for (int d = 0; d < 3; ++d) cp.dims[d] = samples.dim(d);
  const std::size_t na = samples.dim(0), nb = samples.dim(1), nc = samples.dim(2);
  const double scale = samples.norm();
  Tensor3 residual = samples;
  bool exhausted = false;

  for (std::size_t term = 0; term < options.rank; ++term) {
    const double start = residual.norm();
    if (exhausted || start == 0.0 || start <= 1e-15 * scale) {
      cp.terms.push_back({Vector(na, 0.0), Vector(nb, 0.0), Vector(nc, 0.0)});
      exhausted = true;
      continue;
    }
    NormalStream rng(options.seed, term);
    Vector x(na, 0.0);
    Vector y = random_unit(nb, rng);
    Vector z = random_unit(nc, rng);
    bool reset_used = false;
    bool degenerate = false;
    double prev = start;
    for (std::size_t sweep = 0; sweep < options.sweeps; ++sweep) {
      const double sweep_start = prev;
      for (int mode = 0; mode < 3 && !degenerate; ++mode) {
        Vector next = contract(residual, mode, x, y, z);
        const double others = mode == 0 ? norm2(y) * norm2(z) : mode == 1 ? norm2(x) * norm2(z) : norm2(x) * norm2(y);
        if (norm2(next) * others <= 1e-13 * start) {
          if (reset_used) {
            degenerate = true;
            break;
          }
          reset_used = true;
          NormalStream fresh(options.seed, options.rank + term);
          x.assign(na, 0.0);
          y = random_unit(nb, fresh);
          z = random_unit(nc, fresh);
          mode = -1;  // restart the sweep from the mu-factor
          continue;
        }
        (mode == 0 ? x : mode == 1 ? y : z) = std::move(next);
        prev = residual_norm(residual, x, y, z);
        cp.objective_trace.push_back(prev);
      }
      if (degenerate || prev == 0.0 || sweep_start - prev <= options.tol * sweep_start) break;
    }
    if (degenerate) {
      cp.terms.push_back({Vector(na, 0.0), Vector(nb, 0.0), Vector(nc, 0.0)});
      exhausted = true;
      continue;
    }
    // Unit mu- and N-factors; magnitude and compensating signs on the M-factor.
    const double sx = norm2(x), sz = norm2(z);
    for (double& v : x) v /= sx;
    for (double& v : z) v /= sz;
    for (double& v : y) v *= sx * sz;
    if (normalize_sign(x)) for (double& v : y) v = -v;
    if (normalize_sign(z)) for (double& v : y) v = -v;
    for (std::size_t a = 0; a < na; ++a)
      for (std::size_t b = 0; b < nb; ++b)
        for (std::size_t c = 0; c < nc; ++c) residual(a, b, c) -= x[a] * y[b] * z[c];
    cp.terms.push_back({std::move(x), std::move(y), std::move(z)});
  }
  return cp;
}

void write_tensor_csv(std::ostream& out, const Tensor3& t) {
  out << "i_mu,i_M,i_N,value\n";
  for (std::size_t a = 0; a < t.dim(0); ++a)
    for (std::size_t b = 0; b < t.dim(1); ++b)
      for (std::size_t c = 0; c < t.dim(2); ++c)
        out << a << ',' << b << ',' << c << ',' << format_double(t(a, b, c)) << '\n';
}

Tensor3 read_tensor_csv(std::istream& in) {
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::kIo, "tensor csv: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  require(line == "i_mu,i_M,i_N,value", ErrorKind::kIo, "tensor csv: header must be i_mu,i_M,i_N,value");
  std::map<std::tuple<std::size_t, std::size_t, std::size_t>, double> entries;
  std::size_t dims[3] = {0, 0, 0};
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string field;
    std::size_t idx[3];
    double value = 0.0;
    try {
      for (int d = 0; d < 3; ++d) {
        require(static_cast<bool>(std::getline(row, field, ',')), ErrorKind::kIo, "missing field");
        std::size_t used = 0;
        const long long v = std::stoll(field, &used);
        require(used == field.size() && v >= 0, ErrorKind::kIo, "bad index");
        idx[d] = static_cast<std::size_t>(v);
        dims[d] = std::max(dims[d], idx[d] + 1);
      }
      require(static_cast<bool>(std::getline(row, field)), ErrorKind::kIo, "missing value");
      std::size_t used = 0;
      value = std::stod(field, &used);
      require(used == field.size() && std::isfinite(value), ErrorKind::kIo, "bad value");
    } catch (const std::exception& e) {
      fail(ErrorKind::kIo, "tensor csv line " + std::to_string(line_no) + ": " + e.what());
    }
    require(entries.emplace(std::make_tuple(idx[0], idx[1], idx[2]), value).second, ErrorKind::kIo,
            "tensor csv line " + std::to_string(line_no) + ": duplicate entry");
  }
  require(entries.size() == dims[0] * dims[1] * dims[2], ErrorKind::kIo,
          "tensor csv: entries do not fill the index box");
  Tensor3 t(dims[0], dims[1], dims[2]);
  for (const auto& [key, v] : entries) t(std::get<0>(key), std::get<1>(key), std::get<2>(key)) = v;
  return t;
}

void save_tensor_cp(const TensorCP& cp, const std::filesystem::path& dir) {
  const char* names[] = {"factors_mu.csv", "factors_M.csv", "factors_N.csv"};
  for (int d = 0; d < 3; ++d) {
    Matrix f(cp.dims[d], cp.rank());
    for (std::size_t j = 0; j < cp.rank(); ++j)
      f.set_col(j, d == 0 ? cp.terms[j].mu : d == 1 ? cp.terms[j].m : cp.terms[j].n);
    save_matrix_csv(dir / names[d], f);
  }
  nlohmann::json meta{{"rank", cp.rank()},
                      {"dims", {cp.dims[0], cp.dims[1], cp.dims[2]}},
                      {"objective_trace", cp.objective_trace}};
  write_file_atomic(dir / "tensor.json", meta.dump(2) + "\n");
}

TensorCP load_tensor_cp(const std::filesystem::path& dir) {
  TensorCP cp;
  try {
    const auto meta = nlohmann::json::parse(read_file(dir / "tensor.json"));
    const std::size_t rank = meta.at("rank").get<std::size_t>();
    for (int d = 0; d < 3; ++d) cp.dims[d] = meta.at("dims").at(static_cast<std::size_t>(d)).get<std::size_t>();
    cp.objective_trace = meta.at("objective_trace").get<Vector>();
    const Matrix a = load_matrix_csv(dir / "factors_mu.csv");
    const Matrix b = load_matrix_csv(dir / "factors_M.csv");
    const Matrix c = load_matrix_csv(dir / "factors_N.csv");
    require(a.cols() == rank && b.cols() == rank && c.cols() == rank, ErrorKind::kIo,
            "tensor: factor shapes disagree with metadata");
    for (std::size_t j = 0; j < rank; ++j) cp.terms.push_back({a.col(j), b.col(j), c.col(j)});
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kIo, std::string("tensor metadata: ") + e.what());
  }
  return cp;
}

}  // namespace romcex

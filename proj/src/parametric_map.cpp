#include "romcex/parametric_map.hpp"

#include <cmath>

#include "romcex/error.hpp"
#include "romcex/io.hpp"

namespace romcex {

Matrix build_map(const SnapshotSet& snapshots) {
  snapshots.validate();
  const std::size_t m = snapshots.count();
  const std::size_t n = snapshots.state_dim();
  Matrix r(m, n);
  for (std::size_t k = 0; k < m; ++k) {
    const double w = std::sqrt(snapshots.weights[k]);
    for (std::size_t i = 0; i < n; ++i) r(k, i) = w * snapshots.states(i, k);
  }
  return r;
}

CorrelationPair correlation_u(const SnapshotSet& snapshots) {
  const Matrix r = build_map(snapshots);
  CorrelationPair pair{transpose_times(r, r), r * r.transpose()};
  return pair;
}

Matrix gram_kernel(const SnapshotSet& snapshots) {
  snapshots.validate();
  return transpose_times(snapshots.states, snapshots.states);
}

KleBasis kle(const SnapshotSet& snapshots, double tol) {
  const Matrix r = build_map(snapshots);
  KleBasis basis;
  basis.weights = snapshots.weights;
  basis.tol = tol;
  basis.source_hash = snapshot_hash(snapshots);
  const std::size_t m = snapshots.count();
  const std::size_t n = snapshots.state_dim();
  if (m == 0 || n == 0) {
    basis.modes = Matrix(n, 0);
    basis.param_functions = Matrix(m, 0);
    return basis;
  }

  // svd() diagonalizes the smaller of R^T R and R R^T.
  const SvdResult s = svd_thin(r, tol);
  const std::size_t rank = s.rank(tol);
  basis.sigmas.assign(s.singular_values.begin(), s.singular_values.begin() + static_cast<long>(rank));
  basis.modes = s.right.leading_cols(rank);
  basis.param_functions = Matrix(m, rank);
  for (std::size_t j = 0; j < rank; ++j) {
    const Vector v = basis.modes.col(j);
    for (std::size_t k = 0; k < m; ++k) {
      double proj = 0.0;
      for (std::size_t i = 0; i < n; ++i) proj += snapshots.states(i, k) * v[i];
      basis.param_functions(k, j) = proj / basis.sigmas[j];
    }
  }
  return basis;
}

Vector reconstruct(const KleBasis& basis, std::size_t rank, std::size_t k) {
  require(rank <= basis.rank(), ErrorKind::kDomain,
          "reconstruct: rank " + std::to_string(rank) + " exceeds basis rank " + std::to_string(basis.rank()));
  require(k < basis.param_functions.rows(), ErrorKind::kDomain, "reconstruct: parameter index out of range");
  Vector out(basis.modes.rows(), 0.0);
  for (std::size_t j = 0; j < rank; ++j) {
    const double c = basis.sigmas[j] * basis.param_functions(k, j);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += c * basis.modes(i, j);
  }
  return out;
}

double weighted_reconstruction_error(const SnapshotSet& snapshots, const KleBasis& basis, std::size_t rank) {
  double total = 0.0;
  for (std::size_t k = 0; k < snapshots.count(); ++k) {
    Vector diff = snapshots.states.col(k);
    axpy(-1.0, reconstruct(basis, rank, k), diff);
    total += snapshots.weights[k] * dot(diff, diff);
  }
  return total;
}

KleBasis truncate_by_threshold(const KleBasis& basis, double threshold) {
  require(threshold > 0.0, ErrorKind::kDomain, "truncate_by_threshold: threshold must be positive");
  std::size_t keep = 0;
  while (keep < basis.rank() && basis.sigmas[keep] >= threshold) ++keep;
  KleBasis out = basis;
  out.sigmas.resize(keep);
  out.modes = basis.modes.leading_cols(keep);
  out.param_functions = basis.param_functions.leading_cols(keep);
  return out;
}

void save_kle(const KleBasis& basis, const std::filesystem::path& dir) {
  save_matrix_csv(dir / "sigmas.csv", Matrix(basis.rank(), 1, basis.sigmas));
  save_matrix_csv(dir / "modes.csv", basis.modes);
  save_matrix_csv(dir / "param_functions.csv", basis.param_functions);
  nlohmann::json meta{{"rank", basis.rank()},
                      {"state_dim", basis.modes.rows()},
                      {"count", basis.param_functions.rows()},
                      {"weights", basis.weights},
                      {"tol", basis.tol},
                      {"source_hash", basis.source_hash}};
  write_file_atomic(dir / "kle.json", meta.dump(2) + "\n");
}

KleBasis load_kle(const std::filesystem::path& dir) {
  KleBasis b;
  try {
    const auto meta = nlohmann::json::parse(read_file(dir / "kle.json"));
    const std::size_t rank = meta.at("rank").get<std::size_t>();
    b.weights = meta.at("weights").get<Vector>();
    b.tol = meta.at("tol").get<double>();
    b.source_hash = meta.at("source_hash").get<std::string>();
    if (rank == 0) {
      b.modes = Matrix(meta.at("state_dim").get<std::size_t>(), 0);
      b.param_functions = Matrix(meta.at("count").get<std::size_t>(), 0);
      return b;
    }
    b.sigmas = load_matrix_csv(dir / "sigmas.csv").col(0);
    b.modes = load_matrix_csv(dir / "modes.csv");
    b.param_functions = load_matrix_csv(dir / "param_functions.csv");
    require(b.sigmas.size() == rank && b.modes.cols() == rank && b.param_functions.cols() == rank, ErrorKind::kIo,
            "kle: artifact shapes disagree with metadata");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kIo, std::string("kle metadata: ") + e.what());
  }
  return b;
}

}  // namespace romcex

#pragma once

#include <filesystem>
#include <vector>

#include "json.hpp"
#include "romcex/linalg.hpp"

namespace romcex {

/// Parameter samples with their state vectors and quadrature weights: the
/// discrete carrier of a parametric map mu -> r(mu).
struct SnapshotSet {
  std::vector<Vector> params;  // m parameter points
  Matrix states;               // n x m, column k = r(mu_k)
  Vector weights;              // m nonnegative weights summing to one
  nlohmann::json provenance;   // seeds and per-column origin; may be null

  std::size_t count() const noexcept { return states.cols(); }
  std::size_t state_dim() const noexcept { return states.rows(); }

  /// Throws kDomain when counts disagree, weights are negative or do not sum
  /// to one within 1e-12, or states are not finite.
  void validate() const;

  static SnapshotSet with_uniform_weights(std::vector<Vector> params, Matrix states);
};

/// Persists `<stem>.csv` (state matrix, one state dimension per line) and
/// `<stem>.json` (params, weights, provenance).
void save_snapshots(const SnapshotSet& snapshots, const std::filesystem::path& stem);
SnapshotSet load_snapshots(const std::filesystem::path& stem);

/// Hash over the persisted representation; used for provenance stamps.
std::string snapshot_hash(const SnapshotSet& snapshots);

}  // namespace romcex

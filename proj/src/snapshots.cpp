#include "romcex/snapshots.hpp"

#include <cmath>
#include <sstream>

#include "romcex/error.hpp"
#include "romcex/io.hpp"
#include "romcex/random.hpp"

namespace romcex {

void SnapshotSet::validate() const {
  const std::size_t m = states.cols();
  require(params.size() == m, ErrorKind::kDomain, "snapshots: parameter count differs from column count");
  require(weights.size() == m, ErrorKind::kDomain, "snapshots: weight count differs from column count");
  double total = 0.0;
  for (double w : weights) {
    require(w >= 0.0 && std::isfinite(w), ErrorKind::kDomain, "snapshots: weights must be nonnegative");
    total += w;
  }
  if (m > 0) {
    require(std::abs(total - 1.0) <= 1e-12, ErrorKind::kDomain, "snapshots: weights must sum to one");
  }
  for (double v : states.entries())
    require(std::isfinite(v), ErrorKind::kDomain, "snapshots: states must be finite");
}

SnapshotSet SnapshotSet::with_uniform_weights(std::vector<Vector> params, Matrix states) {
  const std::size_t m = states.cols();
  SnapshotSet s{std::move(params), std::move(states), Vector(m, m == 0 ? 0.0 : 1.0 / static_cast<double>(m)),
                nullptr};
  s.validate();
  return s;
}

namespace {

std::filesystem::path with_ext(std::filesystem::path stem, const char* ext) {
  stem += ext;
  return stem;
}

std::string csv_text(const Matrix& a) {
  std::ostringstream out;
  write_csv(out, a);
  return out.str();
}

}  // namespace

void save_snapshots(const SnapshotSet& snapshots, const std::filesystem::path& stem) {
  snapshots.validate();
  nlohmann::json side;
  side["state_dim"] = snapshots.state_dim();
  side["count"] = snapshots.count();
  side["params"] = snapshots.params;
  side["weights"] = snapshots.weights;
  side["provenance"] = snapshots.provenance;
  write_file_atomic(with_ext(stem, ".csv"), csv_text(snapshots.states));
  write_file_atomic(with_ext(stem, ".json"), side.dump(2) + "\n");
}

SnapshotSet load_snapshots(const std::filesystem::path& stem) {
  SnapshotSet s;
  s.states = load_matrix_csv(with_ext(stem, ".csv"));
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(read_file(with_ext(stem, ".json")));
    s.params = side.at("params").get<std::vector<Vector>>();
    s.weights = side.at("weights").get<Vector>();
    s.provenance = side.value("provenance", nlohmann::json());
    const std::size_t count = side.at("count").get<std::size_t>();
    if (s.states.empty()) s.states = Matrix(side.at("state_dim").get<std::size_t>(), 0);
    require(count == s.states.cols(), ErrorKind::kIo, "snapshot sidecar count disagrees with CSV");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kIo, std::string("snapshot sidecar: ") + e.what());
  }
  s.validate();
  return s;
}

std::string snapshot_hash(const SnapshotSet& snapshots) {
  nlohmann::json side;
  side["params"] = snapshots.params;
  side["weights"] = snapshots.weights;
  return hex64(fnv1a(csv_text(snapshots.states) + side.dump()));
}

}  // namespace romcex

#pragma once

// Additive modelling error eta_M and numerical error eta_N on a product
// probability space, with nested (iterated) and flat expectations over the
// sample grid and a loss functional that averages over both channels.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>

#include "json.hpp"
#include "romcex/bayes.hpp"
#include "romcex/linalg.hpp"
#include "romcex/snapshots.hpp"

namespace romcex {

struct NoiseSpec {
  enum class Kind { kIidGaussian, kCorrelatedGaussian };
  Kind kind = Kind::kIidGaussian;
  double scale = 0.0;
  std::string label = "eta_M";
  /// Correlated kind: covariance scale^2 * k(|i - j|) over state indices;
  /// amplitude is ignored.
  KernelSpec correlation;
  /// When set, the noise only applies to states of this dimension.
  std::optional<std::size_t> dim;

  void validate() const;
  Matrix covariance(std::size_t n) const;
};

/// Samples on the pair grid. Each outer draw eta_N^(b) gets its own N_M
/// inner draws, so pair (a, b) uses column b * N_M + a of eta_m.
struct NoiseDraws {
  Matrix eta_m;  // n x (N_M * N_N)
  Matrix eta_n;  // n x N_N
};

/// Independent streams for the two factors. Draw k of channel M uses stream k
/// of mix_seed(seed, 1); channel N uses mix_seed(seed, 2).
struct ProductSampler {
  NoiseSpec spec_m;
  NoiseSpec spec_n;
  std::uint64_t seed = 0;
  std::size_t count_m = 1;
  std::size_t count_n = 1;

  void validate() const;
  NoiseDraws draws(std::size_t n) const;
  nlohmann::json to_json() const;
};

/// Column k becomes r_k + eta_M^(k) + eta_N^(k); weights are unchanged and
/// the draws are appended to the provenance.
SnapshotSet perturb_snapshots(const SnapshotSet& snapshots, const ProductSampler& sampler);

using NoiseEvaluator = std::function<double(std::span<const double> eta_m, std::span<const double> eta_n)>;

struct TotalExpectation {
  double value = 0.0;
  double nested = 0.0;  // (1/N_N) sum_n (1/N_M) sum_m f
  double flat = 0.0;    // (1/(N_M N_N)) sum_{m,n} f
};

/// Both means are accumulated in exact rational arithmetic, so they agree
/// bit for bit; the rounded value is returned once.
TotalExpectation total_expectation(const NoiseEvaluator& evaluator, const ProductSampler& sampler, std::size_t n);

/// sum_k rho_k (1/(N_M N_N)) sum_{m,n} ||r_k + eta_M^m + eta_N^n - chi(z_k)||^2
/// where z_k is column k of `z_samples`.
double generalized_loss(const SnapshotSet& x_samples, const VectorMap& chi, const Matrix& z_samples,
                        const ProductSampler& sampler);

NoiseSpec noise_from_json(const nlohmann::json& j, const std::string& label);
nlohmann::json noise_to_json(const NoiseSpec& spec);

}  // namespace romcex

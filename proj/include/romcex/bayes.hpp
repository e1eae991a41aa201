#pragma once

// Conditional expectation estimated from samples: constant, affine (Kalman
// gain) and polynomial maps of the observation, the Gauss-Markov-Kalman
// ensemble update, a 1-d quadrature Bayes reference, and Kriging emulators.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "romcex/linalg.hpp"

namespace romcex {

/// Paired samples of a state x and its observation z, one column per sample.
struct EnsembleState {
  Matrix x;  // d_x x N
  Matrix z;  // d_z x N
  nlohmann::json provenance;

  std::size_t size() const noexcept { return x.cols(); }
  /// Column counts agree, entries finite, and N >= min_size.
  void validate(std::size_t min_size = 1) const;
};

enum class EnsemblePart { kState, kObservation };

using VectorMap = std::function<Vector(std::span<const double>)>;

/// Sample mean of the selected part.
Vector expectation(const EnsembleState& ensemble, EnsemblePart part = EnsemblePart::kState);

/// (1/N) sum_i ||x_i - phi(z_i)||^2
double sampled_loss(const EnsembleState& ensemble, const VectorMap& phi);

struct AffineCexMap {
  Matrix gain;    // d_x x d_z
  Vector offset;  // d_x
  double jitter_used = 0.0;

  Vector operator()(std::span<const double> z) const;
};

/// K = C_xz C_z^{-1}, a = mean(x) - K mean(z), with 1/(N-1) sample moments.
AffineCexMap cex_affine(const EnsembleState& ensemble, const CholOptions& chol = {});

struct GmkfResult {
  Matrix x;  // updated state ensemble
  AffineCexMap map;
};

/// x_a = x_f + K (y - z), column by column.
GmkfResult gmkf_update(const EnsembleState& ensemble, std::span<const double> observation,
                       const CholOptions& chol = {});

/// Monomials of total degree <= degree in d variables, graded order.
class PolynomialFeatures {
 public:
  PolynomialFeatures() = default;
  PolynomialFeatures(std::size_t variables, std::size_t degree, std::size_t cap = 2000);

  std::size_t size() const noexcept { return exponents_.size(); }
  std::size_t variables() const noexcept { return variables_; }
  std::size_t degree() const noexcept { return degree_; }
  const std::vector<std::vector<unsigned>>& exponents() const noexcept { return exponents_; }
  Vector operator()(std::span<const double> z) const;

  /// Number of monomials, without enumerating them; saturates at SIZE_MAX.
  static std::size_t count(std::size_t variables, std::size_t degree);

 private:
  std::size_t variables_ = 0;
  std::size_t degree_ = 0;
  std::vector<std::vector<unsigned>> exponents_;
};

struct PolynomialCexMap {
  PolynomialFeatures features;
  Matrix coefficients;  // d_x x features
  double jitter_used = 0.0;

  Vector operator()(std::span<const double> z) const;
};

/// Least-squares regression of x on the monomials of z. The normal equations
/// are solved with unit-diagonal scaling and one refinement step.
PolynomialCexMap cex_polynomial(const EnsembleState& ensemble, std::size_t degree, std::size_t feature_cap = 2000,
                                const CholOptions& chol = {});

/// Sample correlations (1/N) sum_i (x_i - phi(z_i)) chi(z_i) for every test
/// monomial chi up to `test_degree`; rows are state components.
Matrix galerkin_residual(const EnsembleState& ensemble, const VectorMap& phi, std::size_t test_degree);

struct ConditionalProbability {
  double value = 0.0;  // clamped to [0, 1]
  double raw = 0.0;
  bool clamped = false;
};

/// Polynomial CEX of the event indicator evaluated at the observation.
ConditionalProbability conditional_probability(const EnsembleState& ensemble,
                                               const std::function<bool(std::span<const double>)>& event,
                                               std::span<const double> observation, std::size_t degree);

struct QuadratureBayes {
  double mean = 0.0;
  double variance = 0.0;
  double evidence = 0.0;
  Vector grid;
  Vector posterior;  // normalized density on the grid
};

/// Posterior of a scalar state on an increasing grid by the trapezoid rule.
/// `likelihood(x)` is the density of the fixed observation given x.
QuadratureBayes bayes_quadrature_1d(const std::function<double(double)>& prior_pdf,
                                    const std::function<double(double)>& likelihood, std::span<const double> grid);

/// Trapezoid integral of the posterior over {x : event(x)}.
double posterior_probability(const QuadratureBayes& q, const std::function<bool(double)>& event);

// ---------------------------------------------------------------------------
// Linear-Gaussian test problems: x ~ N(m, P), z = H x + eps, eps ~ N(0, R).

struct LinearGaussianModel {
  Vector prior_mean;
  Matrix prior_cov;
  Matrix observation;  // H, d_z x d_x
  Matrix noise_cov;    // R

  void validate() const;
};

/// Column k draws its state from stream 2k and its noise from stream 2k+1 of `seed`.
EnsembleState sample_linear_gaussian(const LinearGaussianModel& model, std::size_t n, std::uint64_t seed);

void save_ensemble(const EnsembleState& ensemble, const std::filesystem::path& stem);
EnsembleState load_ensemble(const std::filesystem::path& stem);

// ---------------------------------------------------------------------------
// Kriging / Gaussian process emulation

enum class KernelKind { kSquaredExponential, kExponential, kEmpiricalGram };

struct KernelSpec {
  KernelKind kind = KernelKind::kSquaredExponential;
  std::optional<double> length_scale;  // unset: median pairwise training distance
  double amplitude = 1.0;
  std::optional<Matrix> cross_covariance;  // d x d, vector outputs
  VectorMap feature_map;                   // empirical-gram only

  /// Requires a resolved length scale for the stationary kinds.
  double operator()(std::span<const double> a, std::span<const double> b) const;
  void validate() const;
};

enum class MeanMode { kZero, kConstantFit };

struct GpeEmulator {
  std::vector<Vector> train_inputs;
  Matrix train_values;  // m x d, one row per input
  KernelSpec kernel;    // length scale resolved
  MeanMode mean_mode = MeanMode::kZero;
  Vector mean;          // d
  CholFactor factor;    // of the Gram matrix
  Matrix alpha;         // K^{-1} (values - mean), m x d
  std::vector<std::string> warnings;

  std::size_t outputs() const noexcept { return train_values.cols(); }
};

/// Inputs equal within 1e-12 (relative) are collapsed into one point whose
/// value is the average; each collapse adds a warning.
GpeEmulator gpe_train(const std::vector<Vector>& inputs, const Matrix& values, KernelSpec kernel,
                      MeanMode mean_mode = MeanMode::kZero, const CholOptions& chol = {});

/// g(mu)^T K^{-1} (values - mean) + mean
Vector gpe_predict(const GpeEmulator& emulator, std::span<const double> mu);

/// w = K^{-1} g(mu), the Kriging weight vector.
Vector gpe_weights(const GpeEmulator& emulator, std::span<const double> mu);

struct LooResult {
  Matrix predictions;  // m x d, prediction at point i from the other m - 1
  Vector errors;       // Euclidean error per point
  double rms = 0.0;
};

/// Leave-one-out by retraining on each reduced set with the resolved kernel.
LooResult gpe_loo(const GpeEmulator& emulator);

/// Dense blocked solve with covariance kappa(mu_i, mu_j) * cross_covariance,
/// limited to d * m <= 2000. Used to cross-check the separable path.
Vector gpe_predict_blocked(const GpeEmulator& emulator, std::span<const double> mu);

/// Median of pairwise Euclidean distances; 1 when undefined or zero.
double median_pairwise_distance(const std::vector<Vector>& points);

/// Kernel spec and training data; the factorization is recomputed on load.
void save_gpe(const GpeEmulator& emulator, const std::filesystem::path& file);
GpeEmulator load_gpe(const std::filesystem::path& file);

}  // namespace romcex

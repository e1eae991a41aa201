#include "romcex/uq.hpp"

#include <gmpxx.h>

#include <cmath>

#include "romcex/error.hpp"
#include "romcex/random.hpp"

namespace romcex {

void NoiseSpec::validate() const {
  require(std::isfinite(scale) && scale >= 0.0, ErrorKind::kValidation, "noise " + label + ": scale must be nonnegative");
  if (kind == Kind::kCorrelatedGaussian) {
    require(correlation.kind != KernelKind::kEmpiricalGram, ErrorKind::kValidation,
            "noise " + label + ": correlation kernel must be stationary");
    require(correlation.length_scale && *correlation.length_scale > 0.0, ErrorKind::kValidation,
            "noise " + label + ": correlation length scale must be positive");
  }
}

Matrix NoiseSpec::covariance(std::size_t n) const {
  validate();
  if (kind == Kind::kIidGaussian) return (scale * scale) * Matrix::identity(n);
  KernelSpec k = correlation;
  k.amplitude = 1.0;
  Matrix c(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double a = static_cast<double>(i), b = static_cast<double>(j);
      c(i, j) = scale * scale * k(std::span<const double>(&a, 1), std::span<const double>(&b, 1));
    }
  return c;
}

void ProductSampler::validate() const {
  spec_m.validate();
  spec_n.validate();
  require(count_m >= 1 && count_n >= 1, ErrorKind::kValidation, "product sampler: counts must be positive");
}

namespace {

Vector draw(const NoiseSpec& spec, std::uint64_t seed, std::size_t k, std::size_t n, const Matrix* factor) {
  require(!spec.dim || *spec.dim == n, ErrorKind::kDomain,
          "noise " + spec.label + ": dimension " + std::to_string(spec.dim.value_or(0)) +
              " differs from state dimension " + std::to_string(n));
  NormalStream rng(seed, k);
  Vector xi = rng.draw(n);
  if (spec.kind == NoiseSpec::Kind::kIidGaussian) {
    for (double& v : xi) v *= spec.scale;
    return xi;
  }
  return *factor * xi;
}

Matrix noise_factor(const NoiseSpec& spec, std::size_t n) {
  if (spec.kind == NoiseSpec::Kind::kIidGaussian || spec.scale == 0.0) return Matrix(n, n);
  return chol_psd(spec.covariance(n)).lower;
}

Matrix draw_all(const NoiseSpec& spec, std::uint64_t seed, std::size_t count, std::size_t n) {
  const Matrix f = noise_factor(spec, n);
  Matrix out(n, count);
  for (std::size_t k = 0; k < count; ++k) out.set_col(k, draw(spec, seed, k, n, &f));
  return out;
}

}  // namespace

NoiseDraws ProductSampler::draws(std::size_t n) const {
  validate();
  return {draw_all(spec_m, mix_seed(seed, 1), count_m * count_n, n), draw_all(spec_n, mix_seed(seed, 2), count_n, n)};
}

nlohmann::json ProductSampler::to_json() const {
  return {{"eta_M", noise_to_json(spec_m)},
          {"eta_N", noise_to_json(spec_n)},
          {"seed", seed},
          {"count_M", count_m},
          {"count_N", count_n}};
}

SnapshotSet perturb_snapshots(const SnapshotSet& snapshots, const ProductSampler& sampler) {
  snapshots.validate();
  sampler.validate();
  const std::size_t n = snapshots.state_dim();
  const std::size_t m = snapshots.count();
  // Column k takes draw k of each channel.
  ProductSampler per_column = sampler;
  per_column.count_m = 1;
  per_column.count_n = std::max<std::size_t>(m, 1);
  const NoiseDraws d = per_column.draws(n);
  SnapshotSet out = snapshots;
  for (std::size_t k = 0; k < m; ++k)
    for (std::size_t i = 0; i < n; ++i) out.states(i, k) += d.eta_m(i, k) + d.eta_n(i, k);

  nlohmann::json record = sampler.to_json();
  record["eta_M_draws"] = nlohmann::json::array();
  record["eta_N_draws"] = nlohmann::json::array();
  for (std::size_t k = 0; k < m; ++k) {
    record["eta_M_draws"].push_back(d.eta_m.col(k));
    record["eta_N_draws"].push_back(d.eta_n.col(k));
  }
  if (!out.provenance.is_object()) out.provenance = nlohmann::json::object();
  out.provenance["perturbation"] = record;
  return out;
}

TotalExpectation total_expectation(const NoiseEvaluator& evaluator, const ProductSampler& sampler, std::size_t n) {
  const NoiseDraws d = sampler.draws(n);
  const std::size_t nm = sampler.count_m, nn = sampler.count_n;
  mpq_class nested = 0, flat = 0;
  for (std::size_t b = 0; b < nn; ++b) {
    const Vector en = d.eta_n.col(b);
    mpq_class inner = 0;
    for (std::size_t a = 0; a < nm; ++a) {
      const double v = evaluator(d.eta_m.col(b * nm + a), en);
      require(std::isfinite(v), ErrorKind::kDomain, "total_expectation: evaluator returned a non-finite value");
      const mpq_class q(v);
      inner += q;
      flat += q;
    }
    inner /= static_cast<unsigned long>(nm);
    nested += inner;
  }
  nested /= static_cast<unsigned long>(nn);
  flat /= static_cast<unsigned long>(nm * nn);
  nested.canonicalize();
  flat.canonicalize();
  require(nested == flat, ErrorKind::kConvergence, "total_expectation: nested and flat means disagree");
  TotalExpectation out;
  out.nested = nested.get_d();
  out.flat = flat.get_d();
  out.value = out.flat;
  return out;
}

double generalized_loss(const SnapshotSet& x_samples, const VectorMap& chi, const Matrix& z_samples,
                        const ProductSampler& sampler) {
  x_samples.validate();
  require(z_samples.cols() == x_samples.count(), ErrorKind::kDomain,
          "generalized_loss: one observation column per snapshot required");
  const std::size_t n = x_samples.state_dim();
  const NoiseDraws d = sampler.draws(n);
  const double inv = 1.0 / static_cast<double>(sampler.count_m * sampler.count_n);
  double total = 0.0;
  Vector base(n);
  for (std::size_t k = 0; k < x_samples.count(); ++k) {
    const Vector c = chi(z_samples.col(k));
    require(c.size() == n, ErrorKind::kDomain, "generalized_loss: map output size mismatch");
    for (std::size_t i = 0; i < n; ++i) base[i] = x_samples.states(i, k) - c[i];
    double sum = 0.0;
    for (std::size_t b = 0; b < sampler.count_n; ++b)
      for (std::size_t a = 0; a < sampler.count_m; ++a)
        for (std::size_t i = 0; i < n; ++i) {
          const double e = base[i] + d.eta_m(i, b * sampler.count_m + a) + d.eta_n(i, b);
          sum += e * e;
        }
    total += x_samples.weights[k] * sum * inv;
  }
  return total;
}

NoiseSpec noise_from_json(const nlohmann::json& j, const std::string& label) {
  NoiseSpec s;
  s.label = label;
  try {
    const std::string kind = j.value("kind", std::string("iid"));
    if (kind == "iid" || kind == "iid_gaussian") {
      s.kind = NoiseSpec::Kind::kIidGaussian;
    } else if (kind == "correlated" || kind == "correlated_gaussian") {
      s.kind = NoiseSpec::Kind::kCorrelatedGaussian;
      const std::string k = j.value("kernel", std::string("squared_exponential"));
      if (k == "squared_exponential") s.correlation.kind = KernelKind::kSquaredExponential;
      else if (k == "exponential") s.correlation.kind = KernelKind::kExponential;
      else fail(ErrorKind::kValidation, label + ".kernel: unknown kernel '" + k + "'");
      s.correlation.length_scale = j.at("length_scale").get<double>();
    } else {
      fail(ErrorKind::kValidation, label + ".kind: unknown noise kind '" + kind + "'");
    }
    s.scale = j.value("scale", 0.0);
    if (j.contains("dim")) s.dim = j.at("dim").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kValidation, label + ": " + e.what());
  }
  s.validate();
  return s;
}

nlohmann::json noise_to_json(const NoiseSpec& spec) {
  nlohmann::json j{{"label", spec.label}, {"scale", spec.scale}};
  if (spec.kind == NoiseSpec::Kind::kIidGaussian) {
    j["kind"] = "iid";
  } else {
    j["kind"] = "correlated";
    j["kernel"] = spec.correlation.kind == KernelKind::kExponential ? "exponential" : "squared_exponential";
    j["length_scale"] = *spec.correlation.length_scale;
  }
  if (spec.dim) j["dim"] = *spec.dim;
  return j;
}

}  // namespace romcex

#include "romcex/bayes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "romcex/error.hpp"
#include "romcex/io.hpp"
#include "romcex/random.hpp"

namespace romcex {

namespace {

Vector row_means(const Matrix& a) {
  Vector m(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    for (double v : a.row(i)) s += v;
    m[i] = s / static_cast<double>(a.cols());
  }
  return m;
}

// (1/(N-1)) sum_k (a_k - abar)(b_k - bbar)^T
Matrix cross_covariance(const Matrix& a, const Vector& abar, const Matrix& b, const Vector& bbar) {
  const std::size_t n = a.cols();
  Matrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += (a(i, k) - abar[i]) * (b(j, k) - bbar[j]);
      c(i, j) = s / static_cast<double>(n - 1);
    }
  return c;
}

double trapezoid(std::span<const double> x, std::span<const double> f) {
  double s = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i) s += 0.5 * (x[i] - x[i - 1]) * (f[i] + f[i - 1]);
  return s;
}

}  // namespace

void EnsembleState::validate(std::size_t min_size) const {
  require(x.cols() == z.cols(), ErrorKind::kDomain, "ensemble: state and observation column counts differ");
  require(size() >= min_size, ErrorKind::kDomain,
          "ensemble: at least " + std::to_string(min_size) + " samples required, got " + std::to_string(size()));
  for (double v : x.entries()) require(std::isfinite(v), ErrorKind::kDomain, "ensemble: non-finite state sample");
  for (double v : z.entries()) require(std::isfinite(v), ErrorKind::kDomain, "ensemble: non-finite observation sample");
}

Vector expectation(const EnsembleState& ensemble, EnsemblePart part) {
  const Matrix& a = part == EnsemblePart::kState ? ensemble.x : ensemble.z;
  require(a.cols() >= 1, ErrorKind::kDomain, "expectation: empty ensemble");
  return row_means(a);
}

double sampled_loss(const EnsembleState& ensemble, const VectorMap& phi) {
  ensemble.validate(1);
  double total = 0.0;
  for (std::size_t k = 0; k < ensemble.size(); ++k) {
    const Vector p = phi(ensemble.z.col(k));
    require(p.size() == ensemble.x.rows(), ErrorKind::kDomain, "sampled_loss: map output size mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double d = ensemble.x(i, k) - p[i];
      total += d * d;
    }
  }
  return total / static_cast<double>(ensemble.size());
}

Vector AffineCexMap::operator()(std::span<const double> z) const {
  Vector out = gain * z;
  axpy(1.0, offset, out);
  return out;
}

AffineCexMap cex_affine(const EnsembleState& ensemble, const CholOptions& chol) {
  ensemble.validate(2);
  const Vector xbar = row_means(ensemble.x);
  const Vector zbar = row_means(ensemble.z);
  const Matrix czz = cross_covariance(ensemble.z, zbar, ensemble.z, zbar);
  const Matrix czx = cross_covariance(ensemble.z, zbar, ensemble.x, xbar);
  const CholFactor f = chol_psd(czz, chol);
  AffineCexMap map;
  map.gain = chol_solve(f, czx).transpose();
  map.jitter_used = f.jitter_used;
  map.offset = xbar;
  axpy(-1.0, map.gain * zbar, map.offset);
  return map;
}

GmkfResult gmkf_update(const EnsembleState& ensemble, std::span<const double> observation, const CholOptions& chol) {
  require(observation.size() == ensemble.z.rows(), ErrorKind::kDomain, "gmkf_update: observation size mismatch");
  GmkfResult out{ensemble.x, cex_affine(ensemble, chol)};
  Vector innovation(observation.size());
  for (std::size_t k = 0; k < ensemble.size(); ++k) {
    for (std::size_t i = 0; i < innovation.size(); ++i) innovation[i] = observation[i] - ensemble.z(i, k);
    const Vector dx = out.map.gain * innovation;
    for (std::size_t i = 0; i < dx.size(); ++i) out.x(i, k) += dx[i];
  }
  return out;
}

// ---------------------------------------------------------------------------

std::size_t PolynomialFeatures::count(std::size_t variables, std::size_t degree) {
  // C(variables + degree, degree), saturating.
  long double c = 1.0L;
  for (std::size_t k = 1; k <= degree; ++k) {
    c = c * static_cast<long double>(variables + k) / static_cast<long double>(k);
    if (c > static_cast<long double>(std::numeric_limits<std::size_t>::max() / 2)) return std::numeric_limits<std::size_t>::max();
  }
  return static_cast<std::size_t>(std::llround(c));
}

PolynomialFeatures::PolynomialFeatures(std::size_t variables, std::size_t degree, std::size_t cap)
    : variables_(variables), degree_(degree) {
  const std::size_t total = count(variables, degree);
  require(total <= cap, ErrorKind::kSize,
          "polynomial features: " + (total == std::numeric_limits<std::size_t>::max() ? std::string("too many")
                                                                                     : std::to_string(total)) +
              " monomials exceed the cap of " + std::to_string(cap));
  // Graded order; within a degree, lexicographic with the first variable highest.
  std::vector<unsigned> e(variables, 0);
  for (std::size_t d = 0; d <= degree; ++d) {
    std::function<void(std::size_t, unsigned)> fill = [&](std::size_t var, unsigned left) {
      if (var + 1 >= variables) {
        if (variables > 0) e[var] = left;
        if (variables > 0 || left == 0) exponents_.push_back(e);
        return;
      }
      for (unsigned p = left + 1; p-- > 0;) {
        e[var] = p;
        fill(var + 1, left - p);
      }
    };
    fill(0, static_cast<unsigned>(d));
  }
}

Vector PolynomialFeatures::operator()(std::span<const double> z) const {
  require(z.size() == variables_, ErrorKind::kDomain, "polynomial features: input dimension mismatch");
  Vector out(exponents_.size());
  for (std::size_t f = 0; f < exponents_.size(); ++f) {
    double v = 1.0;
    for (std::size_t i = 0; i < variables_; ++i)
      for (unsigned p = 0; p < exponents_[f][i]; ++p) v *= z[i];
    out[f] = v;
  }
  return out;
}

Vector PolynomialCexMap::operator()(std::span<const double> z) const { return coefficients * features(z); }

PolynomialCexMap cex_polynomial(const EnsembleState& ensemble, std::size_t degree, std::size_t feature_cap,
                                const CholOptions& chol) {
  require(degree >= 1, ErrorKind::kDomain, "cex_polynomial: degree must be at least 1");
  ensemble.validate(2);
  PolynomialCexMap map{PolynomialFeatures(ensemble.z.rows(), degree, feature_cap), Matrix(), 0.0};
  const std::size_t nf = map.features.size();
  const std::size_t dx = ensemble.x.rows();
  const std::size_t n = ensemble.size();

  Matrix gram(nf, nf);
  Matrix rhs(nf, dx);  // Phi X^T / N
  for (std::size_t k = 0; k < n; ++k) {
    const Vector phi = map.features(ensemble.z.col(k));
    for (std::size_t a = 0; a < nf; ++a) {
      for (std::size_t b = 0; b <= a; ++b) gram(a, b) += phi[a] * phi[b];
      for (std::size_t i = 0; i < dx; ++i) rhs(a, i) += phi[a] * ensemble.x(i, k);
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t a = 0; a < nf; ++a) {
    for (std::size_t b = 0; b <= a; ++b) gram(b, a) = gram(a, b) = gram(a, b) * inv_n;
    for (std::size_t i = 0; i < dx; ++i) rhs(a, i) *= inv_n;
  }

  // Unit-diagonal scaling D^{-1} G D^{-1}.
  Vector scale(nf);
  for (std::size_t a = 0; a < nf; ++a) scale[a] = gram(a, a) > 0.0 ? std::sqrt(gram(a, a)) : 1.0;
  Matrix scaled(nf, nf);
  for (std::size_t a = 0; a < nf; ++a)
    for (std::size_t b = 0; b < nf; ++b) scaled(a, b) = gram(a, b) / (scale[a] * scale[b]);
  const CholFactor f = chol_psd(scaled, chol);
  map.jitter_used = f.jitter_used;

  auto solve = [&](const Matrix& b) {
    Matrix y = b;
    for (std::size_t a = 0; a < nf; ++a)
      for (std::size_t i = 0; i < dx; ++i) y(a, i) /= scale[a];
    Matrix c = chol_solve(f, y);
    for (std::size_t a = 0; a < nf; ++a)
      for (std::size_t i = 0; i < dx; ++i) c(a, i) /= scale[a];
    return c;
  };
  Matrix coef = solve(rhs);
  coef += solve(rhs - gram * coef);  // one step of iterative refinement
  map.coefficients = coef.transpose();
  return map;
}

Matrix galerkin_residual(const EnsembleState& ensemble, const VectorMap& phi, std::size_t test_degree) {
  ensemble.validate(1);
  const PolynomialFeatures chi(ensemble.z.rows(), test_degree, std::numeric_limits<std::size_t>::max());
  Matrix out(ensemble.x.rows(), chi.size());
  for (std::size_t k = 0; k < ensemble.size(); ++k) {
    const Vector zk = ensemble.z.col(k);
    const Vector p = phi(zk);
    require(p.size() == ensemble.x.rows(), ErrorKind::kDomain, "galerkin_residual: map output size mismatch");
    const Vector c = chi(zk);
    for (std::size_t i = 0; i < out.rows(); ++i) {
      const double r = ensemble.x(i, k) - p[i];
      for (std::size_t f = 0; f < c.size(); ++f) out(i, f) += r * c[f];
    }
  }
  out *= 1.0 / static_cast<double>(ensemble.size());
  return out;
}

ConditionalProbability conditional_probability(const EnsembleState& ensemble,
                                               const std::function<bool(std::span<const double>)>& event,
                                               std::span<const double> observation, std::size_t degree) {
  EnsembleState indicator{Matrix(1, ensemble.size()), ensemble.z, nullptr};
  for (std::size_t k = 0; k < ensemble.size(); ++k) indicator.x(0, k) = event(ensemble.x.col(k)) ? 1.0 : 0.0;
  const PolynomialCexMap map = cex_polynomial(indicator, degree);
  ConditionalProbability p;
  p.raw = map(observation)[0];
  p.value = std::clamp(p.raw, 0.0, 1.0);
  p.clamped = p.value != p.raw;
  return p;
}

QuadratureBayes bayes_quadrature_1d(const std::function<double(double)>& prior_pdf,
                                    const std::function<double(double)>& likelihood, std::span<const double> grid) {
  require(grid.size() >= 2, ErrorKind::kDomain, "bayes_quadrature_1d: grid needs at least two points");
  for (std::size_t i = 1; i < grid.size(); ++i)
    require(grid[i] > grid[i - 1], ErrorKind::kDomain, "bayes_quadrature_1d: grid must be strictly increasing");
  QuadratureBayes q;
  q.grid.assign(grid.begin(), grid.end());
  q.posterior.resize(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double p = prior_pdf(grid[i]) * likelihood(grid[i]);
    require(std::isfinite(p) && p >= 0.0, ErrorKind::kDomain, "bayes_quadrature_1d: densities must be finite and nonnegative");
    q.posterior[i] = p;
  }
  q.evidence = trapezoid(q.grid, q.posterior);
  require(q.evidence >= 1e-300, ErrorKind::kSupport,
          "bayes_quadrature_1d: evidence " + format_double(q.evidence) + " is below 1e-300");
  for (double& p : q.posterior) p /= q.evidence;
  Vector moment(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) moment[i] = grid[i] * q.posterior[i];
  q.mean = trapezoid(q.grid, moment);
  for (std::size_t i = 0; i < grid.size(); ++i) moment[i] = (grid[i] - q.mean) * (grid[i] - q.mean) * q.posterior[i];
  q.variance = trapezoid(q.grid, moment);
  return q;
}

double posterior_probability(const QuadratureBayes& q, const std::function<bool(double)>& event) {
  Vector f(q.grid.size());
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = event(q.grid[i]) ? q.posterior[i] : 0.0;
  return trapezoid(q.grid, f);
}

// ---------------------------------------------------------------------------

void LinearGaussianModel::validate() const {
  const std::size_t dx = prior_mean.size();
  require(dx >= 1, ErrorKind::kValidation, "linear-gaussian: empty prior mean");
  require(prior_cov.rows() == dx && prior_cov.cols() == dx, ErrorKind::kValidation,
          "linear-gaussian: prior covariance shape mismatch");
  require(observation.cols() == dx && observation.rows() >= 1, ErrorKind::kValidation,
          "linear-gaussian: observation operator shape mismatch");
  require(noise_cov.rows() == observation.rows() && noise_cov.cols() == observation.rows(), ErrorKind::kValidation,
          "linear-gaussian: noise covariance shape mismatch");
}

EnsembleState sample_linear_gaussian(const LinearGaussianModel& model, std::size_t n, std::uint64_t seed) {
  model.validate();
  const Matrix lp = chol_psd(model.prior_cov).lower;
  const Matrix lr = chol_psd(model.noise_cov).lower;
  const std::size_t dx = model.prior_mean.size();
  const std::size_t dz = model.observation.rows();
  EnsembleState e{Matrix(dx, n), Matrix(dz, n), nullptr};
  for (std::size_t k = 0; k < n; ++k) {
    NormalStream xs(seed, 2 * k);
    NormalStream es(seed, 2 * k + 1);
    Vector x = lp * xs.draw(dx);
    axpy(1.0, model.prior_mean, x);
    Vector z = model.observation * x;
    axpy(1.0, lr * es.draw(dz), z);
    e.x.set_col(k, x);
    e.z.set_col(k, z);
  }
  e.provenance = {{"source", "linear_gaussian"}, {"seed", seed}, {"count", n}};
  return e;
}

void save_ensemble(const EnsembleState& ensemble, const std::filesystem::path& stem) {
  save_matrix_csv(stem.string() + ".x.csv", ensemble.x);
  save_matrix_csv(stem.string() + ".z.csv", ensemble.z);
  const nlohmann::json meta{{"state_dim", ensemble.x.rows()},
                            {"observation_dim", ensemble.z.rows()},
                            {"count", ensemble.size()},
                            {"provenance", ensemble.provenance}};
  write_file_atomic(stem.string() + ".json", meta.dump(2) + "\n");
}

EnsembleState load_ensemble(const std::filesystem::path& stem) {
  EnsembleState e;
  try {
    const auto meta = nlohmann::json::parse(read_file(stem.string() + ".json"));
    e.x = load_matrix_csv(stem.string() + ".x.csv");
    e.z = load_matrix_csv(stem.string() + ".z.csv");
    e.provenance = meta.at("provenance");
    require(e.x.rows() == meta.at("state_dim").get<std::size_t>() && e.size() == meta.at("count").get<std::size_t>() &&
                e.z.rows() == meta.at("observation_dim").get<std::size_t>(),
            ErrorKind::kIo, "ensemble: artifact shapes disagree with metadata");
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorKind::kIo, std::string("ensemble metadata: ") + ex.what());
  }
  e.validate(1);
  return e;
}

// ---------------------------------------------------------------------------
// Kriging

double KernelSpec::operator()(std::span<const double> a, std::span<const double> b) const {
  if (kind == KernelKind::kEmpiricalGram) return amplitude * dot(feature_map(a), feature_map(b));
  require(length_scale.has_value(), ErrorKind::kValidation, "kernel: length scale is not resolved");
  double d2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d2 += (a[i] - b[i]) * (a[i] - b[i]);
  const double l = *length_scale;
  if (kind == KernelKind::kSquaredExponential) return amplitude * std::exp(-d2 / (2.0 * l * l));
  return amplitude * std::exp(-std::sqrt(d2) / l);
}

void KernelSpec::validate() const {
  require(amplitude > 0.0, ErrorKind::kValidation, "kernel: amplitude must be positive");
  require(!length_scale || *length_scale > 0.0, ErrorKind::kValidation, "kernel: length scale must be positive");
  require(kind != KernelKind::kEmpiricalGram || static_cast<bool>(feature_map), ErrorKind::kValidation,
          "kernel: empirical-gram kernel needs a feature map");
  if (cross_covariance) {
    const Matrix& c = *cross_covariance;
    require(c.is_square() && c.rows() >= 1, ErrorKind::kValidation, "kernel: cross covariance must be square");
    require(is_symmetric(c, 1e-12 * std::max(1.0, max_abs(c))), ErrorKind::kValidation,
            "kernel: cross covariance must be symmetric");
    require(sym_eigen(c).values.front() >= -1e-10 * std::max(1.0, frobenius_norm(c)), ErrorKind::kNotPsd,
            "kernel: cross covariance is not positive semidefinite");
  }
}

double median_pairwise_distance(const std::vector<Vector>& points) {
  Vector d;
  for (std::size_t i = 0; i < points.size(); ++i)
    for (std::size_t j = i + 1; j < points.size(); ++j) {
      Vector diff = points[i];
      axpy(-1.0, points[j], diff);
      d.push_back(norm2(diff));
    }
  if (d.empty()) return 1.0;
  std::sort(d.begin(), d.end());
  const std::size_t h = d.size() / 2;
  const double med = d.size() % 2 ? d[h] : 0.5 * (d[h - 1] + d[h]);
  return med > 0.0 ? med : 1.0;
}

GpeEmulator gpe_train(const std::vector<Vector>& inputs, const Matrix& values, KernelSpec kernel, MeanMode mean_mode,
                      const CholOptions& chol) {
  kernel.validate();
  require(!inputs.empty(), ErrorKind::kDomain, "gpe_train: no training inputs");
  require(values.rows() == inputs.size(), ErrorKind::kDomain, "gpe_train: one value row per input required");
  require(values.cols() >= 1, ErrorKind::kDomain, "gpe_train: values need at least one component");
  for (const Vector& p : inputs)
    require(p.size() == inputs.front().size(), ErrorKind::kDomain, "gpe_train: inputs differ in dimension");
  for (double v : values.entries()) require(std::isfinite(v), ErrorKind::kDomain, "gpe_train: non-finite value");
  const std::size_t d = values.cols();
  if (kernel.cross_covariance)
    require(kernel.cross_covariance->rows() == d, ErrorKind::kDomain,
            "gpe_train: cross covariance size differs from output count");

  GpeEmulator em;
  std::vector<Vector> sums;
  std::vector<std::size_t> counts;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::size_t hit = em.train_inputs.size();
    for (std::size_t u = 0; u < em.train_inputs.size(); ++u) {
      Vector diff = inputs[k];
      axpy(-1.0, em.train_inputs[u], diff);
      if (norm2(diff) <= 1e-12 * std::max(1.0, norm2(inputs[k]))) {
        hit = u;
        break;
      }
    }
    const Vector row(values.row(k).begin(), values.row(k).end());
    if (hit == em.train_inputs.size()) {
      em.train_inputs.push_back(inputs[k]);
      sums.push_back(row);
      counts.push_back(1);
    } else {
      axpy(1.0, row, sums[hit]);
      ++counts[hit];
      em.warnings.push_back("duplicate training input " + std::to_string(k) + " collapsed into point " +
                            std::to_string(hit));
    }
  }
  const std::size_t m = em.train_inputs.size();
  em.train_values = Matrix(m, d);
  for (std::size_t u = 0; u < m; ++u)
    for (std::size_t c = 0; c < d; ++c) em.train_values(u, c) = sums[u][c] / static_cast<double>(counts[u]);

  if (kernel.kind != KernelKind::kEmpiricalGram && !kernel.length_scale)
    kernel.length_scale = median_pairwise_distance(em.train_inputs);
  em.kernel = std::move(kernel);
  em.mean_mode = mean_mode;
  em.mean.assign(d, 0.0);
  if (mean_mode == MeanMode::kConstantFit)
    for (std::size_t c = 0; c < d; ++c) {
      double s = 0.0;
      for (std::size_t u = 0; u < m; ++u) s += em.train_values(u, c);
      em.mean[c] = s / static_cast<double>(m);
    }

  Matrix gram(m, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j <= i; ++j) gram(i, j) = gram(j, i) = em.kernel(em.train_inputs[i], em.train_inputs[j]);
  em.factor = chol_psd(gram, chol);
  Matrix centered = em.train_values;
  for (std::size_t u = 0; u < m; ++u)
    for (std::size_t c = 0; c < d; ++c) centered(u, c) -= em.mean[c];
  em.alpha = chol_solve(em.factor, centered);
  return em;
}

Vector gpe_predict(const GpeEmulator& emulator, std::span<const double> mu) {
  require(mu.size() == emulator.train_inputs.front().size(), ErrorKind::kDomain, "gpe_predict: input dimension mismatch");
  Vector out = emulator.mean;
  for (std::size_t i = 0; i < emulator.train_inputs.size(); ++i) {
    const double g = emulator.kernel(mu, emulator.train_inputs[i]);
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += g * emulator.alpha(i, c);
  }
  return out;
}

Vector gpe_weights(const GpeEmulator& emulator, std::span<const double> mu) {
  require(mu.size() == emulator.train_inputs.front().size(), ErrorKind::kDomain, "gpe_weights: input dimension mismatch");
  Vector g(emulator.train_inputs.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = emulator.kernel(mu, emulator.train_inputs[i]);
  return chol_solve(emulator.factor, g);
}

LooResult gpe_loo(const GpeEmulator& emulator) {
  const std::size_t m = emulator.train_inputs.size();
  require(m >= 2, ErrorKind::kDomain, "gpe_loo: at least two training points required");
  const std::size_t d = emulator.outputs();
  LooResult out{Matrix(m, d), Vector(m), 0.0};
  for (std::size_t i = 0; i < m; ++i) {
    std::vector<Vector> inputs;
    Matrix values(m - 1, d);
    for (std::size_t j = 0, r = 0; j < m; ++j) {
      if (j == i) continue;
      inputs.push_back(emulator.train_inputs[j]);
      for (std::size_t c = 0; c < d; ++c) values(r, c) = emulator.train_values(j, c);
      ++r;
    }
    const GpeEmulator reduced = gpe_train(inputs, values, emulator.kernel, emulator.mean_mode);
    const Vector p = gpe_predict(reduced, emulator.train_inputs[i]);
    double e = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      out.predictions(i, c) = p[c];
      e += (p[c] - emulator.train_values(i, c)) * (p[c] - emulator.train_values(i, c));
    }
    out.errors[i] = std::sqrt(e);
    out.rms += e;
  }
  out.rms = std::sqrt(out.rms / static_cast<double>(m));
  return out;
}

Vector gpe_predict_blocked(const GpeEmulator& emulator, std::span<const double> mu) {
  const std::size_t m = emulator.train_inputs.size();
  const std::size_t d = emulator.outputs();
  require(m * d <= 2000, ErrorKind::kSize, "gpe_predict_blocked: d * m exceeds 2000");
  const Matrix sigma = emulator.kernel.cross_covariance ? *emulator.kernel.cross_covariance : Matrix::identity(d);
  Matrix big(m * d, m * d);
  Vector rhs(m * d);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double k = emulator.kernel(emulator.train_inputs[i], emulator.train_inputs[j]);
      for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b) big(i * d + a, j * d + b) = k * sigma(a, b);
    }
    for (std::size_t a = 0; a < d; ++a) rhs[i * d + a] = emulator.train_values(i, a) - emulator.mean[a];
  }
  const Vector beta = chol_solve(chol_psd(big), rhs);
  Vector out = emulator.mean;
  for (std::size_t j = 0; j < m; ++j) {
    const double g = emulator.kernel(mu, emulator.train_inputs[j]);
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) out[a] += g * sigma(a, b) * beta[j * d + b];
  }
  return out;
}

void save_gpe(const GpeEmulator& emulator, const std::filesystem::path& file) {
  const KernelSpec& k = emulator.kernel;
  require(k.kind != KernelKind::kEmpiricalGram, ErrorKind::kValidation,
          "save_gpe: empirical-gram kernels carry a feature map and cannot be persisted");
  nlohmann::json kernel{{"kind", k.kind == KernelKind::kSquaredExponential ? "squared_exponential" : "exponential"},
                        {"length_scale", *k.length_scale},
                        {"amplitude", k.amplitude}};
  if (k.cross_covariance) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < k.cross_covariance->rows(); ++i) rows.push_back(k.cross_covariance->col(i));
    kernel["cross_covariance"] = rows;
  }
  nlohmann::json values = nlohmann::json::array();
  for (std::size_t i = 0; i < emulator.train_values.rows(); ++i)
    values.push_back(Vector(emulator.train_values.row(i).begin(), emulator.train_values.row(i).end()));
  const nlohmann::json j{{"kernel", kernel},
                         {"mean_mode", emulator.mean_mode == MeanMode::kZero ? "zero" : "constant_fit"},
                         {"inputs", emulator.train_inputs},
                         {"values", values}};
  write_file_atomic(file, j.dump(2) + "\n");
}

GpeEmulator load_gpe(const std::filesystem::path& file) {
  try {
    const auto j = nlohmann::json::parse(read_file(file));
    KernelSpec k;
    const std::string kind = j.at("kernel").at("kind").get<std::string>();
    if (kind == "squared_exponential") k.kind = KernelKind::kSquaredExponential;
    else if (kind == "exponential") k.kind = KernelKind::kExponential;
    else fail(ErrorKind::kIo, "gpe: unknown kernel kind '" + kind + "'");
    k.length_scale = j.at("kernel").at("length_scale").get<double>();
    k.amplitude = j.at("kernel").at("amplitude").get<double>();
    if (j.at("kernel").contains("cross_covariance"))
      k.cross_covariance = Matrix::from_columns(j.at("kernel").at("cross_covariance").get<std::vector<Vector>>());
    const auto inputs = j.at("inputs").get<std::vector<Vector>>();
    const auto rows = j.at("values").get<std::vector<Vector>>();
    require(!rows.empty(), ErrorKind::kIo, "gpe: no training values");
    Matrix values(rows.size(), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      require(rows[i].size() == values.cols(), ErrorKind::kIo, "gpe: ragged training values");
      for (std::size_t c = 0; c < values.cols(); ++c) values(i, c) = rows[i][c];
    }
    const MeanMode mode = j.at("mean_mode").get<std::string>() == "zero" ? MeanMode::kZero : MeanMode::kConstantFit;
    return gpe_train(inputs, values, k, mode);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kIo, std::string("gpe file: ") + e.what());
  }
}

}  // namespace romcex

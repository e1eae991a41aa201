#include <chrono>
#include <cmath>
#include <filesystem>
#include <numbers>

#include "doctest.h"
#include "romcex/bayes.hpp"
#include "support.hpp"

using namespace romcex;
using romcex::testing::throws_kind;

namespace {

double gauss_pdf(double x, double mean, double var) {
  return std::exp(-0.5 * (x - mean) * (x - mean) / var) / std::sqrt(2.0 * std::numbers::pi * var);
}

Vector linspace(double a, double b, std::size_t n) {
  Vector g(n);
  for (std::size_t i = 0; i < n; ++i) g[i] = a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
  return g;
}

LinearGaussianModel scalar_model(double prior_var, double noise_var) {
  return {{0.0}, Matrix(1, 1, prior_var), Matrix(1, 1, 1.0), Matrix(1, 1, noise_var)};
}

// Ensemble with x = f(z), z standard normal or uniform.
EnsembleState functional_ensemble(std::size_t n, std::uint64_t seed, double (*f)(double), bool uniform = false) {
  EnsembleState e{Matrix(1, n), Matrix(1, n), nullptr};
  NormalStream rng(seed, 0);
  for (std::size_t k = 0; k < n; ++k) {
    const double z = uniform ? rng.uniform(-2.0, 2.0) : rng();
    e.z(0, k) = z;
    e.x(0, k) = f(z);
  }
  return e;
}

double sample_variance(const Matrix& x, std::size_t row) {
  double m = 0.0;
  for (double v : x.row(row)) m += v;
  m /= static_cast<double>(x.cols());
  double s = 0.0;
  for (double v : x.row(row)) s += (v - m) * (v - m);
  return s / static_cast<double>(x.cols() - 1);
}

}  // namespace

TEST_CASE("expectation") {
  SUBCASE("constant ensemble") {
    EnsembleState e{Matrix(2, 5, 3.5), Matrix(1, 5, 0.0), nullptr};
    CHECK(expectation(e) == Vector{3.5, 3.5});
  }
  SUBCASE("antisymmetric pairs") {
    EnsembleState e{Matrix::from_rows({{1.5, -1.5, 0.25, -0.25}}), Matrix(1, 4), nullptr};
    CHECK(expectation(e)[0] == 0.0);
  }
  SUBCASE("minimizes the constant loss") {
    const EnsembleState e = sample_linear_gaussian(scalar_model(2.0, 1.0), 500, 9);
    const double mean = expectation(e)[0];
    const double h = 1e-3;
    double best_c = 0.0, best = INFINITY;
    for (double c = -2.0; c <= 2.0; c += h) {
      const double l = sampled_loss(e, [&](std::span<const double>) { return Vector{c}; });
      if (l < best) best = l, best_c = c;
    }
    CHECK(std::abs(best_c - mean) <= h);
    // Residual mean of the minimizer vanishes.
    double r = 0.0;
    for (double v : e.x.row(0)) r += v - mean;
    CHECK(std::abs(r) <= 1e-10);
  }
  SUBCASE("empty ensemble") {
    CHECK(throws_kind([] { expectation(EnsembleState{Matrix(1, 0), Matrix(1, 0), nullptr}); }, ErrorKind::kDomain));
  }
}

TEST_CASE("cex_affine") {
  SUBCASE("identity observation") {
    const EnsembleState base = sample_linear_gaussian(scalar_model(1.0, 1.0), 50, 4);
    const EnsembleState e{base.x, base.x, nullptr};
    const AffineCexMap m = cex_affine(e);
    CHECK(std::abs(m.gain(0, 0) - 1.0) <= 1e-8);
    CHECK(std::abs(m.offset[0]) <= 1e-8);
  }
  SUBCASE("independent x and z") {
    EnsembleState e{Matrix(1, 100000), Matrix(1, 100000), nullptr};
    NormalStream a(1, 0), b(1, 1);
    for (std::size_t k = 0; k < e.size(); ++k) e.x(0, k) = a(), e.z(0, k) = b();
    CHECK(std::abs(cex_affine(e).gain(0, 0)) <= 0.02);
  }
  SUBCASE("scalar conjugate gain") {
    const AffineCexMap m = cex_affine(sample_linear_gaussian(scalar_model(1.0, 1.0), 100000, 5));
    CHECK(std::abs(m.gain(0, 0) - 0.5) <= 0.02);
  }
  SUBCASE("maps the mean of z to the mean of x") {
    const LinearGaussianModel lg{{1.0, -1.0},
                                 Matrix::from_rows({{2.0, 0.5}, {0.5, 1.0}}),
                                 Matrix::from_rows({{1.0, 1.0}, {0.0, 2.0}, {1.0, -1.0}}),
                                 0.3 * Matrix::identity(3)};
    const EnsembleState e = sample_linear_gaussian(lg, 300, 6);
    const AffineCexMap m = cex_affine(e);
    const Vector at_mean = m(expectation(e, EnsemblePart::kObservation));
    const Vector xbar = expectation(e);
    for (std::size_t i = 0; i < 2; ++i) CHECK(std::abs(at_mean[i] - xbar[i]) <= 1e-12);
  }
  SUBCASE("single sample") {
    CHECK(throws_kind([] { cex_affine(EnsembleState{Matrix(1, 1), Matrix(1, 1), nullptr}); }, ErrorKind::kDomain));
  }
}

TEST_CASE("gmkf_update") {
  const LinearGaussianModel lg{{1.0, -1.0},
                               Matrix::from_rows({{2.0, 0.5}, {0.5, 1.0}}),
                               Matrix::from_rows({{1.0, 1.0}}),
                               Matrix(1, 1, 0.5)};
  SUBCASE("observation at the predicted mean leaves the mean unchanged") {
    const EnsembleState e = sample_linear_gaussian(lg, 400, 2);
    const GmkfResult r = gmkf_update(e, expectation(e, EnsemblePart::kObservation));
    const Vector before = expectation(e);
    const Vector after = expectation(EnsembleState{r.x, e.z, nullptr});
    for (std::size_t i = 0; i < 2; ++i) CHECK(std::abs(after[i] - before[i]) <= 1e-12);
  }
  SUBCASE("innovation mean identity") {
    const EnsembleState e = sample_linear_gaussian(lg, 400, 3);
    const Vector y{0.7};
    const GmkfResult r = gmkf_update(e, y);
    Vector expect = expectation(e);
    const Vector zbar = expectation(e, EnsemblePart::kObservation);
    axpy(1.0, r.map.gain * Vector{y[0] - zbar[0]}, expect);
    const Vector got = expectation(EnsembleState{r.x, e.z, nullptr});
    for (std::size_t i = 0; i < 2; ++i) CHECK(std::abs(got[i] - expect[i]) <= 1e-12);
  }
  SUBCASE("independent observation leaves the ensemble nearly unchanged") {
    const LinearGaussianModel indep{{0.0}, Matrix(1, 1, 1.0), Matrix(1, 1, 0.0), Matrix(1, 1, 1.0)};
    const EnsembleState e = sample_linear_gaussian(indep, 100000, 8);
    const GmkfResult r = gmkf_update(e, Vector{1.0});
    CHECK(std::abs(r.map.gain(0, 0)) <= 0.02);
    CHECK(std::abs(expectation(EnsembleState{r.x, e.z, nullptr})[0] - expectation(e)[0]) <= 0.02 * 3.0);
  }
  SUBCASE("conjugate posterior, N = 1e5") {
    const auto t0 = std::chrono::steady_clock::now();
    const EnsembleState e = sample_linear_gaussian(lg, 100000, 11);
    const Vector y{1.2};
    const GmkfResult r = gmkf_update(e, y);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    CHECK(secs < 10.0);
    // Closed form: K = P H^T (H P H^T + R)^{-1}.
    const double s = 2.0 + 0.5 + 0.5 + 1.0 + 0.5;  // H P H^T + R
    const Vector ph{2.5, 1.5};                      // P H^T
    const Vector post_mean{1.0 + ph[0] / s * (1.2 - 0.0), -1.0 + ph[1] / s * (1.2 - 0.0)};
    const Matrix post_cov = Matrix::from_rows({{2.0, 0.5}, {0.5, 1.0}}) - (1.0 / s) * outer(ph, ph);
    const Vector got = expectation(EnsembleState{r.x, e.z, nullptr});
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(std::abs(got[i] - post_mean[i]) <= 0.02 * std::abs(post_mean[i]));
      CHECK(std::abs(sample_variance(r.x, i) - post_cov(i, i)) <= 0.02 * post_cov(i, i));
    }
  }
}

TEST_CASE("polynomial features") {
  const PolynomialFeatures f(2, 2);
  CHECK(f.size() == 6);
  CHECK(f(Vector{2.0, 3.0}) == Vector{1.0, 2.0, 3.0, 4.0, 6.0, 9.0});
  CHECK(PolynomialFeatures::count(3, 3) == 20);
  CHECK(PolynomialFeatures(1, 4).size() == 5);
  CHECK(throws_kind([] { PolynomialFeatures(10, 6); }, ErrorKind::kSize));
  CHECK(throws_kind([] { PolynomialFeatures(400, 400); }, ErrorKind::kSize));
}

TEST_CASE("cex_polynomial") {
  SUBCASE("degree one coincides with the affine map") {
    const LinearGaussianModel lg{{0.5}, Matrix(1, 1, 1.0), Matrix::from_rows({{1.0}, {-2.0}}), 0.4 * Matrix::identity(2)};
    const EnsembleState e = sample_linear_gaussian(lg, 2000, 21);
    const PolynomialCexMap p = cex_polynomial(e, 1);
    const AffineCexMap a = cex_affine(e);
    for (const Vector& z : {Vector{0.0, 0.0}, Vector{1.0, -2.0}, Vector{-0.3, 0.8}})
      CHECK(std::abs(p(z)[0] - a(z)[0]) <= 1e-10);
  }
  SUBCASE("realizable quadratic target") {
    const EnsembleState e = functional_ensemble(1000, 3, [](double z) { return z * z; });
    const PolynomialCexMap p = cex_polynomial(e, 2);
    CHECK(sampled_loss(e, [&](std::span<const double> z) { return p(z); }) <= 1e-10);
  }
  SUBCASE("sin target: degree three beats degree one") {
    const EnsembleState e = functional_ensemble(5000, 4, [](double z) { return std::sin(z); }, true);
    const PolynomialCexMap p1 = cex_polynomial(e, 1), p3 = cex_polynomial(e, 3);
    const double l1 = sampled_loss(e, [&](std::span<const double> z) { return p1(z); });
    const double l3 = sampled_loss(e, [&](std::span<const double> z) { return p3(z); });
    CHECK(l3 < l1);
    const AffineCexMap a = cex_affine(e);
    CHECK(l1 <= sampled_loss(e, [&](std::span<const double> z) { return a(z); }) + 1e-12);
  }
  SUBCASE("constants are preserved") {
    EnsembleState e = functional_ensemble(300, 5, [](double) { return 1.0; });
    for (std::size_t degree : {1u, 2u, 3u}) {
      const PolynomialCexMap p = cex_polynomial(e, degree);
      CHECK(std::abs(p(Vector{0.37})[0] - 1.0) <= 1e-10);
    }
  }
  SUBCASE("Pythagoras") {
    const EnsembleState e = functional_ensemble(3000, 6, [](double z) { return std::exp(0.5 * z); });
    for (std::size_t degree : {1u, 2u, 3u}) {
      const PolynomialCexMap p = cex_polynomial(e, degree);
      double xx = 0.0, rr = 0.0, pp = 0.0;
      for (std::size_t k = 0; k < e.size(); ++k) {
        const double v = p(e.z.col(k))[0];
        xx += e.x(0, k) * e.x(0, k);
        rr += (e.x(0, k) - v) * (e.x(0, k) - v);
        pp += v * v;
      }
      CHECK(std::abs(xx - rr - pp) <= 1e-8 * xx);
    }
  }
  SUBCASE("feature cap") {
    const EnsembleState e{Matrix(1, 10), Matrix(12, 10), nullptr};
    CHECK(throws_kind([&] { cex_polynomial(e, 5, 2000); }, ErrorKind::kSize));
  }
}

TEST_CASE("galerkin_residual") {
  SUBCASE("affine fit is orthogonal to {1, z}") {
    const EnsembleState e = functional_ensemble(4000, 7, [](double z) { return std::cos(z) + z; });
    const AffineCexMap a = cex_affine(e);
    const Matrix r = galerkin_residual(e, [&](std::span<const double> z) { return a(z); }, 1);
    CHECK(max_abs(r) <= 1e-10);
  }
  SUBCASE("zero map with x independent of z") {
    EnsembleState e{Matrix(1, 100000), Matrix(1, 100000), nullptr};
    NormalStream a(2, 0), b(2, 1);
    for (std::size_t k = 0; k < e.size(); ++k) e.x(0, k) = a(), e.z(0, k) = b();
    const Matrix r = galerkin_residual(e, [](std::span<const double>) { return Vector{0.0}; }, 1);
    CHECK(max_abs(r) <= 3.0 * 2.0 / std::sqrt(1e5));
  }
  SUBCASE("degree-two fit of z^3 leaves a degree-three correlation") {
    // Projection of z^3 on {1, z, z^2} is 3z; E[(z^3 - 3z) z^3] = 15 - 9 = 6.
    const EnsembleState e = functional_ensemble(200000, 8, [](double z) { return z * z * z; });
    const PolynomialCexMap p = cex_polynomial(e, 2);
    const Matrix r = galerkin_residual(e, [&](std::span<const double> z) { return p(z); }, 3);
    REQUIRE(r.cols() == 4);
    for (std::size_t f = 0; f < 3; ++f) CHECK(std::abs(r(0, f)) <= 1e-8);
    CHECK(std::abs(r(0, 3) - 6.0) <= 0.6);
  }
}

TEST_CASE("bayes_quadrature_1d") {
  const Vector grid = linspace(-10.0, 10.0, 20001);
  SUBCASE("conjugate Gaussian") {
    const QuadratureBayes q = bayes_quadrature_1d([](double x) { return gauss_pdf(x, 0.0, 1.0); },
                                                  [](double x) { return gauss_pdf(1.0, x, 1.0); }, grid);
    CHECK(std::abs(q.mean - 0.5) <= 1e-6);
    CHECK(std::abs(q.variance - 0.5) <= 1e-6);
    CHECK(std::abs(q.evidence - gauss_pdf(1.0, 0.0, 2.0)) <= 1e-6);
    CHECK(std::abs(posterior_probability(q, [](double x) { return x > 0.5; }) - 0.5) <= 1e-3);
  }
  SUBCASE("flat likelihood returns the prior") {
    const QuadratureBayes q = bayes_quadrature_1d([](double x) { return gauss_pdf(x, 1.0, 2.0); },
                                                  [](double) { return 0.3; }, grid);
    for (std::size_t i = 0; i < grid.size(); i += 1000) CHECK(std::abs(q.posterior[i] - gauss_pdf(grid[i], 1.0, 2.0)) <= 1e-9);
  }
  SUBCASE("symmetric problem has zero mean") {
    const QuadratureBayes q = bayes_quadrature_1d([](double x) { return gauss_pdf(x, 0.0, 3.0); },
                                                  [](double x) { return std::exp(-x * x * x * x); }, grid);
    CHECK(std::abs(q.mean) <= 1e-12);
  }
  SUBCASE("vanishing evidence") {
    CHECK(throws_kind([&] { bayes_quadrature_1d([](double) { return 0.0; }, [](double) { return 1.0; }, grid); },
                      ErrorKind::kSupport));
  }
  SUBCASE("bad grid") {
    CHECK(throws_kind([&] { bayes_quadrature_1d([](double) { return 1.0; }, [](double) { return 1.0; }, Vector{1.0, 0.0}); },
                      ErrorKind::kDomain));
  }
}

TEST_CASE("conditional_probability") {
  const EnsembleState e = sample_linear_gaussian(scalar_model(1.0, 1.0), 100000, 31);
  SUBCASE("certain and impossible events") {
    const auto one = conditional_probability(e, [](std::span<const double>) { return true; }, Vector{0.4}, 2);
    CHECK(std::abs(one.value - 1.0) <= 1e-10);
    const auto zero = conditional_probability(e, [](std::span<const double>) { return false; }, Vector{0.4}, 2);
    CHECK(zero.value == 0.0);
    CHECK(!zero.clamped);
  }
  SUBCASE("matches the quadrature posterior") {
    const double y = 1.0;
    const auto p = conditional_probability(e, [](std::span<const double> x) { return x[0] > 0.0; }, Vector{y}, 3);
    const QuadratureBayes q = bayes_quadrature_1d([](double x) { return gauss_pdf(x, 0.0, 1.0); },
                                                  [&](double x) { return gauss_pdf(y, x, 1.0); }, linspace(-10, 10, 20001));
    CHECK(std::abs(p.value - posterior_probability(q, [](double x) { return x > 0.0; })) <= 0.05);
  }
  SUBCASE("clamping is flagged") {
    const auto p = conditional_probability(e, [](std::span<const double> x) { return x[0] > 0.0; }, Vector{40.0}, 1);
    CHECK(p.clamped);
    CHECK(p.value == 1.0);
  }
}

TEST_CASE("gpe") {
  KernelSpec se;
  se.length_scale = 0.5;
  SUBCASE("one training point") {
    const GpeEmulator em = gpe_train({{0.3}}, Matrix(1, 1, 2.5), se);
    CHECK(gpe_predict(em, Vector{0.3})[0] == doctest::Approx(2.5).epsilon(1e-12));
  }
  SUBCASE("zero values give the zero predictor") {
    const GpeEmulator em = gpe_train({{0.0}, {1.0}, {2.0}}, Matrix(3, 2), se);
    CHECK(gpe_predict(em, Vector{0.7}) == Vector{0.0, 0.0});
  }
  SUBCASE("weights solve the Kriging system") {
    NormalStream rng(41, 0);
    std::vector<Vector> pts;
    Matrix vals(5, 1);
    for (std::size_t i = 0; i < 5; ++i) {
      pts.push_back({rng.uniform(0, 2), rng.uniform(0, 2)});
      vals(i, 0) = rng();
    }
    const GpeEmulator em = gpe_train(pts, vals, se);
    const Vector mu{0.9, 1.1};
    const Vector w = gpe_weights(em, mu);
    for (std::size_t i = 0; i < 5; ++i) {
      double kw = 0.0;
      for (std::size_t j = 0; j < 5; ++j) kw += se(pts[i], pts[j]) * w[j];
      CHECK(std::abs(kw - se(pts[i], mu)) <= 1e-8);
    }
    double pred = 0.0;
    for (std::size_t j = 0; j < 5; ++j) pred += w[j] * vals(j, 0);
    CHECK(std::abs(pred - gpe_predict(em, mu)[0]) <= 1e-10);
  }
  SUBCASE("interpolation, scalar and separable vector, both mean modes") {
    NormalStream rng(42, 0);
    std::vector<Vector> pts;
    Matrix vals(12, 3);
    for (std::size_t i = 0; i < 12; ++i) {
      pts.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1)});
      for (std::size_t c = 0; c < 3; ++c) vals(i, c) = std::sin(pts[i][0] * (c + 1.0)) + pts[i][1] + 2.0;
    }
    KernelSpec vec = se;
    vec.cross_covariance = Matrix::from_rows({{1.0, 0.3, 0.0}, {0.3, 2.0, 0.1}, {0.0, 0.1, 0.5}});
    for (MeanMode mode : {MeanMode::kZero, MeanMode::kConstantFit}) {
      for (const KernelSpec& k : {se, vec}) {
        const GpeEmulator em = gpe_train(pts, vals, k, mode);
        for (std::size_t i = 0; i < 12; ++i) {
          const Vector p = gpe_predict(em, pts[i]);
          for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(p[c] - vals(i, c)) <= 1e-6 * std::abs(vals(i, c)));
        }
        // Separable path against the dense blocked solve.
        const Vector mu{0.1, -0.4};
        const Vector a = gpe_predict(em, mu), b = gpe_predict_blocked(em, mu);
        for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(a[c] - b[c]) <= 1e-6 * (1.0 + std::abs(a[c])));
      }
    }
  }
  SUBCASE("decay far from the data") {
    const GpeEmulator em = gpe_train({{0.0}, {0.5}, {1.0}}, Matrix::from_rows({{1.0}, {-2.0}, {3.0}}), se);
    CHECK(std::abs(gpe_predict(em, Vector{1.0 + 10.0 * 0.5})[0]) <= 1e-6 * 3.0);
  }
  SUBCASE("LOO beats the constant predictor on a smooth function") {
    std::vector<Vector> pts;
    Matrix vals(8, 1);
    NormalStream rng(43, 0);
    for (std::size_t i = 0; i < 8; ++i) {
      pts.push_back({rng.uniform(0.0, 1.0)});
      vals(i, 0) = std::sin(2.0 * std::numbers::pi * pts[i][0]);
    }
    KernelSpec k;  // median length scale
    const GpeEmulator em = gpe_train(pts, vals, k, MeanMode::kConstantFit);
    CHECK(*em.kernel.length_scale == doctest::Approx(median_pairwise_distance(pts)));
    const LooResult loo = gpe_loo(em);
    double rms_const = 0.0;
    for (std::size_t i = 0; i < 8; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 8; ++j) s += j == i ? 0.0 : vals(j, 0);
      rms_const += std::pow(s / 7.0 - vals(i, 0), 2);
    }
    rms_const = std::sqrt(rms_const / 8.0);
    CHECK(loo.rms < rms_const);
    // Direct recomputation of one entry.
    std::vector<Vector> rest(pts.begin() + 1, pts.end());
    Matrix rv(7, 1);
    for (std::size_t i = 1; i < 8; ++i) rv(i - 1, 0) = vals(i, 0);
    const GpeEmulator r = gpe_train(rest, rv, em.kernel, MeanMode::kConstantFit);
    CHECK(loo.predictions(0, 0) == gpe_predict(r, pts[0])[0]);
  }
  SUBCASE("duplicates are collapsed with a warning") {
    const GpeEmulator em = gpe_train({{0.0}, {1.0}, {0.0}}, Matrix::from_rows({{1.0}, {2.0}, {3.0}}), se);
    CHECK(em.train_inputs.size() == 2);
    CHECK(em.warnings.size() == 1);
    CHECK(gpe_predict(em, Vector{0.0})[0] == doctest::Approx(2.0).epsilon(1e-9));
  }
  SUBCASE("empirical gram kernel") {
    KernelSpec eg;
    eg.kind = KernelKind::kEmpiricalGram;
    eg.feature_map = [](std::span<const double> mu) { return Vector{1.0, mu[0], mu[0] * mu[0]}; };
    const GpeEmulator em = gpe_train({{0.0}, {1.0}, {2.0}}, Matrix::from_rows({{1.0}, {0.0}, {5.0}}), eg);
    CHECK(gpe_predict(em, Vector{1.0})[0] == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(throws_kind([&] { save_gpe(em, "/tmp/never.json"); }, ErrorKind::kValidation));
    KernelSpec missing;
    missing.kind = KernelKind::kEmpiricalGram;
    CHECK(throws_kind([&] { gpe_train({{0.0}}, Matrix(1, 1), missing); }, ErrorKind::kValidation));
  }
  SUBCASE("persistence recomputes the factor") {
    const auto file = std::filesystem::temp_directory_path() / "romcex_gpe_test.json";
    KernelSpec k = se;
    k.cross_covariance = Matrix::from_rows({{1.0, 0.2}, {0.2, 1.0}});
    const GpeEmulator em = gpe_train({{0.0, 1.0}, {1.0, 0.0}, {0.5, 0.5}}, Matrix::from_rows({{1.0, 2.0}, {3.0, 4.0}, {5.0, 6.0}}), k,
                                     MeanMode::kConstantFit);
    save_gpe(em, file);
    const GpeEmulator back = load_gpe(file);
    CHECK(gpe_predict(back, Vector{0.2, 0.3}) == gpe_predict(em, Vector{0.2, 0.3}));
    std::filesystem::remove(file);
  }
  SUBCASE("non-PSD cross covariance") {
    KernelSpec k = se;
    k.cross_covariance = Matrix::from_rows({{1.0, 2.0}, {2.0, 1.0}});
    CHECK(throws_kind([&] { gpe_train({{0.0}}, Matrix(1, 2), k); }, ErrorKind::kNotPsd));
  }
}

TEST_CASE("ensemble persistence") {
  const auto stem = std::filesystem::temp_directory_path() / "romcex_ens_test";
  const EnsembleState e = sample_linear_gaussian(scalar_model(1.0, 0.5), 20, 1);
  save_ensemble(e, stem);
  const EnsembleState back = load_ensemble(stem);
  CHECK(back.x == e.x);
  CHECK(back.z == e.z);
  CHECK(back.provenance == e.provenance);
  CHECK(sample_linear_gaussian(scalar_model(1.0, 0.5), 20, 1).x == e.x);
}

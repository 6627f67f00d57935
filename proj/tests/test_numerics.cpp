#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "gstrs/numerics.hpp"

using namespace gstrs;

namespace {

Vector random_vector(std::mt19937_64& rng, std::size_t n, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Vector v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

FeatureMatrix random_features(std::mt19937_64& rng, std::size_t n, std::size_t dim) {
  std::vector<Vector> rows;
  for (std::size_t i = 0; i < n; ++i) rows.push_back(random_vector(rng, dim));
  return FeatureMatrix::from_rows(rows);
}

// Cyclic Jacobi rotations on a symmetric matrix; returns eigenvalues sorted
// descending. Written without any library so it is independent of the
// implementation under test.
std::vector<double> jacobi_eigenvalues(std::vector<std::vector<double>> a) {
  const std::size_t n = a.size();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a[i][i];
  std::ranges::sort(ev, std::greater<>());
  return ev;
}

std::vector<std::vector<double>> covariance(const FeatureMatrix& f) {
  const std::size_t n = f.rows(), d = f.dim();
  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += f.row(i)[j] / static_cast<double>(n);
  std::vector<std::vector<double>> c(d, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t k = 0; k < d; ++k)
        c[j][k] += (f.row(i)[j] - mean[j]) * (f.row(i)[k] - mean[k]) / static_cast<double>(n - 1);
  return c;
}

}  // namespace

TEST_CASE("squared_distance") {
  CHECK(squared_distance(Vector{0, 0}, Vector{3, 4}) == 25.0);
  const Vector x{1.5, -2.0, 7.0};
  CHECK(squared_distance(x, x) == 0.0);
  CHECK_THROWS_WITH_AS(squared_distance(Vector{1, 2}, Vector{1, 2, 3}), doctest::Contains("dimension mismatch"), Error);

  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_vector(rng, 16), b = random_vector(rng, 16);
    double oracle = 0.0;
    for (std::size_t d = 0; d < 16; ++d) oracle += (a[d] - b[d]) * (a[d] - b[d]);
    CHECK(squared_distance(a, b) == doctest::Approx(oracle).epsilon(1e-12));
  }
}

TEST_CASE("squared_distance is symmetric and translation invariant") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const auto a = random_vector(rng, 9), b = random_vector(rng, 9), t = random_vector(rng, 9, 5.0);
    CHECK(squared_distance(a, b) == squared_distance(b, a));
    Vector at = a, bt = b;
    for (std::size_t d = 0; d < 9; ++d) at[d] += t[d], bt[d] += t[d];
    const double base = squared_distance(a, b);
    CHECK(std::abs(squared_distance(at, bt) - base) <= 1e-9 * std::max(base, 1e-12));
  }
}

TEST_CASE("l2_normalize") {
  const auto y = l2_normalize(Vector{3, 4});
  CHECK(y[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(y[1] == doctest::Approx(0.8).epsilon(1e-15));
  const Vector unit{0, 1, 0};
  CHECK(l2_normalize(unit) == unit);
  CHECK_THROWS_WITH_AS(l2_normalize(Vector{0, 0}), "zero norm", Error);

  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const auto v = random_vector(rng, 1 + trial % 20, std::pow(10.0, trial % 7 - 3));
    const double n = norm(l2_normalize(v));
    CHECK(n >= 1.0 - 1e-9);
    CHECK(n <= 1.0 + 1e-9);
  }
}

TEST_CASE("FeatureMatrix rejects empty and non-finite input") {
  CHECK_THROWS_AS(FeatureMatrix(Matrix(0, 3)), Error);
  CHECK_THROWS_AS(FeatureMatrix(Matrix(2, 0)), Error);
  CHECK_THROWS_AS(FeatureMatrix(1, 2, {1.0, std::nan("")}), Error);
  CHECK_THROWS_AS(FeatureMatrix(1, 2, {1.0, INFINITY}), Error);
  const FeatureMatrix f(3, 2, {1, 2, 3, 4, 5, 6});
  const std::vector<std::size_t> pick{2, 0};
  const auto s = f.select(pick);
  CHECK(s.rows() == 2);
  CHECK(s.row(0)[0] == 5.0);
  CHECK(s.row(1)[1] == 2.0);
}

TEST_CASE("derive_seed separates streams") {
  CHECK(derive_seed(1, 2, 3) == derive_seed(1, 2, 3));
  CHECK(derive_seed(1, 2, 3) != derive_seed(1, 3, 2));
  CHECK(derive_seed(1, 2) != derive_seed(2, 2));
  auto a = make_rng(5, 1), b = make_rng(5, 1);
  for (int i = 0; i < 10; ++i) CHECK(a() == b());
}

TEST_CASE("pca on points along y = 2x") {
  std::vector<Vector> rows;
  for (int i = -5; i <= 5; ++i) rows.push_back({double(i), 2.0 * i});
  const FeatureMatrix f = FeatureMatrix::from_rows(rows);
  const auto model = pca_fit(f, 2);
  CHECK(model.components(0, 0) == doctest::Approx(1.0 / std::sqrt(5.0)).epsilon(1e-12));
  CHECK(model.components(0, 1) == doctest::Approx(2.0 / std::sqrt(5.0)).epsilon(1e-12));
  CHECK(std::abs(model.explained_variance[1]) < 1e-12);
  CHECK(model.rank_deficient);
  const auto t = pca_transform(model, f);
  for (std::size_t i = 0; i < t.rows(); ++i) CHECK(std::abs(t.row(i)[1]) < 1e-12);
}

TEST_CASE("pca explained variance matches Jacobi oracle") {
  std::mt19937_64 rng(42);
  // Anisotropic so eigenvalues are well separated.
  std::vector<Vector> rows;
  for (int i = 0; i < 50; ++i) {
    auto v = random_vector(rng, 8);
    for (std::size_t d = 0; d < 8; ++d) v[d] *= 1.0 + static_cast<double>(d);
    rows.push_back(v);
  }
  const auto f = FeatureMatrix::from_rows(rows);
  const auto oracle = jacobi_eigenvalues(covariance(f));
  const auto model = pca_fit(f, 8);
  REQUIRE(model.explained_variance.size() == 8);
  for (std::size_t k = 0; k < 8; ++k) {
    CHECK(std::abs(model.explained_variance[k] - oracle[k]) <= 1e-8 * std::max(1.0, oracle[k]));
  }
  CHECK_FALSE(model.rank_deficient);
}

TEST_CASE("pca components are orthonormal with the sign convention") {
  std::mt19937_64 rng(5);
  const auto f = random_features(rng, 30, 6);
  const auto model = pca_fit(f, 4);
  for (std::size_t a = 0; a < 4; ++a) {
    for (std::size_t b = 0; b < 4; ++b) {
      const double d = dot(model.components.row(a), model.components.row(b));
      CHECK(std::abs(d - (a == b ? 1.0 : 0.0)) < 1e-8);
    }
    const auto row = model.components.row(a);
    const auto big = std::ranges::max_element(row, {}, [](double x) { return std::abs(x); });
    CHECK(*big > 0.0);
  }
  for (std::size_t k = 1; k < 4; ++k) {
    CHECK(model.explained_variance[k] <= model.explained_variance[k - 1]);
  }
}

TEST_CASE("pca with k = dim is an isometry and reconstructs the input") {
  std::mt19937_64 rng(9);
  const auto f = random_features(rng, 20, 5);
  const auto model = pca_fit(f, 5);
  const auto t = pca_transform(model, f);
  CHECK(t.dim() == 5);
  for (std::size_t i = 0; i < f.rows(); ++i) {
    for (std::size_t j = i + 1; j < f.rows(); ++j) {
      const double a = squared_distance(f.row(i), f.row(j));
      const double b = squared_distance(t.row(i), t.row(j));
      CHECK(std::abs(a - b) <= 1e-8 * a);
    }
    // back-projection: x = mean + C^T y
    for (std::size_t d = 0; d < 5; ++d) {
      double x = model.mean[d];
      for (std::size_t k = 0; k < 5; ++k) x += model.components(k, d) * t.row(i)[k];
      CHECK(std::abs(x - f.row(i)[d]) < 1e-8);
    }
  }
  const auto at_mean = pca_transform(model, FeatureMatrix::from_rows({model.mean}));
  for (std::size_t k = 0; k < 5; ++k) CHECK(std::abs(at_mean.row(0)[k]) < 1e-12);
}

TEST_CASE("pca errors") {
  std::mt19937_64 rng(1);
  const auto f = random_features(rng, 10, 3);
  CHECK_THROWS_AS(pca_fit(f, 4), Error);
  CHECK_THROWS_AS(pca_fit(random_features(rng, 1, 3), 2), Error);
  const auto model = pca_fit(f, 2);
  CHECK_THROWS_AS(pca_transform(model, random_features(rng, 4, 4)), Error);
}

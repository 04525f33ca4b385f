#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "pbr/common.hpp"
#include "pbr/linalg.hpp"
#include "test_support.hpp"

using namespace pbr;
using Catch::Approx;

namespace {

double naive_l2(FloatSpan a, FloatSpan b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (double(a[i]) - b[i]) * (double(a[i]) - b[i]);
  return s;
}

DenseMatrix rows_of(const VectorDataset& d) {
  DenseMatrix m(d.count, d.dim);
  for (std::size_t i = 0; i < d.data.size(); ++i) m.values[i] = d.data[i];
  return m;
}

double procrustes_objective(const DenseMatrix& r, const DenseMatrix& x, const DenseMatrix& y) {
  double total = 0.0;
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t a = 0; a < r.rows; ++a) {
      double v = 0.0;
      for (std::size_t b = 0; b < r.cols; ++b) v += r(a, b) * x(i, b);
      total += (v - y(i, a)) * (v - y(i, a));
    }
  }
  return total;
}

// Σ‖x − Pᵀ P (x − mean) − mean‖² for a row-orthonormal basis P (k x d).
double reconstruction_error(const VectorDataset& data, const std::vector<float>& mean, const DenseMatrix& basis) {
  double err = 0.0;
  std::vector<double> c(data.dim), proj(basis.rows);
  for (std::size_t i = 0; i < data.count; ++i) {
    const auto r = data.row(i);
    for (std::size_t j = 0; j < data.dim; ++j) c[j] = r[j] - mean[j];
    for (std::size_t a = 0; a < basis.rows; ++a) {
      proj[a] = 0.0;
      for (std::size_t j = 0; j < data.dim; ++j) proj[a] += basis(a, j) * c[j];
    }
    for (std::size_t j = 0; j < data.dim; ++j) {
      double back = 0.0;
      for (std::size_t a = 0; a < basis.rows; ++a) back += basis(a, j) * proj[a];
      err += (c[j] - back) * (c[j] - back);
    }
  }
  return err;
}

VectorDataset anisotropic(std::size_t count, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  const auto q = random_orthonormal(dim, seed + 1);
  VectorDataset d(dim, count);
  std::vector<double> z(dim);
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t j = 0; j < dim; ++j) z[j] = standard_normal(rng) * (1.0 + 3.0 * double(dim - j) / dim);
    for (std::size_t a = 0; a < dim; ++a) {
      double v = 0.5;
      for (std::size_t j = 0; j < dim; ++j) v += q(a, j) * z[j];
      d.data[i * dim + a] = static_cast<float>(v);
    }
  }
  return d;
}

}  // namespace

TEST_CASE("linalg: squared_l2 basics", "[linalg]") {
  const std::vector<float> a{0, 0}, b{3, 4};
  REQUIRE(squared_l2(a, a) == 0.0);
  REQUIRE(squared_l2(a, b) == 25.0);
  REQUIRE(squared_l2(b, a) == 25.0);
  const std::vector<float> c{1, 2, 3};
  REQUIRE_THROWS_AS(squared_l2(a, c), ParameterError);
}

TEST_CASE("linalg: squared_l2 matches naive summation", "[linalg]") {
  Rng rng(3);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t dim = 1 + t % 37;
    const auto a = test::random_vector(dim, rng, -10, 10);
    const auto b = test::random_vector(dim, rng, -10, 10);
    const double ref = naive_l2(a, b);
    REQUIRE(squared_l2(a, b) == Approx(ref).epsilon(1e-6).margin(1e-12));
  }
}

TEST_CASE("linalg: Jacobi eigensolver on a known matrix", "[linalg]") {
  DenseMatrix m(2, 2);
  m(0, 0) = 2;
  m(0, 1) = m(1, 0) = 1;
  m(1, 1) = 2;
  const auto eig = symmetric_eigen(m);
  REQUIRE(eig.values[0] == Approx(3.0).margin(1e-12));
  REQUIRE(eig.values[1] == Approx(1.0).margin(1e-12));
  REQUIRE(eig.vectors(0, 0) > 0);
  REQUIRE(eig.vectors(1, 0) > 0);
  REQUIRE(orthonormality_error(eig.vectors) < 1e-12);
}

TEST_CASE("linalg: PCA of a single axis picks +e1", "[linalg]") {
  VectorDataset d(3, 50);
  Rng rng(2);
  for (std::size_t i = 0; i < 50; ++i) {
    d.data[i * 3] = static_cast<float>(uniform(rng, -5, 5));
    d.data[i * 3 + 1] = 1.0f;
    d.data[i * 3 + 2] = -2.0f;
  }
  const auto model = pca_fit(d, 1);
  REQUIRE(model.components[0] == Approx(1.0).margin(1e-6));
  REQUIRE(model.components[1] == Approx(0.0).margin(1e-6));
  REQUIRE(model.components[2] == Approx(0.0).margin(1e-6));
}

TEST_CASE("linalg: PCA invariants", "[linalg]") {
  const auto d = anisotropic(2000, 8, 5);
  const auto model = pca_fit(d, 8);
  DenseMatrix comps(8, 8);
  for (std::size_t i = 0; i < 64; ++i) comps.values[i] = model.components[i];
  REQUIRE(orthonormality_error(comps) < 1e-5);
  for (std::size_t i = 1; i < model.explained_variance.size(); ++i) {
    REQUIRE(model.explained_variance[i] <= model.explained_variance[i - 1]);
  }
  // Mean maps to the origin.
  const auto zero = pca_transform(model, std::span<const float>(model.mean));
  for (float z : zero) REQUIRE(std::abs(z) < 1e-5f);

  // Full-rank transform is an isometry and invertible.
  const auto y = pca_transform(model, d);
  for (std::size_t i = 0; i + 1 < 200; ++i) {
    const double before = squared_l2(d.row(i), d.row(i + 1));
    const double after = squared_l2(y.row(i), y.row(i + 1));
    REQUIRE(after == Approx(before).epsilon(1e-4));
  }
  const auto back = pca_inverse_transform(model, y);
  for (std::size_t i = 0; i < d.data.size(); ++i) REQUIRE(back.data[i] == Approx(d.data[i]).margin(1e-4));

  // Output variances come out in descending order.
  std::vector<double> var(8, 0.0);
  for (std::size_t i = 0; i < y.count; ++i)
    for (std::size_t j = 0; j < 8; ++j) var[j] += double(y.row(i)[j]) * y.row(i)[j];
  for (std::size_t j = 1; j < 8; ++j) REQUIRE(var[j] <= var[j - 1]);
}

TEST_CASE("linalg: rank-k PCA beats random subspaces", "[linalg]") {
  const auto d = anisotropic(1500, 10, 8);
  const auto model = pca_fit(d, 3);
  DenseMatrix basis(3, 10);
  for (std::size_t i = 0; i < 30; ++i) basis.values[i] = model.components[i];
  const double pca_err = reconstruction_error(d, model.mean, basis);
  for (std::uint64_t t = 0; t < 20; ++t) {
    const auto q = random_orthonormal(10, 100 + t);
    DenseMatrix rnd(3, 10);
    for (std::size_t i = 0; i < 30; ++i) rnd.values[i] = q.values[i];
    REQUIRE(pca_err <= reconstruction_error(d, model.mean, rnd) + 1e-6);
  }
}

TEST_CASE("linalg: PCA errors", "[linalg]") {
  const auto d = test::random_dataset(10, 4, 1);
  REQUIRE_THROWS_AS(pca_fit(d, 5), ParameterError);
  REQUIRE_THROWS_AS(pca_fit(d, 0), ParameterError);
  const auto model = pca_fit(d, 2);
  const auto wrong = test::random_dataset(3, 5, 1);
  REQUIRE_THROWS_AS(pca_transform(model, wrong), ParameterError);
}

TEST_CASE("linalg: PCA model round trip", "[linalg]") {
  test::TempDir dir("linalg");
  const auto model = pca_fit(test::random_dataset(100, 6, 4), 3);
  save_pca(model, dir / "p.bin");
  const auto back = load_pca(dir / "p.bin");
  REQUIRE(back.dim == 6);
  REQUIRE(back.out_dim == 3);
  REQUIRE(back.mean == model.mean);
  REQUIRE(back.components == model.components);
  auto bytes = binio::read_file(dir / "p.bin");
  bytes.resize(bytes.size() - 3);
  test::write_bytes(dir / "q.bin", bytes);
  REQUIRE_THROWS_AS(load_pca(dir / "q.bin"), FormatError);
}

TEST_CASE("linalg: procrustes identity and exact fit", "[linalg]") {
  const auto xd = test::random_dataset(50, 6, 9);
  const auto x = rows_of(xd);
  const auto same = procrustes(x, x);
  REQUIRE_FALSE(same.degenerate);
  const auto id = DenseMatrix::identity(6);
  for (std::size_t i = 0; i < 36; ++i) REQUIRE(same.rotation.values[i] == Approx(id.values[i]).margin(1e-5));

  const auto q = random_orthonormal(6, 77);
  const auto y = x * q.transposed();  // rows y_i = Q x_i
  const auto fit = procrustes(x, y);
  for (std::size_t i = 0; i < 36; ++i) REQUIRE(fit.rotation.values[i] == Approx(q.values[i]).margin(1e-4));
  REQUIRE(orthonormality_error(fit.rotation) < 1e-5);
}

TEST_CASE("linalg: procrustes beats random rotations", "[linalg]") {
  const auto x = rows_of(test::random_dataset(40, 5, 21));
  const auto y = rows_of(test::random_dataset(40, 5, 22));
  const auto fit = procrustes(x, y);
  REQUIRE(orthonormality_error(fit.rotation) < 1e-5);
  const double best = procrustes_objective(fit.rotation, x, y);
  for (std::uint64_t t = 0; t < 100; ++t) {
    REQUIRE(best <= procrustes_objective(random_orthonormal(5, 500 + t), x, y) + 1e-9);
  }
}

TEST_CASE("linalg: procrustes on zero input flags degeneracy", "[linalg]") {
  DenseMatrix zero(4, 3);
  const auto fit = procrustes(zero, zero);
  REQUIRE(fit.degenerate);
  REQUIRE(orthonormality_error(fit.rotation) == 0.0);
  REQUIRE_THROWS_AS(procrustes(DenseMatrix(4, 3), DenseMatrix(3, 3)), ParameterError);
}

TEST_CASE("linalg: rotation apply and transpose invert each other", "[linalg]") {
  const auto r = RotationMatrix::from(random_orthonormal(7, 3));
  Rng rng(1);
  const auto x = test::random_vector(7, rng);
  std::vector<float> y(7), z(7);
  r.apply(x, y);
  r.apply_transpose(y, z);
  for (std::size_t i = 0; i < 7; ++i) REQUIRE(z[i] == Approx(x[i]).margin(1e-5));
  REQUIRE(squared_l2(x, std::vector<float>(7, 0.0f)) ==
          Approx(squared_l2(y, std::vector<float>(7, 0.0f))).epsilon(1e-5));
}

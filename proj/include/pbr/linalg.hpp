#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "pbr/common.hpp"
#include "pbr/dataio.hpp"

namespace pbr {

/// Squared Euclidean distance with double accumulation.
double squared_l2(FloatSpan a, FloatSpan b);

/// Unchecked kernel behind squared_l2; callers guarantee equal lengths.
/// Four interleaved accumulators, combined in a fixed order.
inline double squared_l2_unchecked(const float* a, const float* b, std::size_t n) {
  double acc0 = 0.0, acc1 = 0.0, acc2 = 0.0, acc3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const double d0 = static_cast<double>(a[i]) - b[i];
    const double d1 = static_cast<double>(a[i + 1]) - b[i + 1];
    const double d2 = static_cast<double>(a[i + 2]) - b[i + 2];
    const double d3 = static_cast<double>(a[i + 3]) - b[i + 3];
    acc0 += d0 * d0;
    acc1 += d1 * d1;
    acc2 += d2 * d2;
    acc3 += d3 * d3;
  }
  for (; i < n; ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    acc0 += d * d;
  }
  return (acc0 + acc1) + (acc2 + acc3);
}

/// Dense row-major square or rectangular matrix of doubles.
struct DenseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols) : rows(rows), cols(cols), values(rows * cols) {}
  static DenseMatrix identity(std::size_t n);

  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

  DenseMatrix transposed() const;
  DenseMatrix operator*(const DenseMatrix& rhs) const;
};

/// Largest |A·Aᵀ - I| entry; zero for an exactly orthonormal row set.
double orthonormality_error(const DenseMatrix& a);

struct EigenDecomposition {
  std::vector<double> values;  // descending
  DenseMatrix vectors;         // row i is the eigenvector of values[i]
  int sweeps = 0;
};

/// Cyclic Jacobi eigensolver for symmetric matrices. Eigenvectors are sign
/// normalized so that their first nonzero component is positive.
EigenDecomposition symmetric_eigen(const DenseMatrix& symmetric, double tolerance = 1e-10,
                                   int max_sweeps = 100);

struct PcaModel {
  std::size_t dim = 0;
  std::size_t out_dim = 0;
  std::vector<float> mean;        // dim
  std::vector<float> components;  // out_dim x dim, orthonormal rows
  std::vector<double> explained_variance;  // out_dim, not serialized

  FloatSpan component(std::size_t i) const { return {components.data() + i * dim, dim}; }
};

PcaModel pca_fit(const VectorDataset& data, std::size_t out_dim);
VectorDataset pca_transform(const PcaModel& model, const VectorDataset& data);
std::vector<float> pca_transform(const PcaModel& model, FloatSpan v);
/// componentsᵀ·y + mean; exact inverse only when out_dim == dim.
VectorDataset pca_inverse_transform(const PcaModel& model, const VectorDataset& data);

void save_pca(const PcaModel& model, const std::filesystem::path& path);
PcaModel load_pca(const std::filesystem::path& path);

/// Orthonormal dim x dim matrix stored row-major in single precision.
struct RotationMatrix {
  std::size_t dim = 0;
  std::vector<float> values;

  static RotationMatrix identity(std::size_t dim);
  static RotationMatrix from(const DenseMatrix& m);
  DenseMatrix to_dense() const;

  /// R·x
  void apply(FloatSpan x, std::span<float> out) const;
  /// Rᵀ·x (the inverse)
  void apply_transpose(FloatSpan x, std::span<float> out) const;

  bool operator==(const RotationMatrix&) const = default;
};

struct ProcrustesResult {
  DenseMatrix rotation;
  bool degenerate = false;  // zero cross-covariance; identity returned
};

/// Orthonormal R minimizing Σ‖R·x_i − y_i‖² (x, y are n x d row-major).
/// R = U·Vᵀ from the SVD of yᵀx, obtained via the Gram matrix eigenproblem.
ProcrustesResult procrustes(const DenseMatrix& x, const DenseMatrix& y);

/// Uniformly random orthonormal matrix (Gram-Schmidt on Gaussian rows).
DenseMatrix random_orthonormal(std::size_t dim, std::uint64_t seed);

}  // namespace pbr

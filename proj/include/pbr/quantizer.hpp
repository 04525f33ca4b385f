#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "pbr/binio.hpp"
#include "pbr/dataio.hpp"
#include "pbr/linalg.hpp"

namespace pbr {

/// k centroids of a common dimension, row-major.
struct Codebook {
  std::size_t k = 0;
  std::size_t dim = 0;
  std::vector<float> centroids;

  Codebook() = default;
  Codebook(std::size_t k, std::size_t dim) : k(k), dim(dim), centroids(k * dim, 0.0f) {}

  FloatSpan centroid(std::size_t i) const { return {centroids.data() + i * dim, dim}; }
  std::span<float> centroid(std::size_t i) { return {centroids.data() + i * dim, dim}; }

  bool operator==(const Codebook&) const = default;
};

struct KmeansParams {
  std::size_t max_iters = 25;
  std::uint64_t seed = 0;
};

struct KmeansResult {
  Codebook codebook;
  std::vector<std::uint32_t> labels;  // final assignment of every input row
  std::vector<double> distortion;     // Σ squared error, one entry per assignment pass
  std::size_t iterations = 0;
  bool converged = false;
};

/// Lloyd's algorithm from a k-means++ seeding. Stops after max_iters or when
/// no assignment changes. Empty clusters are re-seeded with the point farthest
/// from its current centroid.
KmeansResult kmeans_fit(const VectorDataset& data, std::size_t k, const KmeansParams& params);

/// Lloyd iterations from a given codebook (warm start).
KmeansResult kmeans_refine(const VectorDataset& data, Codebook init, std::size_t max_iters);

/// Nearest centroid, ties to the lowest id.
std::uint32_t assign(const Codebook& codebook, FloatSpan v);

/// Nearest centroid plus its squared distance.
std::pair<std::uint32_t, double> assign_with_distance(const Codebook& codebook, FloatSpan v);

std::vector<std::uint32_t> assign_all(const Codebook& codebook, const VectorDataset& data);

/// Σ squared distance of each row to its nearest centroid.
double distortion(const Codebook& codebook, const VectorDataset& data);

// ---------------------------------------------------------------------------
// Residual vector quantization

struct RvqCodebooks {
  Codebook first;
  Codebook residual;
};

/// Residuals v − u_{Z(v)} of every row.
VectorDataset residuals(const Codebook& first, const VectorDataset& data,
                        std::span<const std::uint32_t> labels);

RvqCodebooks rvq_fit(const VectorDataset& data, std::size_t M, std::size_t N, const KmeansParams& params);

struct CellPair {
  std::uint32_t m = 0;
  std::uint64_t n = 0;
  bool operator==(const CellPair&) const = default;
};

CellPair rvq_assign2(const Codebook& first, const Codebook& residual, FloatSpan v);

// ---------------------------------------------------------------------------
// Optimized product quantization of the residual space

struct OpqResidualCodec {
  std::size_t dim = 0;
  std::size_t alpha = 0;  // subspaces
  std::size_t beta = 0;   // sub-codewords per subspace
  RotationMatrix rotation;
  std::vector<Codebook> sub_codebooks;  // alpha codebooks of beta x dim/alpha

  std::size_t sub_dim() const { return dim / alpha; }
  /// β^α; saturates at UINT64_MAX.
  std::uint64_t code_count() const;

  std::uint64_t pack(std::span<const std::uint32_t> digits) const;
  std::vector<std::uint32_t> unpack(std::uint64_t code) const;

  /// Sub-codeword ids of an already rotated residual.
  std::vector<std::uint32_t> encode_rotated(FloatSpan rotated) const;
  /// Concatenated sub-codewords of `code` (rotated space).
  std::vector<float> codeword(std::uint64_t code) const;

  bool operator==(const OpqResidualCodec&) const = default;
};

struct OpqFitParams {
  std::size_t alpha = 4;
  std::size_t beta = 16;
  std::size_t iters = 10;
  std::size_t kmeans_iters = 25;  // initial per-subspace k-means
  std::size_t refine_iters = 2;   // warm-started Lloyd passes per alternation
  std::uint64_t seed = 0;
};

struct OpqFitResult {
  OpqResidualCodec codec;
  std::vector<double> distortion;  // [0] before any rotation update, then one per iteration
};

using OpqObserver = std::function<void(std::size_t iteration, const DenseMatrix& rotation, double distortion)>;

/// Non-parametric alternation: fit sub-codebooks, then repeatedly quantize,
/// solve the Procrustes problem for the rotation, and refine the codebooks.
OpqFitResult opq_fit(const VectorDataset& residuals, const OpqFitParams& params,
                     const OpqObserver& observer = {});

CellPair opq_assign2(const Codebook& first, const OpqResidualCodec& codec, FloatSpan v);

// ---------------------------------------------------------------------------
// Serialization (embedded blocks plus standalone files)

void write_codebook(binio::Writer& out, const Codebook& codebook);
Codebook read_codebook(binio::Reader& in);
void write_opq(binio::Writer& out, const OpqResidualCodec& codec);
OpqResidualCodec read_opq(binio::Reader& in);

void save_codebook(const Codebook& codebook, const std::filesystem::path& path);
Codebook load_codebook(const std::filesystem::path& path);

}  // namespace pbr

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "pbr/common.hpp"

namespace pbr {

enum class ElementKind : std::uint8_t { kFloat32, kUint8 };

/// Dense row-major set of equal-dimension vectors.
struct VectorDataset {
  std::size_t dim = 0;
  std::size_t count = 0;
  std::vector<float> data;
  ElementKind kind = ElementKind::kFloat32;

  VectorDataset() = default;
  VectorDataset(std::size_t dim, std::size_t count, std::vector<float> data,
                ElementKind kind = ElementKind::kFloat32);
  VectorDataset(std::size_t dim, std::size_t count);

  FloatSpan row(std::size_t i) const { return {data.data() + i * dim, dim}; }
  std::span<float> row(std::size_t i) { return {data.data() + i * dim, dim}; }
  bool empty() const { return count == 0; }

  /// Throws ParameterError if the length or finiteness invariants are broken.
  void validate() const;

  /// Rows gathered in the order given.
  VectorDataset select(std::span<const std::uint32_t> ids) const;

  bool operator==(const VectorDataset&) const = default;
};

/// Per-query nearest-neighbor identities, each row ordered by true distance.
struct GroundTruth {
  std::size_t query_count = 0;
  std::size_t k = 0;
  std::vector<std::uint32_t> ids;

  std::span<const std::uint32_t> row(std::size_t q) const { return {ids.data() + q * k, k}; }

  /// Checks every identity is below `reference_count`.
  void validate(std::size_t reference_count) const;

  bool operator==(const GroundTruth&) const = default;
};

VectorDataset read_fvecs(const std::filesystem::path& path);
VectorDataset read_bvecs(const std::filesystem::path& path);
GroundTruth read_ivecs(const std::filesystem::path& path);

/// Picks the reader by extension (.fvecs or .bvecs).
VectorDataset read_vectors(const std::filesystem::path& path);

void write_fvecs(const VectorDataset& dataset, const std::filesystem::path& path);
void write_bvecs(const VectorDataset& dataset, const std::filesystem::path& path);
void write_ivecs(const GroundTruth& truth, const std::filesystem::path& path);

/// Gaussian mixture: centers uniform in [0,1]^dim, isotropic noise of standard
/// deviation `spread`. Points are emitted mode by mode.
VectorDataset gen_synthetic(std::size_t num_modes, std::size_t per_mode, std::size_t dim,
                            double spread, std::uint64_t seed);

struct Split {
  VectorDataset kept;
  VectorDataset held_out;
  std::vector<std::uint32_t> held_out_ids;  // positions in the input
};

/// Moves `held_out` uniformly chosen rows into a separate set (e.g. queries).
Split split_holdout(const VectorDataset& dataset, std::size_t held_out, std::uint64_t seed);

struct Sample {
  VectorDataset vectors;
  std::vector<std::uint32_t> ids;  // ascending reference identities
};

/// Stratified sample without replacement: per-stratum sizes proportional to
/// stratum cardinality, rounded by largest remainder so the total is exact.
/// `strata[i]` is the stratum (first-level cluster) of reference row i.
Sample stratified_sample(const VectorDataset& reference, std::span<const std::uint32_t> strata,
                         std::size_t size, std::uint64_t seed);

/// Largest-remainder apportionment of `total` over `weights`; ties in the
/// remainder go to the lower index.
std::vector<std::size_t> apportion(std::span<const std::size_t> weights, std::size_t total);

}  // namespace pbr

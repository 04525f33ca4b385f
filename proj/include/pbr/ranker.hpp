#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "pbr/dataio.hpp"
#include "pbr/index.hpp"
#include "pbr/mlp.hpp"

namespace pbr {

/// K nearest-neighbor weights: the first `top_count` get `top_weight`, the rest 1.
std::vector<double> nn_weights(std::size_t K, std::size_t top_count, double top_weight);

/// a_m = (max D − d_m) / max D over Euclidean query-centroid distances.
std::vector<float> qcs_feature(FloatSpan q, const Codebook& first);

std::size_t feature_width(FeatureMode mode, std::size_t dim, std::size_t M);
std::vector<float> first_feature(FeatureMode mode, FloatSpan q, const Codebook& first);

/// (u_m, q − u_m).
std::vector<float> h_feature(FloatSpan q, const Codebook& first, std::uint32_t m);

/// Weighted NN mass per first-level cell, damped by cell size and normalized.
/// `truth` holds reference identities, nearest first; weights align with it.
std::vector<double> first_targets(std::span<const std::uint32_t> truth, std::span<const double> weights,
                                  const TwoLevelIndex& index);

/// Same over the second-level cells of m (length N). nullopt when none of the
/// neighbors fall in m.
std::optional<std::vector<double>> second_targets(std::span<const std::uint32_t> truth,
                                                  std::span<const double> weights,
                                                  const TwoLevelIndex& index, std::uint32_t m);

/// Largest second-level code space the shared h network will be trained for.
inline constexpr std::uint64_t kMaxSecondOutputs = 4096;

/// One row per query; queries are in index space, truth rows align with them.
TrainingSet first_training_set(FeatureMode mode, const VectorDataset& queries, const GroundTruth& truth,
                               std::span<const double> weights, const TwoLevelIndex& index);

/// For each query, the `cells_per_query` cells with the largest first-level
/// target (ties to the lower id) that hold any neighbor contribute one row.
TrainingSet second_training_set(const VectorDataset& queries, const GroundTruth& truth,
                                std::span<const double> weights, const TwoLevelIndex& index,
                                std::size_t cells_per_query);

std::vector<float> predict_first(const Mlp& f, FloatSpan q, const Codebook& first);
std::vector<float> predict_second(const Mlp& h, FloatSpan q, const Codebook& first, std::uint32_t m);

/// predict_second for several cells in one pass; column j belongs to cells[j].
Mlp::Matrix predict_second_batch(const Mlp& h, FloatSpan q, const Codebook& first,
                                 std::span<const std::uint32_t> cells);

}  // namespace pbr

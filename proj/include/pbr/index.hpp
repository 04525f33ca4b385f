#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "pbr/dataio.hpp"
#include "pbr/quantizer.hpp"

namespace pbr {

enum class IndexKind : std::int32_t { kRvq = 0, kOpq = 1 };

const char* to_string(IndexKind kind);
IndexKind parse_index_kind(const std::string& text);

struct IndexParams {
  IndexKind kind = IndexKind::kRvq;
  std::size_t M = 256;
  std::size_t N = 256;     // RVQ residual codebook size
  std::size_t alpha = 4;   // OPQ subspaces
  std::size_t beta = 16;   // OPQ sub-codewords
  std::size_t kmeans_iters = 25;
  std::size_t opq_iters = 10;
  std::size_t train_sample = 0;  // rows used to train codebooks; 0 = all
  std::uint64_t seed = 0;
};

/// Bytes the structure occupies, split the way the memory accounting is reported.
struct IndexFootprint {
  std::size_t reference_count = 0;
  std::size_t table_bytes = 0;     // 8MN pointer table (RVQ) or 16 bytes per non-empty cell (OPQ)
  std::size_t codebook_bytes = 0;  // first + second-level codebooks (+ rotation)
  std::size_t identity_bytes = 0;  // 4 bytes per indexed point
};

/// M first-level cells, each split into second-level cells (m, n) holding the
/// identities of the reference points quantized to them. Only non-empty
/// second-level cells are materialized; they are kept sorted by (m, n).
class TwoLevelIndex {
 public:
  static TwoLevelIndex build(const VectorDataset& reference, const IndexParams& params);

  IndexKind kind() const { return kind_; }
  std::size_t dim() const { return first_.dim; }
  std::size_t M() const { return first_.k; }
  /// Second-level codes per first-level cell (N for RVQ, β^α for OPQ).
  std::uint64_t N() const;
  std::size_t size() const { return first_label_.size(); }

  const Codebook& first() const { return first_; }
  const Codebook& residual_codebook() const { return residual_; }
  const OpqResidualCodec& opq() const { return opq_; }

  CellPair assign2(FloatSpan v) const;
  std::vector<float> second_centroid(std::uint32_t m, std::uint64_t n) const;

  /// Non-empty second-level codes of cell m, ascending.
  std::span<const std::uint64_t> subclusters(std::uint32_t m) const;
  /// Identities of cell (m, n); empty span for empty or unknown cells.
  std::span<const std::uint32_t> list(std::uint32_t m, std::uint64_t n) const;
  std::span<const std::uint32_t> cluster(std::uint32_t m) const;

  std::size_t cluster_size(std::uint32_t m) const { return cluster(m).size(); }
  std::size_t sub_size(std::uint32_t m, std::uint64_t n) const { return list(m, n).size(); }
  std::uint32_t first_label(std::uint32_t id) const { return first_label_[id]; }
  std::uint64_t second_label(std::uint32_t id) const { return second_label_[id]; }
  std::span<const std::uint32_t> first_labels() const { return first_label_; }

  /// Up to S non-empty second-level codes of cell m with the smallest
  /// ‖q − u_m^n‖², ascending, ties to the lower code.
  std::vector<std::pair<std::uint64_t, double>> top_s_second_by_distance(FloatSpan q, std::uint32_t m,
                                                                        std::size_t S) const;

  /// Distances from q to every non-empty second-level centroid of m, aligned with subclusters(m).
  std::vector<double> second_distances(FloatSpan q, std::uint32_t m) const;

  /// Partition invariants; with `reference`, also re-assigns every point and
  /// checks it lands in its stored cell. Throws FormatError on violation.
  void audit(const VectorDataset* reference = nullptr) const;

  IndexFootprint footprint() const;

  void save(const std::filesystem::path& path) const;
  static TwoLevelIndex load(const std::filesystem::path& path);

 private:
  void populate(std::span<const CellPair> cells);
  std::size_t cell_position(std::uint32_t m, std::uint64_t n) const;

  IndexKind kind_ = IndexKind::kRvq;
  Codebook first_;
  Codebook residual_;
  OpqResidualCodec opq_;

  std::vector<std::size_t> cell_begin_;   // M + 1, range of cells per first-level id
  std::vector<std::uint64_t> cell_code_;  // per cell
  std::vector<std::size_t> id_begin_;     // cells + 1, range into ids_
  std::vector<std::uint32_t> ids_;
  std::vector<std::uint32_t> first_label_;
  std::vector<std::uint64_t> second_label_;
};

}  // namespace pbr

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "pbr/dataio.hpp"
#include "pbr/quantizer.hpp"

namespace pbr {

/// Product quantizer over the original vector space, used only for reranking.
struct PqCodec {
  std::size_t dim = 0;
  std::size_t num_segments = 0;
  std::size_t seg_k = 0;
  std::vector<Codebook> segment_codebooks;

  std::size_t sub_dim() const { return dim / num_segments; }

  bool operator==(const PqCodec&) const = default;
};

/// One byte per segment per reference vector, row-major.
struct PqCodeStore {
  std::size_t count = 0;
  std::size_t num_segments = 0;
  std::vector<std::uint8_t> codes;

  std::span<const std::uint8_t> code(std::size_t i) const {
    return {codes.data() + i * num_segments, num_segments};
  }

  bool operator==(const PqCodeStore&) const = default;
};

/// Squared distances from each query segment to every sub-codeword.
struct AdcTable {
  std::size_t num_segments = 0;
  std::size_t seg_k = 0;
  std::vector<double> values;  // num_segments x seg_k

  double at(std::size_t s, std::size_t j) const { return values[s * seg_k + j]; }
};

struct PqFitParams {
  std::size_t num_segments = 16;
  std::size_t seg_k = 256;
  std::size_t kmeans_iters = 25;
  std::uint64_t seed = 0;
};

PqCodec pq_fit(const VectorDataset& data, const PqFitParams& params);

/// Segment s of every row as its own dataset.
VectorDataset pq_segment(const VectorDataset& data, std::size_t num_segments, std::size_t s);

PqCodeStore pq_encode(const PqCodec& codec, const VectorDataset& data);
std::vector<float> pq_decode(const PqCodec& codec, std::span<const std::uint8_t> code);

AdcTable adc_table(const PqCodec& codec, FloatSpan query);

/// Σ_s table[s][code[s]]; rejects bytes ≥ seg_k.
double adc_distance(const AdcTable& table, std::span<const std::uint8_t> code);

/// Inner-loop variant for stores already checked by validate_codes.
inline double adc_distance_unchecked(const AdcTable& table, const std::uint8_t* code) {
  double acc = 0.0;
  const double* row = table.values.data();
  for (std::size_t s = 0; s < table.num_segments; ++s, row += table.seg_k) acc += row[code[s]];
  return acc;
}

/// Throws FormatError if any byte is out of range for the codec.
void validate_codes(const PqCodec& codec, const PqCodeStore& store);

void save_pq_codec(const PqCodec& codec, const std::filesystem::path& path);
PqCodec load_pq_codec(const std::filesystem::path& path);
void save_pq_codes(const PqCodeStore& store, const std::filesystem::path& path);
PqCodeStore load_pq_codes(const std::filesystem::path& path);

}  // namespace pbr

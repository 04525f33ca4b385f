#include "pbr/pqcodec.hpp"

#include <string>

#include "pbr/binio.hpp"
#include "pbr/linalg.hpp"
#include "pbr/parallel.hpp"
#include "pbr/random.hpp"

namespace pbr {

VectorDataset pq_segment(const VectorDataset& data, std::size_t num_segments, std::size_t s) {
  const std::size_t sd = data.dim / num_segments;
  VectorDataset out(sd, data.count);
  for (std::size_t i = 0; i < data.count; ++i) {
    std::copy_n(data.data.data() + i * data.dim + s * sd, sd, out.data.data() + i * sd);
  }
  return out;
}

PqCodec pq_fit(const VectorDataset& data, const PqFitParams& params) {
  require(params.num_segments >= 1, "pq_fit: num_segments must be positive");
  require(params.seg_k >= 1 && params.seg_k <= 256, "pq_fit: seg_k must be in [1, 256]");
  if (data.dim % params.num_segments != 0) {
    throw ParameterError("pq_fit: dim " + std::to_string(data.dim) + " not divisible by " +
                         std::to_string(params.num_segments) + " segments");
  }
  require(data.count >= params.seg_k, "pq_fit: fewer points than seg_k");
  PqCodec codec;
  codec.dim = data.dim;
  codec.num_segments = params.num_segments;
  codec.seg_k = params.seg_k;
  for (std::size_t s = 0; s < params.num_segments; ++s) {
    auto fit = kmeans_fit(pq_segment(data, params.num_segments, s), params.seg_k,
                          {params.kmeans_iters, derive_seed(params.seed, "pq.seg" + std::to_string(s))});
    codec.segment_codebooks.push_back(std::move(fit.codebook));
  }
  return codec;
}

PqCodeStore pq_encode(const PqCodec& codec, const VectorDataset& data) {
  PqCodeStore store;
  store.count = data.count;
  store.num_segments = codec.num_segments;
  if (data.count == 0) return store;
  require_same_dim(data.dim, codec.dim, "pq_encode");
  store.codes.resize(data.count * codec.num_segments);
  const std::size_t sd = codec.sub_dim();
  parallel_chunks(data.count, 1024, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      auto v = data.row(i);
      for (std::size_t s = 0; s < codec.num_segments; ++s) {
        store.codes[i * codec.num_segments + s] = static_cast<std::uint8_t>(
            assign_with_distance(codec.segment_codebooks[s], v.subspan(s * sd, sd)).first);
      }
    }
  });
  return store;
}

std::vector<float> pq_decode(const PqCodec& codec, std::span<const std::uint8_t> code) {
  require_same_dim(code.size(), codec.num_segments, "pq_decode");
  std::vector<float> out(codec.dim);
  const std::size_t sd = codec.sub_dim();
  for (std::size_t s = 0; s < codec.num_segments; ++s) {
    if (code[s] >= codec.seg_k) throw FormatError("pq_decode: code byte out of range");
    auto c = codec.segment_codebooks[s].centroid(code[s]);
    std::copy(c.begin(), c.end(), out.begin() + static_cast<std::ptrdiff_t>(s * sd));
  }
  return out;
}

AdcTable adc_table(const PqCodec& codec, FloatSpan query) {
  require_same_dim(query.size(), codec.dim, "adc_table");
  AdcTable table;
  table.num_segments = codec.num_segments;
  table.seg_k = codec.seg_k;
  table.values.resize(codec.num_segments * codec.seg_k);
  const std::size_t sd = codec.sub_dim();
  for (std::size_t s = 0; s < codec.num_segments; ++s) {
    const float* q = query.data() + s * sd;
    const auto& cb = codec.segment_codebooks[s];
    for (std::size_t j = 0; j < codec.seg_k; ++j) {
      table.values[s * codec.seg_k + j] = squared_l2_unchecked(q, cb.centroids.data() + j * sd, sd);
    }
  }
  return table;
}

double adc_distance(const AdcTable& table, std::span<const std::uint8_t> code) {
  require_same_dim(code.size(), table.num_segments, "adc_distance");
  for (auto b : code) {
    if (b >= table.seg_k) {
      throw FormatError("adc_distance: code byte " + std::to_string(b) + " >= seg_k " +
                        std::to_string(table.seg_k));
    }
  }
  return adc_distance_unchecked(table, code.data());
}

void validate_codes(const PqCodec& codec, const PqCodeStore& store) {
  if (store.num_segments != codec.num_segments) {
    throw FormatError("PQ code width does not match codec segments");
  }
  for (auto b : store.codes) {
    if (b >= codec.seg_k) throw FormatError("PQ code byte out of range for codec");
  }
}

void save_pq_codec(const PqCodec& codec, const std::filesystem::path& path) {
  binio::Writer out;
  out.magic("PQB1");
  out.put(static_cast<std::int32_t>(codec.dim));
  out.put(static_cast<std::int32_t>(codec.num_segments));
  out.put(static_cast<std::int32_t>(codec.seg_k));
  for (const auto& cb : codec.segment_codebooks) write_codebook(out, cb);
  out.save(path);
}

PqCodec load_pq_codec(const std::filesystem::path& path) {
  binio::Reader in(path);
  in.expect_magic("PQB1");
  PqCodec codec;
  codec.dim = in.get_count("dim");
  codec.num_segments = in.get_count("num_segments");
  codec.seg_k = in.get_count("seg_k");
  if (codec.num_segments == 0 || codec.dim % codec.num_segments != 0 || codec.seg_k == 0 ||
      codec.seg_k > 256) {
    in.fail("invalid PQ codec shape");
  }
  for (std::size_t s = 0; s < codec.num_segments; ++s) {
    auto cb = read_codebook(in);
    if (cb.k != codec.seg_k || cb.dim != codec.sub_dim()) in.fail("segment codebook shape mismatch");
    codec.segment_codebooks.push_back(std::move(cb));
  }
  if (!in.at_end()) in.fail("trailing bytes");
  return codec;
}

void save_pq_codes(const PqCodeStore& store, const std::filesystem::path& path) {
  binio::Writer out;
  out.magic("PQC1");
  out.put(static_cast<std::int32_t>(store.count));
  out.put(static_cast<std::int32_t>(store.num_segments));
  out.put_array(std::span<const std::uint8_t>(store.codes));
  out.save(path);
}

PqCodeStore load_pq_codes(const std::filesystem::path& path) {
  binio::Reader in(path);
  in.expect_magic("PQC1");
  PqCodeStore store;
  store.count = in.get_count("count");
  store.num_segments = in.get_count("num_segments");
  store.codes.resize(store.count * store.num_segments);
  in.get_array(std::span<std::uint8_t>(store.codes));
  if (!in.at_end()) in.fail("trailing bytes");
  return store;
}

}  // namespace pbr

#include "pbr/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "pbr/binio.hpp"
#include "pbr/random.hpp"

namespace pbr {

VectorDataset::VectorDataset(std::size_t dim, std::size_t count, std::vector<float> data,
                             ElementKind kind)
    : dim(dim), count(count), data(std::move(data)), kind(kind) {
  if (this->data.size() != dim * count) {
    throw ParameterError("dataset length " + std::to_string(this->data.size()) +
                         " != count*dim " + std::to_string(dim * count));
  }
}

VectorDataset::VectorDataset(std::size_t dim, std::size_t count)
    : dim(dim), count(count), data(dim * count, 0.0f) {}

void VectorDataset::validate() const {
  if (data.size() != dim * count) throw ParameterError("dataset length != count*dim");
  if (count > 0 && dim == 0) throw ParameterError("dataset has rows but zero dimension");
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) {
      throw ParameterError("non-finite value in row " + std::to_string(i / dim));
    }
  }
}

VectorDataset VectorDataset::select(std::span<const std::uint32_t> ids) const {
  VectorDataset out(dim, ids.size());
  out.kind = kind;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= count) throw ParameterError("select: identity out of range");
    std::copy_n(data.data() + std::size_t{ids[i]} * dim, dim, out.data.data() + i * dim);
  }
  return out;
}

void GroundTruth::validate(std::size_t reference_count) const {
  if (ids.size() != query_count * k) throw ParameterError("ground truth length != queries*k");
  for (auto id : ids) {
    if (id >= reference_count) {
      throw ParameterError("ground truth identity " + std::to_string(id) + " out of range");
    }
  }
}

namespace {

// Shared record walker for the *vecs family: [int32 d][d * elem].
template <class Elem, class Sink>
std::size_t walk_records(binio::Reader& in, Sink&& sink) {
  std::size_t dim = 0;
  std::size_t records = 0;
  std::vector<Elem> buffer;
  while (!in.at_end()) {
    const std::size_t record_offset = in.offset();
    if (in.remaining() < sizeof(std::int32_t)) in.fail("truncated record header");
    const auto d = in.get<std::int32_t>();
    if (d <= 0) {
      throw FormatError(in.label() + ": invalid dimension " + std::to_string(d) +
                        " at byte offset " + std::to_string(record_offset));
    }
    if (records == 0) {
      dim = static_cast<std::size_t>(d);
      buffer.resize(dim);
    } else if (static_cast<std::size_t>(d) != dim) {
      throw FormatError(in.label() + ": dimension mismatch (" + std::to_string(d) + " vs " +
                        std::to_string(dim) + ") in record " + std::to_string(records) +
                        " at byte offset " + std::to_string(record_offset));
    }
    if (in.remaining() < dim * sizeof(Elem)) in.fail("truncated record body");
    in.get_array(std::span<Elem>(buffer));
    sink(std::span<const Elem>(buffer));
    ++records;
  }
  return dim;
}

}  // namespace

VectorDataset read_fvecs(const std::filesystem::path& path) {
  binio::Reader in(path);
  std::vector<float> data;
  std::size_t count = 0;
  const std::size_t dim = walk_records<float>(in, [&](std::span<const float> rec) {
    data.insert(data.end(), rec.begin(), rec.end());
    ++count;
  });
  return VectorDataset(dim, count, std::move(data), ElementKind::kFloat32);
}

VectorDataset read_bvecs(const std::filesystem::path& path) {
  binio::Reader in(path);
  std::vector<float> data;
  std::size_t count = 0;
  const std::size_t dim = walk_records<std::uint8_t>(in, [&](std::span<const std::uint8_t> rec) {
    for (auto b : rec) data.push_back(static_cast<float>(b));
    ++count;
  });
  return VectorDataset(dim, count, std::move(data), ElementKind::kUint8);
}

GroundTruth read_ivecs(const std::filesystem::path& path) {
  binio::Reader in(path);
  GroundTruth gt;
  gt.k = walk_records<std::int32_t>(in, [&](std::span<const std::int32_t> rec) {
    for (auto v : rec) {
      if (v < 0) in.fail("negative identity");
      gt.ids.push_back(static_cast<std::uint32_t>(v));
    }
    ++gt.query_count;
  });
  return gt;
}

VectorDataset read_vectors(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".fvecs") return read_fvecs(path);
  if (ext == ".bvecs") return read_bvecs(path);
  throw ConfigError("unsupported vector file extension: " + path.string());
}

void write_fvecs(const VectorDataset& dataset, const std::filesystem::path& path) {
  binio::Writer out;
  for (std::size_t i = 0; i < dataset.count; ++i) {
    out.put(static_cast<std::int32_t>(dataset.dim));
    out.put_array(dataset.row(i));
  }
  out.save(path);
}

void write_bvecs(const VectorDataset& dataset, const std::filesystem::path& path) {
  binio::Writer out;
  std::vector<std::uint8_t> row(dataset.dim);
  for (std::size_t i = 0; i < dataset.count; ++i) {
    auto src = dataset.row(i);
    for (std::size_t j = 0; j < dataset.dim; ++j) {
      const float v = src[j];
      if (!(v >= 0.0f && v <= 255.0f) || v != std::floor(v)) {
        throw ParameterError("bvecs requires integral values in [0,255]");
      }
      row[j] = static_cast<std::uint8_t>(v);
    }
    out.put(static_cast<std::int32_t>(dataset.dim));
    out.put_array(std::span<const std::uint8_t>(row));
  }
  out.save(path);
}

void write_ivecs(const GroundTruth& truth, const std::filesystem::path& path) {
  binio::Writer out;
  for (std::size_t q = 0; q < truth.query_count; ++q) {
    out.put(static_cast<std::int32_t>(truth.k));
    for (auto id : truth.row(q)) out.put(static_cast<std::int32_t>(id));
  }
  out.save(path);
}

VectorDataset gen_synthetic(std::size_t num_modes, std::size_t per_mode, std::size_t dim,
                            double spread, std::uint64_t seed) {
  require(num_modes > 0 && per_mode > 0 && dim > 0, "gen_synthetic: sizes must be positive");
  require(spread >= 0.0, "gen_synthetic: spread must be non-negative");
  Rng rng(seed);
  std::vector<double> centers(num_modes * dim);
  for (auto& c : centers) c = uniform01(rng);
  VectorDataset out(dim, num_modes * per_mode);
  std::size_t row = 0;
  for (std::size_t m = 0; m < num_modes; ++m) {
    for (std::size_t p = 0; p < per_mode; ++p, ++row) {
      auto dst = out.row(row);
      for (std::size_t j = 0; j < dim; ++j) {
        const double noise = spread > 0.0 ? spread * standard_normal(rng) : 0.0;
        dst[j] = static_cast<float>(centers[m * dim + j] + noise);
      }
    }
  }
  return out;
}

Split split_holdout(const VectorDataset& dataset, std::size_t held_out, std::uint64_t seed) {
  require(held_out <= dataset.count, "split_holdout: held-out size exceeds dataset");
  std::vector<std::uint32_t> perm(dataset.count);
  std::iota(perm.begin(), perm.end(), 0u);
  Rng rng(seed);
  for (std::size_t i = 0; i < held_out; ++i) {
    const auto j = i + uniform_index(rng, dataset.count - i);
    std::swap(perm[i], perm[j]);
  }
  Split split;
  split.held_out_ids.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(held_out));
  std::vector<std::uint32_t> kept(perm.begin() + static_cast<std::ptrdiff_t>(held_out), perm.end());
  std::sort(kept.begin(), kept.end());
  split.held_out = dataset.select(split.held_out_ids);
  split.kept = dataset.select(kept);
  return split;
}

std::vector<std::size_t> apportion(std::span<const std::size_t> weights, std::size_t total) {
  const std::size_t mass = std::accumulate(weights.begin(), weights.end(), std::size_t{0});
  std::vector<std::size_t> quota(weights.size(), 0);
  if (mass == 0 || total == 0) return quota;
  std::vector<std::pair<std::uint64_t, std::size_t>> remainders;  // (remainder numerator, index)
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    // Exact integer arithmetic: total*w/mass.
    const unsigned __int128 scaled = static_cast<unsigned __int128>(total) * weights[i];
    quota[i] = static_cast<std::size_t>(scaled / mass);
    remainders.emplace_back(static_cast<std::uint64_t>(scaled % mass), i);
    assigned += quota[i];
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < total; ++r, ++assigned) {
    ++quota[remainders[r].second];
  }
  return quota;
}

Sample stratified_sample(const VectorDataset& reference, std::span<const std::uint32_t> strata,
                         std::size_t size, std::uint64_t seed) {
  require_same_dim(strata.size(), reference.count, "stratified_sample strata");
  if (size > reference.count) {
    throw ParameterError("stratified_sample: size " + std::to_string(size) +
                         " exceeds reference count " + std::to_string(reference.count));
  }
  std::uint32_t num_strata = 0;
  for (auto s : strata) num_strata = std::max(num_strata, s + 1);
  std::vector<std::vector<std::uint32_t>> members(num_strata);
  for (std::size_t i = 0; i < strata.size(); ++i) {
    members[strata[i]].push_back(static_cast<std::uint32_t>(i));
  }
  std::vector<std::size_t> sizes(num_strata);
  for (std::size_t s = 0; s < num_strata; ++s) sizes[s] = members[s].size();
  const auto quota = apportion(sizes, size);

  Rng rng(seed);
  Sample sample;
  sample.ids.reserve(size);
  for (std::size_t s = 0; s < num_strata; ++s) {
    auto& pool = members[s];
    // Partial Fisher-Yates: the first quota[s] slots become the sample.
    for (std::size_t i = 0; i < quota[s]; ++i) {
      const auto j = i + uniform_index(rng, pool.size() - i);
      std::swap(pool[i], pool[j]);
      sample.ids.push_back(pool[i]);
    }
  }
  std::sort(sample.ids.begin(), sample.ids.end());
  sample.vectors = reference.select(sample.ids);
  return sample;
}

}  // namespace pbr

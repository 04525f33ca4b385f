#include "pbr/index.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "pbr/binio.hpp"
#include "pbr/linalg.hpp"
#include "pbr/parallel.hpp"
#include "pbr/random.hpp"

namespace pbr {

namespace {
constexpr std::int32_t kIndexVersion = 1;
}

const char* to_string(IndexKind kind) { return kind == IndexKind::kRvq ? "rvq" : "opq"; }

IndexKind parse_index_kind(const std::string& text) {
  if (text == "rvq") return IndexKind::kRvq;
  if (text == "opq") return IndexKind::kOpq;
  throw ConfigError("unknown index kind \"" + text + "\" (expected rvq or opq)");
}

TwoLevelIndex TwoLevelIndex::build(const VectorDataset& reference, const IndexParams& params) {
  require(params.M >= 1, "build_index: M must be positive");
  const std::size_t second_need = params.kind == IndexKind::kRvq ? params.N : params.beta;
  if (reference.count < std::max(params.M, second_need)) {
    throw ParameterError("build_index: " + std::to_string(reference.count) +
                         " reference points are fewer than the codebook sizes");
  }
  if (reference.count > 0xFFFFFFFFull) throw ParameterError("build_index: more than 2^32 points");

  const VectorDataset* training = &reference;
  VectorDataset sampled;
  if (params.train_sample > 0 && params.train_sample < reference.count) {
    sampled = split_holdout(reference, params.train_sample, derive_seed(params.seed, "index.sample")).held_out;
    training = &sampled;
  }

  TwoLevelIndex index;
  index.kind_ = params.kind;
  const KmeansParams km{params.kmeans_iters, params.seed};
  if (params.kind == IndexKind::kRvq) {
    auto cbs = rvq_fit(*training, params.M, params.N, km);
    index.first_ = std::move(cbs.first);
    index.residual_ = std::move(cbs.residual);
  } else {
    auto first = kmeans_fit(*training, params.M, {params.kmeans_iters, derive_seed(params.seed, "opq.first")});
    const auto res = residuals(first.codebook, *training, first.labels);
    OpqFitParams op;
    op.alpha = params.alpha;
    op.beta = params.beta;
    op.iters = params.opq_iters;
    op.kmeans_iters = params.kmeans_iters;
    op.seed = derive_seed(params.seed, "opq.codec");
    index.first_ = std::move(first.codebook);
    index.opq_ = opq_fit(res, op).codec;
  }

  std::vector<CellPair> cells(reference.count);
  parallel_chunks(reference.count, 1024, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) cells[i] = index.assign2(reference.row(i));
  });
  index.populate(cells);
  return index;
}

std::uint64_t TwoLevelIndex::N() const {
  return kind_ == IndexKind::kRvq ? residual_.k : opq_.code_count();
}

CellPair TwoLevelIndex::assign2(FloatSpan v) const {
  return kind_ == IndexKind::kRvq ? rvq_assign2(first_, residual_, v) : opq_assign2(first_, opq_, v);
}

void TwoLevelIndex::populate(std::span<const CellPair> cells) {
  const std::size_t n = cells.size();
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    if (cells[a].m != cells[b].m) return cells[a].m < cells[b].m;
    return cells[a].n < cells[b].n;
  });
  first_label_.resize(n);
  second_label_.resize(n);
  cell_begin_.assign(M() + 1, 0);
  cell_code_.clear();
  id_begin_.clear();
  ids_ = order;
  for (std::size_t pos = 0; pos < n; ++pos) {
    const auto& c = cells[order[pos]];
    first_label_[order[pos]] = c.m;
    second_label_[order[pos]] = c.n;
    if (pos == 0 || c.m != cells[order[pos - 1]].m || c.n != cells[order[pos - 1]].n) {
      cell_code_.push_back(c.n);
      id_begin_.push_back(pos);
      ++cell_begin_[c.m + 1];
    }
  }
  id_begin_.push_back(n);
  for (std::size_t m = 0; m < M(); ++m) cell_begin_[m + 1] += cell_begin_[m];
}

std::vector<float> TwoLevelIndex::second_centroid(std::uint32_t m, std::uint64_t n) const {
  if (m >= M()) throw ParameterError("second_centroid: first-level id out of range");
  if (n >= N()) throw ParameterError("second_centroid: second-level id out of range");
  auto u = first_.centroid(m);
  std::vector<float> out(u.begin(), u.end());
  if (kind_ == IndexKind::kRvq) {
    auto r = residual_.centroid(static_cast<std::size_t>(n));
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += r[j];
  } else {
    const auto word = opq_.codeword(n);
    std::vector<float> back(word.size());
    opq_.rotation.apply_transpose(word, back);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += back[j];
  }
  return out;
}

std::span<const std::uint64_t> TwoLevelIndex::subclusters(std::uint32_t m) const {
  if (m >= M()) throw ParameterError("subclusters: first-level id out of range");
  return {cell_code_.data() + cell_begin_[m], cell_begin_[m + 1] - cell_begin_[m]};
}

std::size_t TwoLevelIndex::cell_position(std::uint32_t m, std::uint64_t n) const {
  const auto codes = subclusters(m);
  const auto it = std::lower_bound(codes.begin(), codes.end(), n);
  if (it == codes.end() || *it != n) return cell_code_.size();
  return cell_begin_[m] + static_cast<std::size_t>(it - codes.begin());
}

std::span<const std::uint32_t> TwoLevelIndex::list(std::uint32_t m, std::uint64_t n) const {
  const auto c = cell_position(m, n);
  if (c == cell_code_.size()) return {};
  return {ids_.data() + id_begin_[c], id_begin_[c + 1] - id_begin_[c]};
}

std::span<const std::uint32_t> TwoLevelIndex::cluster(std::uint32_t m) const {
  if (m >= M()) throw ParameterError("cluster: first-level id out of range");
  const std::size_t begin = id_begin_[cell_begin_[m]];
  const std::size_t end = id_begin_[cell_begin_[m + 1]];
  return {ids_.data() + begin, end - begin};
}

std::vector<double> TwoLevelIndex::second_distances(FloatSpan q, std::uint32_t m) const {
  require_same_dim(q.size(), dim(), "second_distances");
  const auto codes = subclusters(m);
  std::vector<float> r(dim());
  auto u = first_.centroid(m);
  for (std::size_t j = 0; j < r.size(); ++j) r[j] = q[j] - u[j];
  std::vector<double> dist(codes.size());
  if (kind_ == IndexKind::kRvq) {
    for (std::size_t i = 0; i < codes.size(); ++i) {
      dist[i] = squared_l2_unchecked(r.data(), residual_.centroids.data() + codes[i] * dim(), dim());
    }
    return dist;
  }
  // ‖q − u_m − Φᵀu^n‖² = ‖Φ(q − u_m) − u^n‖², summed from per-subspace tables.
  std::vector<float> rotated(dim());
  opq_.rotation.apply(r, rotated);
  const std::size_t sd = opq_.sub_dim();
  std::vector<double> table(opq_.alpha * opq_.beta);
  for (std::size_t s = 0; s < opq_.alpha; ++s) {
    for (std::size_t j = 0; j < opq_.beta; ++j) {
      table[s * opq_.beta + j] = squared_l2_unchecked(
          rotated.data() + s * sd, opq_.sub_codebooks[s].centroids.data() + j * sd, sd);
    }
  }
  for (std::size_t i = 0; i < codes.size(); ++i) {
    std::uint64_t code = codes[i];
    double acc = 0.0;
    for (std::size_t s = opq_.alpha; s-- > 0;) {
      acc += table[s * opq_.beta + code % opq_.beta];
      code /= opq_.beta;
    }
    dist[i] = acc;
  }
  return dist;
}

std::vector<std::pair<std::uint64_t, double>> TwoLevelIndex::top_s_second_by_distance(
    FloatSpan q, std::uint32_t m, std::size_t S) const {
  const auto codes = subclusters(m);
  const auto dist = second_distances(q, m);
  std::vector<std::pair<double, std::uint64_t>> ranked(codes.size());
  for (std::size_t i = 0; i < codes.size(); ++i) ranked[i] = {dist[i], codes[i]};
  const std::size_t take = std::min(S, ranked.size());
  std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(take), ranked.end());
  std::vector<std::pair<std::uint64_t, double>> out(take);
  for (std::size_t i = 0; i < take; ++i) out[i] = {ranked[i].second, ranked[i].first};
  return out;
}

void TwoLevelIndex::audit(const VectorDataset* reference) const {
  const std::size_t n = size();
  if (ids_.size() != n) throw FormatError("index audit: identity count mismatch");
  std::vector<std::uint8_t> seen(n, 0);
  for (std::uint32_t m = 0; m < M(); ++m) {
    const auto codes = subclusters(m);
    if (!std::is_sorted(codes.begin(), codes.end()) ||
        std::adjacent_find(codes.begin(), codes.end()) != codes.end()) {
      throw FormatError("index audit: second-level codes of cell " + std::to_string(m) + " not strictly sorted");
    }
    std::size_t sub_total = 0;
    for (auto code : codes) {
      if (code >= N()) throw FormatError("index audit: second-level code out of range");
      const auto ids = list(m, code);
      if (ids.empty()) throw FormatError("index audit: materialized empty cell");
      sub_total += ids.size();
      for (auto id : ids) {
        if (id >= n || seen[id]) throw FormatError("index audit: identity duplicated or out of range");
        seen[id] = 1;
        if (first_label_[id] != m || second_label_[id] != code) {
          throw FormatError("index audit: label table disagrees with lists");
        }
      }
    }
    if (sub_total != cluster_size(m)) throw FormatError("index audit: subcluster sizes do not sum to cluster size");
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end()) throw FormatError("index audit: identity missing");
  if (reference != nullptr) {
    if (reference->count != n) throw FormatError("index audit: reference count mismatch");
    for (std::size_t i = 0; i < n; ++i) {
      const auto cell = assign2(reference->row(i));
      if (cell.m != first_label_[i] || cell.n != second_label_[i]) {
        throw FormatError("index audit: point " + std::to_string(i) + " re-assigns to a different cell");
      }
    }
  }
}

IndexFootprint TwoLevelIndex::footprint() const {
  IndexFootprint f;
  f.reference_count = size();
  f.identity_bytes = 4 * size();
  if (kind_ == IndexKind::kRvq) {
    f.table_bytes = 8 * M() * residual_.k;
    f.codebook_bytes = 4 * (M() + residual_.k) * dim();
  } else {
    f.table_bytes = 16 * cell_code_.size();
    f.codebook_bytes = 4 * (M() * dim() + opq_.beta * dim() + dim() * dim());
  }
  return f;
}

void TwoLevelIndex::save(const std::filesystem::path& path) const {
  binio::Writer out;
  out.magic("LIX1");
  out.put(kIndexVersion);
  out.put(static_cast<std::int32_t>(kind_));
  out.put(static_cast<std::int32_t>(dim()));
  out.put(static_cast<std::int32_t>(M()));
  if (kind_ == IndexKind::kRvq) {
    out.put(static_cast<std::int32_t>(residual_.k));
  } else {
    out.put(static_cast<std::int32_t>(opq_.alpha));
    out.put(static_cast<std::int32_t>(opq_.beta));
  }
  write_codebook(out, first_);
  if (kind_ == IndexKind::kRvq) {
    write_codebook(out, residual_);
    // Dense M x N table of list lengths.
    for (std::uint32_t m = 0; m < M(); ++m) {
      const auto codes = subclusters(m);
      std::size_t next = 0;
      for (std::uint64_t code = 0; code < residual_.k; ++code) {
        std::uint64_t len = 0;
        if (next < codes.size() && codes[next] == code) {
          const std::size_t c = cell_begin_[m] + next;
          len = id_begin_[c + 1] - id_begin_[c];
          ++next;
        }
        out.put(len);
      }
    }
  } else {
    write_opq(out, opq_);
    for (std::uint32_t m = 0; m < M(); ++m) {
      out.put(static_cast<std::uint64_t>(cell_begin_[m + 1] - cell_begin_[m]));
      for (std::size_t c = cell_begin_[m]; c < cell_begin_[m + 1]; ++c) {
        out.put(cell_code_[c]);
        out.put(static_cast<std::uint64_t>(id_begin_[c + 1] - id_begin_[c]));
      }
    }
  }
  out.put_array(std::span<const std::uint32_t>(ids_));
  out.save(path);
}

TwoLevelIndex TwoLevelIndex::load(const std::filesystem::path& path) {
  binio::Reader in(path);
  in.expect_magic("LIX1");
  if (in.get<std::int32_t>() != kIndexVersion) in.fail("unsupported index version");
  const auto kind = in.get<std::int32_t>();
  if (kind != 0 && kind != 1) in.fail("unknown index kind");
  TwoLevelIndex index;
  index.kind_ = static_cast<IndexKind>(kind);
  const auto dim = in.get_count("dim");
  const auto M = in.get_count("M");
  std::size_t N = 0, alpha = 0, beta = 0;
  if (index.kind_ == IndexKind::kRvq) {
    N = in.get_count("N");
  } else {
    alpha = in.get_count("alpha");
    beta = in.get_count("beta");
  }
  index.first_ = read_codebook(in);
  if (index.first_.k != M || index.first_.dim != dim) in.fail("first codebook shape mismatch");

  std::vector<std::pair<std::uint32_t, std::uint64_t>> cells;  // (m, code)
  std::vector<std::uint64_t> lengths;
  if (index.kind_ == IndexKind::kRvq) {
    index.residual_ = read_codebook(in);
    if (index.residual_.k != N || index.residual_.dim != dim) in.fail("residual codebook shape mismatch");
    for (std::uint32_t m = 0; m < M; ++m) {
      for (std::uint64_t code = 0; code < N; ++code) {
        const auto len = in.get<std::uint64_t>();
        if (len > 0) {
          cells.emplace_back(m, code);
          lengths.push_back(len);
        }
      }
    }
  } else {
    index.opq_ = read_opq(in);
    if (index.opq_.dim != dim || index.opq_.alpha != alpha || index.opq_.beta != beta) {
      in.fail("OPQ codec shape mismatch");
    }
    for (std::uint32_t m = 0; m < M; ++m) {
      const auto count = in.get<std::uint64_t>();
      if (count > in.remaining() / 16) in.fail("cell count exceeds file size");
      std::uint64_t previous = 0;
      for (std::uint64_t i = 0; i < count; ++i) {
        const auto code = in.get<std::uint64_t>();
        const auto len = in.get<std::uint64_t>();
        if (code >= index.opq_.code_count() || (i > 0 && code <= previous) || len == 0) {
          in.fail("invalid sparse cell entry");
        }
        previous = code;
        cells.emplace_back(m, code);
        lengths.push_back(len);
      }
    }
  }
  std::uint64_t total = 0;
  for (auto len : lengths) {
    total += len;
    if (total > in.remaining() / 4) in.fail("list lengths exceed file size");
  }
  std::vector<std::uint32_t> ids(total);
  in.get_array(std::span<std::uint32_t>(ids));
  if (!in.at_end()) in.fail("trailing bytes");

  std::vector<CellPair> per_point(total, CellPair{0, ~std::uint64_t{0}});
  std::size_t pos = 0;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    for (std::uint64_t k = 0; k < lengths[c]; ++k, ++pos) {
      const auto id = ids[pos];
      if (id >= total || per_point[id].n != ~std::uint64_t{0}) {
        throw FormatError(path.string() + ": identity lists are not a partition of [0, " +
                          std::to_string(total) + ")");
      }
      per_point[id] = {cells[c].first, cells[c].second};
    }
  }
  index.populate(per_point);
  return index;
}

}  // namespace pbr

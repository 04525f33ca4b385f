#include "pbr/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "pbr/parallel.hpp"
#include "pbr/random.hpp"

namespace pbr {

namespace {

constexpr std::size_t kAssignChunk = 1024;

struct Assignment {
  std::vector<std::uint32_t> labels;
  std::vector<double> dist;
  double total = 0.0;
};

Assignment assign_rows(const Codebook& codebook, const VectorDataset& data) {
  Assignment a;
  a.labels.resize(data.count);
  a.dist.resize(data.count);
  std::vector<double> partial(chunk_count(data.count, kAssignChunk), 0.0);
  parallel_chunks(data.count, kAssignChunk, [&](std::size_t c, std::size_t begin, std::size_t end) {
    double sum = 0.0;
    for (std::size_t i = begin; i < end; ++i) {
      const auto [label, d] = assign_with_distance(codebook, data.row(i));
      a.labels[i] = label;
      a.dist[i] = d;
      sum += d;
    }
    partial[c] = sum;
  });
  for (double p : partial) a.total += p;
  return a;
}

Codebook kmeanspp_seed(const VectorDataset& data, std::size_t k, Rng& rng) {
  Codebook cb(k, data.dim);
  std::vector<double> nearest(data.count, std::numeric_limits<double>::infinity());
  std::size_t chosen = uniform_index(rng, data.count);
  for (std::size_t c = 0; c < k; ++c) {
    std::copy_n(data.data.data() + chosen * data.dim, data.dim, cb.centroid(c).begin());
    if (c + 1 == k) break;
    const float* centroid = cb.centroids.data() + c * data.dim;
    std::vector<double> partial(chunk_count(data.count, kAssignChunk), 0.0);
    parallel_chunks(data.count, kAssignChunk, [&](std::size_t ch, std::size_t begin, std::size_t end) {
      double sum = 0.0;
      for (std::size_t i = begin; i < end; ++i) {
        nearest[i] = std::min(nearest[i], squared_l2_unchecked(data.row(i).data(), centroid, data.dim));
        sum += nearest[i];
      }
      partial[ch] = sum;
    });
    double total = 0.0;
    for (double p : partial) total += p;
    if (total <= 0.0) {
      chosen = uniform_index(rng, data.count);
      continue;
    }
    double target = uniform01(rng) * total;
    chosen = data.count - 1;
    for (std::size_t i = 0; i < data.count; ++i) {
      target -= nearest[i];
      if (target < 0.0 && nearest[i] > 0.0) {
        chosen = i;
        break;
      }
    }
    while (nearest[chosen] <= 0.0 && chosen > 0) --chosen;
  }
  return cb;
}

KmeansResult lloyd(const VectorDataset& data, Codebook codebook, std::size_t max_iters) {
  KmeansResult result;
  const std::size_t k = codebook.k;
  const std::size_t d = data.dim;
  std::vector<std::uint32_t> previous;
  for (std::size_t iter = 0;; ++iter) {
    Assignment a = assign_rows(codebook, data);
    result.distortion.push_back(a.total);
    const bool unchanged = !previous.empty() && previous == a.labels;
    result.iterations = iter;
    if (unchanged || iter == max_iters) {
      result.converged = unchanged;
      result.labels = std::move(a.labels);
      break;
    }

    std::vector<double> sums(k * d, 0.0);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < data.count; ++i) {
      const std::uint32_t c = a.labels[i];
      ++counts[c];
      auto r = data.row(i);
      double* s = sums.data() + std::size_t{c} * d;
      for (std::size_t j = 0; j < d; ++j) s[j] += r[j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      auto dst = codebook.centroid(c);
      for (std::size_t j = 0; j < d; ++j) {
        dst[j] = static_cast<float>(sums[c * d + j] / static_cast<double>(counts[c]));
      }
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      const auto far = static_cast<std::size_t>(
          std::max_element(a.dist.begin(), a.dist.end()) - a.dist.begin());
      std::copy_n(data.data.data() + far * d, d, codebook.centroid(c).begin());
      a.dist[far] = -1.0;
    }
    previous = std::move(a.labels);
  }
  result.codebook = std::move(codebook);
  return result;
}

}  // namespace

std::pair<std::uint32_t, double> assign_with_distance(const Codebook& codebook, FloatSpan v) {
  std::uint32_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  const float* c = codebook.centroids.data();
  for (std::size_t i = 0; i < codebook.k; ++i, c += codebook.dim) {
    const double d = squared_l2_unchecked(v.data(), c, codebook.dim);
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::uint32_t>(i);
    }
  }
  return {best, best_d};
}

std::uint32_t assign(const Codebook& codebook, FloatSpan v) {
  require_same_dim(v.size(), codebook.dim, "assign");
  require(codebook.k > 0, "assign: empty codebook");
  return assign_with_distance(codebook, v).first;
}

std::vector<std::uint32_t> assign_all(const Codebook& codebook, const VectorDataset& data) {
  require_same_dim(data.dim, codebook.dim, "assign_all");
  return assign_rows(codebook, data).labels;
}

double distortion(const Codebook& codebook, const VectorDataset& data) {
  require_same_dim(data.dim, codebook.dim, "distortion");
  return assign_rows(codebook, data).total;
}

KmeansResult kmeans_fit(const VectorDataset& data, std::size_t k, const KmeansParams& params) {
  require(k >= 1, "kmeans_fit: k must be positive");
  if (data.count < k) {
    throw ParameterError("kmeans_fit: " + std::to_string(data.count) + " points for k=" +
                         std::to_string(k));
  }
  Rng rng(params.seed);
  return lloyd(data, kmeanspp_seed(data, k, rng), params.max_iters);
}

KmeansResult kmeans_refine(const VectorDataset& data, Codebook init, std::size_t max_iters) {
  require_same_dim(data.dim, init.dim, "kmeans_refine");
  return lloyd(data, std::move(init), max_iters);
}

VectorDataset residuals(const Codebook& first, const VectorDataset& data,
                        std::span<const std::uint32_t> labels) {
  require_same_dim(labels.size(), data.count, "residuals labels");
  VectorDataset out(data.dim, data.count);
  for (std::size_t i = 0; i < data.count; ++i) {
    auto v = data.row(i);
    auto u = first.centroid(labels[i]);
    auto dst = out.row(i);
    for (std::size_t j = 0; j < data.dim; ++j) dst[j] = v[j] - u[j];
  }
  return out;
}

RvqCodebooks rvq_fit(const VectorDataset& data, std::size_t M, std::size_t N, const KmeansParams& params) {
  auto first = kmeans_fit(data, M, {params.max_iters, derive_seed(params.seed, "rvq.first")});
  const auto res = residuals(first.codebook, data, first.labels);
  auto second = kmeans_fit(res, N, {params.max_iters, derive_seed(params.seed, "rvq.residual")});
  return {std::move(first.codebook), std::move(second.codebook)};
}

CellPair rvq_assign2(const Codebook& first, const Codebook& residual, FloatSpan v) {
  require_same_dim(v.size(), first.dim, "rvq_assign2");
  require_same_dim(residual.dim, first.dim, "rvq_assign2 residual");
  const auto m = assign(first, v);
  std::vector<float> r(v.size());
  auto u = first.centroid(m);
  for (std::size_t j = 0; j < v.size(); ++j) r[j] = v[j] - u[j];
  return {m, assign(residual, r)};
}

// ---------------------------------------------------------------------------

std::uint64_t OpqResidualCodec::code_count() const {
  std::uint64_t n = 1;
  for (std::size_t s = 0; s < alpha; ++s) {
    if (n > std::numeric_limits<std::uint64_t>::max() / beta) return std::numeric_limits<std::uint64_t>::max();
    n *= beta;
  }
  return n;
}

std::uint64_t OpqResidualCodec::pack(std::span<const std::uint32_t> digits) const {
  require_same_dim(digits.size(), alpha, "opq pack");
  std::uint64_t code = 0;
  for (auto d : digits) {
    require(d < beta, "opq pack: digit out of range");
    code = code * beta + d;
  }
  return code;
}

std::vector<std::uint32_t> OpqResidualCodec::unpack(std::uint64_t code) const {
  std::vector<std::uint32_t> digits(alpha);
  for (std::size_t s = alpha; s-- > 0;) {
    digits[s] = static_cast<std::uint32_t>(code % beta);
    code /= beta;
  }
  require(code == 0, "opq unpack: code out of range");
  return digits;
}

std::vector<std::uint32_t> OpqResidualCodec::encode_rotated(FloatSpan rotated) const {
  require_same_dim(rotated.size(), dim, "opq encode");
  std::vector<std::uint32_t> digits(alpha);
  const std::size_t sd = sub_dim();
  for (std::size_t s = 0; s < alpha; ++s) {
    digits[s] = assign_with_distance(sub_codebooks[s], rotated.subspan(s * sd, sd)).first;
  }
  return digits;
}

std::vector<float> OpqResidualCodec::codeword(std::uint64_t code) const {
  const auto digits = unpack(code);
  std::vector<float> out(dim);
  const std::size_t sd = sub_dim();
  for (std::size_t s = 0; s < alpha; ++s) {
    auto c = sub_codebooks[s].centroid(digits[s]);
    std::copy(c.begin(), c.end(), out.begin() + static_cast<std::ptrdiff_t>(s * sd));
  }
  return out;
}

namespace {

VectorDataset rotate_rows(const DenseMatrix& rotation, const VectorDataset& x) {
  VectorDataset out(x.dim, x.count);
  const std::size_t d = x.dim;
  for (std::size_t i = 0; i < x.count; ++i) {
    auto src = x.row(i);
    auto dst = out.row(i);
    for (std::size_t r = 0; r < d; ++r) {
      const double* row = rotation.values.data() + r * d;
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) acc += row[c] * src[c];
      dst[r] = static_cast<float>(acc);
    }
  }
  return out;
}

VectorDataset subspace(const VectorDataset& x, std::size_t begin, std::size_t width) {
  VectorDataset out(width, x.count);
  for (std::size_t i = 0; i < x.count; ++i) {
    std::copy_n(x.data.data() + i * x.dim + begin, width, out.data.data() + i * width);
  }
  return out;
}

}  // namespace

OpqFitResult opq_fit(const VectorDataset& residuals_in, const OpqFitParams& params,
                     const OpqObserver& observer) {
  const std::size_t d = residuals_in.dim;
  require(params.alpha >= 1 && params.beta >= 1, "opq_fit: alpha and beta must be positive");
  if (d % params.alpha != 0) {
    throw ParameterError("opq_fit: dim " + std::to_string(d) + " not divisible by alpha " +
                         std::to_string(params.alpha));
  }
  require(residuals_in.count >= params.beta, "opq_fit: fewer residuals than beta");
  require(params.alpha * std::log2(static_cast<double>(params.beta)) < 63.0,
          "opq_fit: beta^alpha does not fit in 63 bits");
  const std::size_t sd = d / params.alpha;

  OpqFitResult result;
  auto& codec = result.codec;
  codec.dim = d;
  codec.alpha = params.alpha;
  codec.beta = params.beta;

  DenseMatrix rotation = DenseMatrix::identity(d);
  std::vector<std::vector<std::uint32_t>> labels(params.alpha);
  codec.sub_codebooks.resize(params.alpha);
  double total = 0.0;
  for (std::size_t s = 0; s < params.alpha; ++s) {
    auto fit = kmeans_fit(subspace(residuals_in, s * sd, sd), params.beta,
                          {params.kmeans_iters, derive_seed(params.seed, "opq.sub" + std::to_string(s))});
    total += fit.distortion.back();
    codec.sub_codebooks[s] = std::move(fit.codebook);
    labels[s] = std::move(fit.labels);
  }
  result.distortion.push_back(total);
  if (observer) observer(0, rotation, total);

  DenseMatrix x(residuals_in.count, d);
  for (std::size_t i = 0; i < residuals_in.data.size(); ++i) x.values[i] = residuals_in.data[i];

  for (std::size_t iter = 1; iter <= params.iters; ++iter) {
    DenseMatrix y(residuals_in.count, d);
    for (std::size_t i = 0; i < residuals_in.count; ++i) {
      for (std::size_t s = 0; s < params.alpha; ++s) {
        auto c = codec.sub_codebooks[s].centroid(labels[s][i]);
        for (std::size_t j = 0; j < sd; ++j) y(i, s * sd + j) = c[j];
      }
    }
    rotation = procrustes(x, y).rotation;
    const VectorDataset rotated = rotate_rows(rotation, residuals_in);
    total = 0.0;
    for (std::size_t s = 0; s < params.alpha; ++s) {
      auto fit = kmeans_refine(subspace(rotated, s * sd, sd), std::move(codec.sub_codebooks[s]),
                               params.refine_iters);
      total += fit.distortion.back();
      codec.sub_codebooks[s] = std::move(fit.codebook);
      labels[s] = std::move(fit.labels);
    }
    result.distortion.push_back(total);
    if (observer) observer(iter, rotation, total);
  }
  codec.rotation = RotationMatrix::from(rotation);
  return result;
}

CellPair opq_assign2(const Codebook& first, const OpqResidualCodec& codec, FloatSpan v) {
  require_same_dim(v.size(), first.dim, "opq_assign2");
  require_same_dim(codec.dim, first.dim, "opq_assign2 codec");
  const auto m = assign(first, v);
  std::vector<float> r(v.size()), rotated(v.size());
  auto u = first.centroid(m);
  for (std::size_t j = 0; j < v.size(); ++j) r[j] = v[j] - u[j];
  codec.rotation.apply(r, rotated);
  return {m, codec.pack(codec.encode_rotated(rotated))};
}

// ---------------------------------------------------------------------------

void write_codebook(binio::Writer& out, const Codebook& codebook) {
  out.magic("CBK1");
  out.put(static_cast<std::int32_t>(codebook.k));
  out.put(static_cast<std::int32_t>(codebook.dim));
  out.put_array(std::span<const float>(codebook.centroids));
}

Codebook read_codebook(binio::Reader& in) {
  in.expect_magic("CBK1");
  const auto k = in.get_count("k");
  const auto dim = in.get_count("dim");
  if (k == 0 || dim == 0) in.fail("empty codebook");
  Codebook cb(k, dim);
  in.get_array(std::span<float>(cb.centroids));
  for (float v : cb.centroids) {
    if (!std::isfinite(v)) in.fail("non-finite centroid");
  }
  return cb;
}

void write_opq(binio::Writer& out, const OpqResidualCodec& codec) {
  out.magic("OPQ1");
  out.put(static_cast<std::int32_t>(codec.dim));
  out.put(static_cast<std::int32_t>(codec.alpha));
  out.put(static_cast<std::int32_t>(codec.beta));
  out.put_array(std::span<const float>(codec.rotation.values));
  for (const auto& cb : codec.sub_codebooks) out.put_array(std::span<const float>(cb.centroids));
}

OpqResidualCodec read_opq(binio::Reader& in) {
  in.expect_magic("OPQ1");
  OpqResidualCodec codec;
  codec.dim = in.get_count("dim");
  codec.alpha = in.get_count("alpha");
  codec.beta = in.get_count("beta");
  if (codec.dim == 0 || codec.alpha == 0 || codec.beta == 0 || codec.dim % codec.alpha != 0) {
    in.fail("invalid OPQ shape");
  }
  codec.rotation.dim = codec.dim;
  codec.rotation.values.resize(codec.dim * codec.dim);
  in.get_array(std::span<float>(codec.rotation.values));
  for (std::size_t s = 0; s < codec.alpha; ++s) {
    Codebook cb(codec.beta, codec.sub_dim());
    in.get_array(std::span<float>(cb.centroids));
    codec.sub_codebooks.push_back(std::move(cb));
  }
  return codec;
}

void save_codebook(const Codebook& codebook, const std::filesystem::path& path) {
  binio::Writer out;
  write_codebook(out, codebook);
  out.save(path);
}

Codebook load_codebook(const std::filesystem::path& path) {
  binio::Reader in(path);
  auto cb = read_codebook(in);
  if (!in.at_end()) in.fail("trailing bytes");
  return cb;
}

}  // namespace pbr

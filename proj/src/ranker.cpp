#include "pbr/ranker.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "pbr/linalg.hpp"

namespace pbr {

std::vector<double> nn_weights(std::size_t K, std::size_t top_count, double top_weight) {
  require(K > 0, "nn_weights: K must be positive");
  require(top_weight > 0.0, "nn_weights: weight must be positive");
  std::vector<double> w(K, 1.0);
  std::fill_n(w.begin(), std::min(K, top_count), top_weight);
  return w;
}

std::vector<float> qcs_feature(FloatSpan q, const Codebook& first) {
  require(first.k > 0, "qcs_feature: empty codebook");
  require_same_dim(q.size(), first.dim, "qcs_feature");
  std::vector<double> d(first.k);
  double mx = 0.0;
  for (std::size_t m = 0; m < first.k; ++m) {
    d[m] = std::sqrt(squared_l2_unchecked(q.data(), first.centroids.data() + m * first.dim, first.dim));
    mx = std::max(mx, d[m]);
  }
  std::vector<float> a(first.k, 0.0f);
  if (mx == 0.0) return a;
  for (std::size_t m = 0; m < first.k; ++m) a[m] = static_cast<float>((mx - d[m]) / mx);
  return a;
}

std::size_t feature_width(FeatureMode mode, std::size_t dim, std::size_t M) {
  switch (mode) {
    case FeatureMode::kRaw: return dim;
    case FeatureMode::kQcs: return M;
    case FeatureMode::kRawQcs: return dim + M;
    case FeatureMode::kHierarchical: return 2 * dim;
  }
  return 0;
}

std::vector<float> first_feature(FeatureMode mode, FloatSpan q, const Codebook& first) {
  require_same_dim(q.size(), first.dim, "first_feature");
  switch (mode) {
    case FeatureMode::kRaw: return {q.begin(), q.end()};
    case FeatureMode::kQcs: return qcs_feature(q, first);
    case FeatureMode::kRawQcs: {
      std::vector<float> x(q.begin(), q.end());
      const auto a = qcs_feature(q, first);
      x.insert(x.end(), a.begin(), a.end());
      return x;
    }
    case FeatureMode::kHierarchical: break;
  }
  throw ConfigError("first_feature: the hierarchical mode is for second-level networks");
}

std::vector<float> h_feature(FloatSpan q, const Codebook& first, std::uint32_t m) {
  require_same_dim(q.size(), first.dim, "h_feature");
  if (m >= first.k) throw ParameterError("h_feature: cluster " + std::to_string(m) + " out of range");
  const std::size_t dim = first.dim;
  std::vector<float> x(2 * dim);
  const float* u = first.centroids.data() + m * dim;
  for (std::size_t j = 0; j < dim; ++j) {
    x[j] = u[j];
    x[dim + j] = q[j] - u[j];
  }
  return x;
}

namespace {

void check_truth(std::span<const std::uint32_t> truth, std::span<const double> weights,
                 const TwoLevelIndex& index) {
  if (truth.empty()) throw ParameterError("targets: empty ground truth");
  require(weights.size() >= truth.size(), "targets: fewer weights than neighbors");
  for (auto id : truth) {
    if (id >= index.size()) throw ParameterError("targets: identity " + std::to_string(id) + " not indexed");
  }
}

// y = s / (s + size), normalized to sum one; cells without neighbors stay 0.
void damp_and_normalize(std::vector<double>& mass, const std::vector<double>& sizes) {
  double total = 0.0;
  for (std::size_t i = 0; i < mass.size(); ++i) {
    if (mass[i] > 0.0) {
      mass[i] = mass[i] / (mass[i] + sizes[i]);
      total += mass[i];
    }
  }
  if (total > 0.0) {
    for (auto& v : mass) v /= total;
  }
}

}  // namespace

std::vector<double> first_targets(std::span<const std::uint32_t> truth, std::span<const double> weights,
                                  const TwoLevelIndex& index) {
  check_truth(truth, weights, index);
  std::vector<double> mass(index.M(), 0.0);
  for (std::size_t k = 0; k < truth.size(); ++k) mass[index.first_label(truth[k])] += weights[k];
  std::vector<double> sizes(index.M());
  for (std::uint32_t m = 0; m < index.M(); ++m) sizes[m] = static_cast<double>(index.cluster_size(m));
  damp_and_normalize(mass, sizes);
  return mass;
}

std::optional<std::vector<double>> second_targets(std::span<const std::uint32_t> truth,
                                                  std::span<const double> weights,
                                                  const TwoLevelIndex& index, std::uint32_t m) {
  check_truth(truth, weights, index);
  if (m >= index.M()) throw ParameterError("second_targets: cluster " + std::to_string(m) + " out of range");
  const std::uint64_t N = index.N();
  if (N > kMaxSecondOutputs) {
    throw ConfigError("second_targets: " + std::to_string(N) + " second-level codes exceed the supported " +
                      std::to_string(kMaxSecondOutputs));
  }
  std::vector<double> mass(N, 0.0);
  bool any = false;
  for (std::size_t k = 0; k < truth.size(); ++k) {
    if (index.first_label(truth[k]) != m) continue;
    mass[index.second_label(truth[k])] += weights[k];
    any = true;
  }
  if (!any) return std::nullopt;
  std::vector<double> sizes(N, 0.0);
  for (auto n : index.subclusters(m)) sizes[n] = static_cast<double>(index.sub_size(m, n));
  damp_and_normalize(mass, sizes);
  return mass;
}

TrainingSet first_training_set(FeatureMode mode, const VectorDataset& queries, const GroundTruth& truth,
                               std::span<const double> weights, const TwoLevelIndex& index) {
  require_same_dim(queries.count, truth.query_count, "first_training_set queries vs truth");
  require_same_dim(queries.dim, index.dim(), "first_training_set");
  TrainingSet set;
  set.input_width = feature_width(mode, index.dim(), index.M());
  set.output_width = index.M();
  set.inputs.reserve(queries.count * set.input_width);
  set.targets.reserve(queries.count * set.output_width);
  std::vector<float> y(index.M());
  for (std::size_t t = 0; t < queries.count; ++t) {
    const auto x = first_feature(mode, queries.row(t), index.first());
    const auto target = first_targets(truth.row(t), weights, index);
    std::transform(target.begin(), target.end(), y.begin(), [](double v) { return static_cast<float>(v); });
    set.append(x, y);
  }
  return set;
}

TrainingSet second_training_set(const VectorDataset& queries, const GroundTruth& truth,
                                std::span<const double> weights, const TwoLevelIndex& index,
                                std::size_t cells_per_query) {
  require_same_dim(queries.count, truth.query_count, "second_training_set queries vs truth");
  require_same_dim(queries.dim, index.dim(), "second_training_set");
  require(cells_per_query > 0, "second_training_set: cells_per_query must be positive");
  if (index.N() > kMaxSecondOutputs) {
    throw ConfigError("second_training_set: " + std::to_string(index.N()) +
                      " second-level codes exceed the supported " + std::to_string(kMaxSecondOutputs));
  }
  TrainingSet set;
  set.input_width = 2 * index.dim();
  set.output_width = static_cast<std::size_t>(index.N());
  std::vector<float> y(set.output_width);
  std::vector<std::uint32_t> order(index.M());
  for (std::size_t t = 0; t < queries.count; ++t) {
    const auto row = truth.row(t);
    const auto level1 = first_targets(row, weights, index);
    std::iota(order.begin(), order.end(), 0u);
    const std::size_t take = std::min<std::size_t>(cells_per_query, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                      [&](std::uint32_t a, std::uint32_t b) {
                        return level1[a] != level1[b] ? level1[a] > level1[b] : a < b;
                      });
    for (std::size_t i = 0; i < take; ++i) {
      const std::uint32_t m = order[i];
      if (level1[m] <= 0.0) break;
      const auto target = second_targets(row, weights, index, m);
      if (!target) continue;
      std::transform(target->begin(), target->end(), y.begin(), [](double v) { return static_cast<float>(v); });
      set.append(h_feature(queries.row(t), index.first(), m), y);
    }
  }
  return set;
}

std::vector<float> predict_first(const Mlp& f, FloatSpan q, const Codebook& first) {
  if (f.mode() == FeatureMode::kHierarchical) {
    throw ConfigError("predict_first: model was trained as a second-level network");
  }
  const std::size_t width = feature_width(f.mode(), first.dim, first.k);
  if (f.input_width() != width) {
    throw ConfigError(std::string("predict_first: ") + to_string(f.mode()) + " model expects width " +
                      std::to_string(f.input_width()) + " but the index gives " + std::to_string(width));
  }
  if (f.output_width() != first.k) {
    throw ConfigError("predict_first: model has " + std::to_string(f.output_width()) + " outputs for " +
                      std::to_string(first.k) + " clusters");
  }
  const auto x = first_feature(f.mode(), q, first);
  return f.forward(x);
}

Mlp::Matrix predict_second_batch(const Mlp& h, FloatSpan q, const Codebook& first,
                                 std::span<const std::uint32_t> cells) {
  if (h.mode() != FeatureMode::kHierarchical || h.input_width() != 2 * first.dim) {
    throw ConfigError("predict_second: model is not a second-level network for dim " + std::to_string(first.dim));
  }
  Mlp::Matrix x(static_cast<Eigen::Index>(2 * first.dim), static_cast<Eigen::Index>(cells.size()));
  for (std::size_t j = 0; j < cells.size(); ++j) {
    const auto col = h_feature(q, first, cells[j]);
    std::copy(col.begin(), col.end(), x.col(static_cast<Eigen::Index>(j)).data());
  }
  return h.forward_batch(x);
}

std::vector<float> predict_second(const Mlp& h, FloatSpan q, const Codebook& first, std::uint32_t m) {
  const std::uint32_t cells[] = {m};
  const auto p = predict_second_batch(h, q, first, cells);
  return {p.data(), p.data() + p.size()};
}

}  // namespace pbr

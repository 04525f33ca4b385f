#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pbr/allocator.hpp"
#include "pbr/index.hpp"
#include "pbr/mlp.hpp"
#include "pbr/pqcodec.hpp"

namespace pbr {

enum class Scheme { kDistQcd, kProbRaw, kProbQcs, kProbRawQcs, kIdeal };

const char* to_string(Scheme scheme);
Scheme parse_scheme(const std::string& text);
bool is_probabilistic(Scheme scheme);
/// Feature the first-level network of a probability scheme consumes.
FeatureMode scheme_feature(Scheme scheme);

struct SearchConfig {
  Scheme scheme = Scheme::kDistQcd;
  Gamma gamma = Gamma::kNone;
  bool hierarchical = false;
  std::size_t R = 1;
  std::size_t T = 0;    // second-level budget; 0 visits every subcluster of the R clusters
  std::size_t k = 100;
  std::size_t cap = 0;  // candidate cap; 0 = unlimited
};

struct Hit {
  std::uint32_t id = 0;
  double distance = 0.0;  // squared asymmetric distance
  bool operator==(const Hit&) const = default;
};

struct SearchStats {
  std::size_t clusters_visited = 0;
  std::size_t subclusters_visited = 0;
  std::size_t candidates_scanned = 0;
  double wall_ms = 0.0;
  bool gamma_fallback = false;  // quantity estimation hit a degenerate input
};

struct SearchResult {
  std::vector<Hit> hits;                 // ascending distance, ties to the lower id
  std::vector<std::uint32_t> candidates;  // visiting order
  SearchStats stats;
};

/// Everything a query needs; models may be null when the scheme does not use them.
struct SearchArtifacts {
  const TwoLevelIndex* index = nullptr;
  const PqCodec* pq = nullptr;
  const PqCodeStore* codes = nullptr;
  const Mlp* f = nullptr;
  const Mlp* h = nullptr;

  /// Throws ConfigError if the pieces disagree with each other or with cfg.
  void check(const SearchConfig& cfg) const;
};

/// Weighted ground truth of one query, for the Ideal scheme.
struct IdealTruth {
  std::span<const std::uint32_t> ids;
  std::span<const double> weights;
};

struct RankedClusters {
  std::vector<std::uint32_t> ids;
  std::vector<double> probabilities;  // aligned with ids; empty for dist_qcd
};

/// The R best first-level clusters under the configured scheme, ties to the lower id.
RankedClusters rank_first(FloatSpan q, const SearchConfig& cfg, const SearchArtifacts& art,
                          const IdealTruth* truth = nullptr);

/// Ranked clusters plus, for each, its non-empty subclusters in visiting order.
struct QueryPlan {
  RankedClusters first;
  std::vector<std::vector<std::uint64_t>> second;
};

QueryPlan plan_query(FloatSpan q_index, const SearchConfig& cfg, const SearchArtifacts& art,
                     const IdealTruth* truth = nullptr);

/// Runs quotas, candidate gathering and reranking on the first cfg.R clusters of a plan.
SearchResult execute_plan(const QueryPlan& plan, const AdcTable& table, const SearchConfig& cfg,
                          const SearchArtifacts& art);

SearchResult search(FloatSpan q_index, FloatSpan q_original, const SearchConfig& cfg,
                    const SearchArtifacts& art, const IdealTruth* truth = nullptr);

/// Exact k nearest references by squared distance, ties to the lower id.
std::vector<Hit> brute_force(FloatSpan q, const VectorDataset& reference, std::size_t k);

}  // namespace pbr

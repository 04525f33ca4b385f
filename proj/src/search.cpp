#include "pbr/search.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>

#include "pbr/linalg.hpp"
#include "pbr/ranker.hpp"

namespace pbr {

const char* to_string(Scheme scheme) {
  switch (scheme) {
    case Scheme::kDistQcd: return "dist_qcd";
    case Scheme::kProbRaw: return "prob_raw";
    case Scheme::kProbQcs: return "prob_qcs";
    case Scheme::kProbRawQcs: return "prob_raw_qcs";
    case Scheme::kIdeal: return "ideal";
  }
  return "?";
}

Scheme parse_scheme(const std::string& text) {
  if (text == "dist_qcd") return Scheme::kDistQcd;
  if (text == "prob_raw") return Scheme::kProbRaw;
  if (text == "prob_qcs") return Scheme::kProbQcs;
  if (text == "prob_raw_qcs") return Scheme::kProbRawQcs;
  if (text == "ideal") return Scheme::kIdeal;
  throw ConfigError("unknown scheme \"" + text + "\" (expected dist_qcd, prob_raw, prob_qcs, prob_raw_qcs, ideal)");
}

bool is_probabilistic(Scheme scheme) {
  return scheme == Scheme::kProbRaw || scheme == Scheme::kProbQcs || scheme == Scheme::kProbRawQcs;
}

FeatureMode scheme_feature(Scheme scheme) {
  switch (scheme) {
    case Scheme::kProbRaw: return FeatureMode::kRaw;
    case Scheme::kProbQcs: return FeatureMode::kQcs;
    case Scheme::kProbRawQcs: return FeatureMode::kRawQcs;
    default: break;
  }
  throw ConfigError(std::string("scheme ") + to_string(scheme) + " has no first-level network");
}

void SearchArtifacts::check(const SearchConfig& cfg) const {
  if (!index) throw ConfigError("search: no index");
  if (!pq || !codes) throw ConfigError("search: no PQ codec or codes");
  if (codes->count != index->size()) {
    throw ConfigError("search: " + std::to_string(codes->count) + " PQ codes for an index of " +
                      std::to_string(index->size()) + " points");
  }
  if (codes->num_segments != pq->num_segments) throw ConfigError("search: PQ codes and codec disagree on segments");
  if (cfg.R == 0 || cfg.R > index->M()) {
    throw ConfigError("search: R=" + std::to_string(cfg.R) + " outside [1, " + std::to_string(index->M()) + "]");
  }
  if (cfg.k == 0) throw ConfigError("search: k must be positive");
  if (is_probabilistic(cfg.scheme)) {
    if (!f) throw ConfigError(std::string("search: scheme ") + to_string(cfg.scheme) + " needs a first-level model");
    if (f->mode() != scheme_feature(cfg.scheme)) {
      throw ConfigError(std::string("search: scheme ") + to_string(cfg.scheme) + " given a " + to_string(f->mode()) +
                        " model");
    }
  } else if (cfg.gamma != Gamma::kNone && cfg.scheme == Scheme::kDistQcd) {
    throw ConfigError("search: quantity estimation needs probabilities; dist_qcd takes gamma=none");
  }
  if (cfg.hierarchical && cfg.scheme != Scheme::kIdeal && !h) {
    throw ConfigError("search: hierarchical ranking needs a second-level model");
  }
}

namespace {

// Indices of the R largest scores, descending, ties to the lower index.
std::vector<std::uint32_t> top_by_score(std::span<const double> score, std::size_t R) {
  std::vector<std::uint32_t> order(score.size());
  std::iota(order.begin(), order.end(), 0u);
  R = std::min(R, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(R), order.end(),
                    [&](std::uint32_t a, std::uint32_t b) { return score[a] != score[b] ? score[a] > score[b] : a < b; });
  order.resize(R);
  return order;
}

void require_truth(const IdealTruth* truth) {
  if (!truth || truth->ids.empty()) throw ConfigError("search: the ideal scheme needs ground truth");
  if (truth->weights.size() < truth->ids.size()) throw ConfigError("search: ideal truth has fewer weights than ids");
}

}  // namespace

RankedClusters rank_first(FloatSpan q, const SearchConfig& cfg, const SearchArtifacts& art,
                          const IdealTruth* truth) {
  const TwoLevelIndex& index = *art.index;
  require_same_dim(q.size(), index.dim(), "rank_first");
  RankedClusters out;
  const std::size_t M = index.M();
  std::vector<double> score(M);
  switch (cfg.scheme) {
    case Scheme::kDistQcd: {
      const Codebook& first = index.first();
      for (std::size_t m = 0; m < M; ++m) {
        score[m] = -squared_l2_unchecked(q.data(), first.centroids.data() + m * first.dim, first.dim);
      }
      out.ids = top_by_score(score, cfg.R);
      return out;
    }
    case Scheme::kIdeal: {
      require_truth(truth);
      std::fill(score.begin(), score.end(), 0.0);
      double total = 0.0;
      for (std::size_t k = 0; k < truth->ids.size(); ++k) {
        score[index.first_label(truth->ids[k])] += truth->weights[k];
        total += truth->weights[k];
      }
      for (auto& s : score) s /= total;
      break;
    }
    default: {
      if (!art.f) throw ConfigError("rank_first: no first-level model");
      const auto p = predict_first(*art.f, q, index.first());
      std::copy(p.begin(), p.end(), score.begin());
      break;
    }
  }
  out.ids = top_by_score(score, cfg.R);
  out.probabilities.reserve(out.ids.size());
  for (auto m : out.ids) out.probabilities.push_back(score[m]);
  return out;
}

QueryPlan plan_query(FloatSpan q_index, const SearchConfig& cfg, const SearchArtifacts& art,
                     const IdealTruth* truth) {
  const TwoLevelIndex& index = *art.index;
  QueryPlan plan;
  plan.first = rank_first(q_index, cfg, art, truth);
  const auto& cells = plan.first.ids;
  plan.second.resize(cells.size());

  if (cfg.scheme == Scheme::kIdeal) {
    // Subclusters by weighted neighbor mass, then by distance.
    for (std::size_t r = 0; r < cells.size(); ++r) {
      const std::uint32_t m = cells[r];
      const auto codes = index.subclusters(m);
      const auto dist = index.second_distances(q_index, m);
      std::vector<double> mass(codes.size(), 0.0);
      for (std::size_t k = 0; k < truth->ids.size(); ++k) {
        const std::uint32_t id = truth->ids[k];
        if (index.first_label(id) != m) continue;
        const auto pos = std::lower_bound(codes.begin(), codes.end(), index.second_label(id)) - codes.begin();
        mass[static_cast<std::size_t>(pos)] += truth->weights[k];
      }
      std::vector<std::size_t> order(codes.size());
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (mass[a] != mass[b]) return mass[a] > mass[b];
        if (dist[a] != dist[b]) return dist[a] < dist[b];
        return a < b;
      });
      for (auto i : order) plan.second[r].push_back(codes[i]);
    }
    return plan;
  }

  if (cfg.hierarchical) {
    const auto p = predict_second_batch(*art.h, q_index, index.first(), cells);
    if (static_cast<std::uint64_t>(p.rows()) != index.N()) {
      throw ConfigError("search: second-level model has " + std::to_string(p.rows()) + " outputs for " +
                        std::to_string(index.N()) + " subclusters");
    }
    for (std::size_t r = 0; r < cells.size(); ++r) {
      const auto codes = index.subclusters(cells[r]);
      std::vector<std::uint64_t> order(codes.begin(), codes.end());
      const auto col = p.col(static_cast<Eigen::Index>(r));
      std::stable_sort(order.begin(), order.end(), [&](std::uint64_t a, std::uint64_t b) {
        return col(static_cast<Eigen::Index>(a)) > col(static_cast<Eigen::Index>(b));
      });
      plan.second[r] = std::move(order);
    }
    return plan;
  }

  for (std::size_t r = 0; r < cells.size(); ++r) {
    const auto ranked = index.top_s_second_by_distance(q_index, cells[r], index.subclusters(cells[r]).size());
    plan.second[r].reserve(ranked.size());
    for (const auto& [code, d] : ranked) plan.second[r].push_back(code);
  }
  return plan;
}

SearchResult execute_plan(const QueryPlan& plan, const AdcTable& table, const SearchConfig& cfg,
                          const SearchArtifacts& art) {
  const TwoLevelIndex& index = *art.index;
  require(cfg.R <= plan.first.ids.size(), "execute_plan: plan ranks fewer clusters than R");
  const std::size_t R = cfg.R;
  const std::uint64_t N = index.N();
  const std::size_t N_cap = static_cast<std::size_t>(std::min<std::uint64_t>(N, SIZE_MAX));

  SearchResult result;
  std::vector<std::size_t> quota;
  if (cfg.T == 0) {
    quota.assign(R, N_cap);
  } else if (cfg.gamma == Gamma::kNone || plan.first.probabilities.empty()) {
    const std::vector<double> flat(R, 1.0);
    quota = allocate(flat, Gamma::kNone, cfg.T, N_cap);
  } else {
    const std::span<const double> p(plan.first.probabilities.data(), R);
    quota = allocate(p, cfg.gamma, cfg.T, N_cap, &result.stats.gamma_fallback);
  }

  const std::size_t cap = cfg.cap == 0 ? SIZE_MAX : cfg.cap;
  auto& cand = result.candidates;
  bool full = false;
  for (std::size_t r = 0; r < R && !full; ++r) {
    const std::uint32_t m = plan.first.ids[r];
    ++result.stats.clusters_visited;
    const auto& order = plan.second[r];
    const std::size_t S = std::min(quota[r], order.size());
    for (std::size_t s = 0; s < S && !full; ++s) {
      ++result.stats.subclusters_visited;
      for (auto id : index.list(m, order[s])) {
        if (cand.size() >= cap) {
          full = true;
          break;
        }
        cand.push_back(id);
      }
    }
  }
  result.stats.candidates_scanned = cand.size();

  auto& hits = result.hits;
  hits.reserve(cand.size());
  for (auto id : cand) {
    hits.push_back({id, adc_distance_unchecked(table, art.codes->codes.data() + std::size_t{id} * table.num_segments)});
  }
  const auto less = [](const Hit& a, const Hit& b) { return a.distance != b.distance ? a.distance < b.distance : a.id < b.id; };
  const std::size_t k = std::min(cfg.k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(k), hits.end(), less);
  hits.resize(k);
  return result;
}

SearchResult search(FloatSpan q_index, FloatSpan q_original, const SearchConfig& cfg, const SearchArtifacts& art,
                    const IdealTruth* truth) {
  const auto start = std::chrono::steady_clock::now();
  art.check(cfg);
  require_same_dim(q_original.size(), art.pq->dim, "search original-space query");
  const QueryPlan plan = plan_query(q_index, cfg, art, truth);
  const AdcTable table = adc_table(*art.pq, q_original);
  SearchResult result = execute_plan(plan, table, cfg, art);
  result.stats.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return result;
}

std::vector<Hit> brute_force(FloatSpan q, const VectorDataset& reference, std::size_t k) {
  require_same_dim(q.size(), reference.dim, "brute_force");
  std::vector<Hit> all(reference.count);
  for (std::size_t i = 0; i < reference.count; ++i) {
    all[i] = {static_cast<std::uint32_t>(i), squared_l2_unchecked(q.data(), reference.data.data() + i * reference.dim, reference.dim)};
  }
  k = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(),
                    [](const Hit& a, const Hit& b) { return a.distance != b.distance ? a.distance < b.distance : a.id < b.id; });
  all.resize(k);
  return all;
}

}  // namespace pbr

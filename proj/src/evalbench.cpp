#include "pbr/evalbench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <tuple>

#include "pbr/linalg.hpp"
#include "pbr/parallel.hpp"

namespace pbr {

double topk_recall(std::span<const std::uint32_t> candidates, std::span<const std::uint32_t> truth_row,
                   std::size_t k) {
  require(k > 0, "topk_recall: k must be positive");
  if (k > truth_row.size()) {
    throw ParameterError("topk_recall: k=" + std::to_string(k) + " exceeds truth depth " +
                         std::to_string(truth_row.size()));
  }
  std::vector<std::uint32_t> sorted(candidates.begin(), candidates.end());
  std::sort(sorted.begin(), sorted.end());
  std::size_t found = 0;
  for (std::size_t i = 0; i < k; ++i) {
    if (std::binary_search(sorted.begin(), sorted.end(), truth_row[i])) ++found;
  }
  return static_cast<double>(found) / static_cast<double>(k);
}

GroundTruth build_ground_truth(const VectorDataset& reference, const VectorDataset& queries, std::size_t k,
                               std::span<const std::uint32_t> exclude) {
  require_same_dim(reference.dim, queries.dim, "build_ground_truth");
  require(k > 0, "build_ground_truth: k must be positive");
  if (!exclude.empty()) require_same_dim(exclude.size(), queries.count, "build_ground_truth exclusions");
  const std::size_t usable = reference.count - (exclude.empty() ? 0 : std::min<std::size_t>(1, reference.count));
  if (k > usable) {
    throw ParameterError("build_ground_truth: k=" + std::to_string(k) + " exceeds the " + std::to_string(usable) +
                         " available references");
  }
  GroundTruth truth;
  truth.query_count = queries.count;
  truth.k = k;
  truth.ids.resize(queries.count * k);
  const std::size_t dim = reference.dim;
  parallel_chunks(queries.count, 8, [&](std::size_t, std::size_t begin, std::size_t end) {
    std::vector<std::pair<double, std::uint32_t>> all(reference.count);
    for (std::size_t q = begin; q < end; ++q) {
      const float* qv = queries.data.data() + q * dim;
      std::size_t n = 0;
      const std::uint32_t skip = exclude.empty() ? std::numeric_limits<std::uint32_t>::max() : exclude[q];
      for (std::size_t i = 0; i < reference.count; ++i) {
        if (i == skip) continue;
        all[n++] = {squared_l2_unchecked(qv, reference.data.data() + i * dim, dim), static_cast<std::uint32_t>(i)};
      }
      std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k),
                        all.begin() + static_cast<std::ptrdiff_t>(n));
      for (std::size_t j = 0; j < k; ++j) truth.ids[q * k + j] = all[j].second;
    }
  });
  return truth;
}

std::vector<ReportRow> expand_grid(const GridSpec& spec, const BenchInputs& in) {
  require(in.artifacts.index != nullptr, "run_grid: no index");
  const TwoLevelIndex& index = *in.artifacts.index;
  std::vector<ReportRow> rows;
  for (Scheme scheme : spec.schemes) {
    for (Gamma gamma : spec.gammas) {
      if (scheme == Scheme::kDistQcd && gamma != Gamma::kNone) continue;
      for (bool hier : spec.hierarchical) {
        if (hier && (scheme == Scheme::kIdeal || in.artifacts.h == nullptr)) continue;
        for (std::size_t T : spec.T) {
          for (std::size_t cap : spec.caps) {
            for (std::size_t R : spec.R) {
              ReportRow row;
              row.scheme = scheme;
              row.gamma = gamma;
              row.hierarchical = hier;
              row.M = index.M();
              row.N = index.N();
              row.R = R;
              row.T_grid = T;
              row.T = spec.T_per_cluster ? T * R : T;
              row.cap = cap;
              row.seed = in.seed;
              rows.push_back(row);
            }
          }
        }
      }
    }
  }
  return rows;
}

std::vector<ReportRow> run_grid(const GridSpec& spec, const BenchInputs& in) {
  std::vector<ReportRow> rows = expand_grid(spec, in);
  if (rows.empty()) return rows;
  require(in.queries_index && in.queries_original && in.truth, "run_grid: missing queries or ground truth");
  const VectorDataset& qi = *in.queries_index;
  const VectorDataset& qo = *in.queries_original;
  const GroundTruth& truth = *in.truth;
  require_same_dim(qi.count, qo.count, "run_grid query sets");
  require_same_dim(qi.count, truth.query_count, "run_grid queries vs truth");
  const std::size_t Q = qi.count;
  const SearchArtifacts& art = in.artifacts;

  // One plan per (scheme, hier), ranked to the largest R the grid asks for.
  struct PlanKey {
    Scheme scheme;
    bool hier;
    std::size_t R = 0;
    std::string error;
    std::vector<std::size_t> cells;
  };
  std::vector<PlanKey> plans;
  for (std::size_t c = 0; c < rows.size(); ++c) {
    auto it = std::find_if(plans.begin(), plans.end(), [&](const PlanKey& p) {
      return p.scheme == rows[c].scheme && p.hier == rows[c].hierarchical;
    });
    if (it == plans.end()) {
      plans.push_back({rows[c].scheme, rows[c].hierarchical, 0, {}, {}});
      it = plans.end() - 1;
    }
    if (rows[c].R >= 1 && rows[c].R <= art.index->M()) it->R = std::max(it->R, rows[c].R);
    it->cells.push_back(c);
  }
  for (auto& plan : plans) {
    SearchConfig cfg;
    cfg.scheme = plan.scheme;
    cfg.hierarchical = plan.hier;
    cfg.R = std::max<std::size_t>(plan.R, 1);
    try {
      art.check(cfg);
      if (plan.scheme == Scheme::kIdeal && in.ideal_weights.size() < truth.k) {
        throw ConfigError("run_grid: ideal weights shorter than truth depth");
      }
    } catch (const std::exception& e) {
      plan.error = e.what();
    }
  }
  for (auto& row : rows) {
    if (row.R == 0 || row.R > art.index->M()) {
      row.error = "R=" + std::to_string(row.R) + " outside [1, " + std::to_string(art.index->M()) + "]";
    }
  }

  const std::size_t C = rows.size();
  std::vector<double> r1(C * Q, 0.0), r10(C * Q, 0.0), r100(C * Q, 0.0), ms(C * Q, 0.0), cand(C * Q, 0.0);
  std::vector<std::size_t> first_failure(C, Q);
  std::vector<std::string> failure(C);
  std::mutex failure_mutex;
  const auto record_failure = [&](std::size_t c, std::size_t q, const std::string& what) {
    std::lock_guard lock(failure_mutex);
    if (q < first_failure[c]) {
      first_failure[c] = q;
      failure[c] = what;
    }
  };
  using Clock = std::chrono::steady_clock;

  parallel_chunks(Q, 4, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t q = begin; q < end; ++q) {
      const auto trow = truth.row(q);
      const IdealTruth ideal{trow, in.ideal_weights};
      const auto t0 = Clock::now();
      const AdcTable table = adc_table(*art.pq, qo.row(q));
      const double table_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
      for (const auto& key : plans) {
        if (!key.error.empty()) continue;
        SearchConfig cfg;
        cfg.scheme = key.scheme;
        cfg.hierarchical = key.hier;
        cfg.R = std::max<std::size_t>(key.R, 1);
        QueryPlan plan;
        double plan_ms = 0.0;
        try {
          const auto t1 = Clock::now();
          plan = plan_query(qi.row(q), cfg, art, &ideal);
          plan_ms = std::chrono::duration<double, std::milli>(Clock::now() - t1).count();
        } catch (const std::exception& e) {
          for (auto c : key.cells) record_failure(c, q, e.what());
          continue;
        }
        for (auto c : key.cells) {
          const ReportRow& row = rows[c];
          if (!row.error.empty()) continue;
          try {
            SearchConfig cell = cfg;
            cell.gamma = row.gamma;
            cell.R = row.R;
            cell.T = row.T;
            cell.cap = row.cap;
            const auto t2 = Clock::now();
            const SearchResult res = execute_plan(plan, table, cell, art);
            const double exec_ms = std::chrono::duration<double, std::milli>(Clock::now() - t2).count();
            const std::size_t at = c * Q + q;
            r1[at] = topk_recall(res.candidates, trow, 1);
            r10[at] = truth.k >= 10 ? topk_recall(res.candidates, trow, 10) : std::nan("");
            r100[at] = truth.k >= 100 ? topk_recall(res.candidates, trow, 100) : std::nan("");
            cand[at] = static_cast<double>(res.stats.candidates_scanned);
            ms[at] = table_ms + plan_ms + exec_ms;
          } catch (const std::exception& e) {
            record_failure(c, q, e.what());
          }
        }
      }
    }
  });

  for (const auto& key : plans) {
    if (key.error.empty()) continue;
    for (auto c : key.cells)
      if (rows[c].error.empty()) rows[c].error = key.error;
  }
  for (std::size_t c = 0; c < C; ++c) {
    ReportRow& row = rows[c];
    if (row.error.empty() && first_failure[c] < Q) row.error = failure[c];
    if (!row.error.empty()) {
      row.recall1 = row.recall10 = row.recall100 = row.ms_mean = row.cand_mean = std::nan("");
      continue;
    }
    double s1 = 0, s10 = 0, s100 = 0, sms = 0, sc = 0;
    for (std::size_t q = 0; q < Q; ++q) {
      const std::size_t at = c * Q + q;
      s1 += r1[at];
      s10 += r10[at];
      s100 += r100[at];
      sms += ms[at];
      sc += cand[at];
    }
    const double n = Q == 0 ? 1.0 : static_cast<double>(Q);
    row.recall1 = s1 / n;
    row.recall10 = s10 / n;
    row.recall100 = s100 / n;
    row.ms_mean = in.timing ? sms / n : 0.0;
    row.cand_mean = sc / n;
  }
  return rows;
}

std::string report_csv(std::span<const ReportRow> rows) {
  std::string out = kReportHeader;
  out += '\n';
  char buf[512];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%s,%d,%zu,%llu,%zu,%zu,%zu,%.6f,%.6f,%.6f,%.4f,%.2f,%llu\n", to_string(r.scheme),
                  to_string(r.gamma), r.hierarchical ? 1 : 0, r.M, static_cast<unsigned long long>(r.N), r.R, r.T,
                  r.cap, r.recall1, r.recall10, r.recall100, r.ms_mean, r.cand_mean,
                  static_cast<unsigned long long>(r.seed));
    out += buf;
  }
  return out;
}

void write_report(std::span<const ReportRow> rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(path.string() + ": cannot open for writing");
  const std::string text = report_csv(rows);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw FormatError(path.string() + ": write failed");
}

namespace {

std::string describe(const ReportRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s/%s%s R=%zu T=%zu cap=%zu recall1=%.6f", to_string(r.scheme), to_string(r.gamma),
                r.hierarchical ? "/hier" : "", r.R, r.T, r.cap, r.recall1);
  return buf;
}

bool usable(const ReportRow& r) { return r.error.empty() && std::isfinite(r.recall1); }

}  // namespace

AuditCount audit_monotone_in_r(std::span<const ReportRow> rows) {
  using Key = std::tuple<int, int, bool, std::size_t, std::size_t>;
  std::map<Key, std::vector<const ReportRow*>> series;
  for (const auto& r : rows) {
    if (!usable(r)) continue;
    series[{static_cast<int>(r.scheme), static_cast<int>(r.gamma), r.hierarchical, r.T_grid, r.cap}].push_back(&r);
  }
  AuditCount out;
  for (auto& [key, list] : series) {
    std::stable_sort(list.begin(), list.end(), [](const ReportRow* a, const ReportRow* b) { return a->R < b->R; });
    for (std::size_t i = 1; i < list.size(); ++i) {
      ++out.cells;
      if (list[i]->recall1 >= list[i - 1]->recall1) {
        ++out.passed;
      } else {
        out.failures.push_back(describe(*list[i]) + " < " + describe(*list[i - 1]));
      }
    }
  }
  return out;
}

AuditCount audit_ideal_dominance(std::span<const ReportRow> rows) {
  AuditCount out;
  for (const auto& r : rows) {
    if (!usable(r) || r.scheme == Scheme::kIdeal) continue;
    const auto ideal = std::find_if(rows.begin(), rows.end(), [&](const ReportRow& i) {
      return i.scheme == Scheme::kIdeal && !i.hierarchical && i.gamma == r.gamma && i.R == r.R && i.T == r.T &&
             i.cap == r.cap && usable(i);
    });
    if (ideal == rows.end()) continue;
    ++out.cells;
    if (ideal->recall1 >= r.recall1) {
      ++out.passed;
    } else {
      out.failures.push_back(describe(*ideal) + " < " + describe(r));
    }
  }
  return out;
}

AuditCount audit_gamma_gain(std::span<const ReportRow> rows, Scheme scheme, Gamma with, Gamma without,
                            double tolerance) {
  AuditCount out;
  for (const auto& a : rows) {
    if (!usable(a) || a.scheme != scheme || a.gamma != with || a.R < 2) continue;
    const auto b = std::find_if(rows.begin(), rows.end(), [&](const ReportRow& x) {
      return usable(x) && x.scheme == scheme && x.gamma == without && x.hierarchical == a.hierarchical &&
             x.R == a.R && x.T == a.T && x.cap == a.cap;
    });
    if (b == rows.end()) continue;
    ++out.cells;
    if (a.recall1 >= b->recall1 - tolerance) {
      ++out.passed;
    } else {
      out.failures.push_back(describe(a) + " < " + describe(*b));
    }
    if (a.recall1 > b->recall1) ++out.strict;
  }
  return out;
}

AuditCount audit_hierarchical_gain(std::span<const ReportRow> rows, Scheme scheme, Gamma gamma) {
  AuditCount out;
  for (const auto& a : rows) {
    if (!usable(a) || a.scheme != scheme || a.gamma != gamma || !a.hierarchical) continue;
    const auto b = std::find_if(rows.begin(), rows.end(), [&](const ReportRow& x) {
      return usable(x) && x.scheme == scheme && x.gamma == gamma && !x.hierarchical && x.R == a.R && x.T == a.T &&
             x.cap == a.cap;
    });
    if (b == rows.end()) continue;
    ++out.cells;
    if (a.recall1 >= b->recall1) {
      ++out.passed;
    } else {
      out.failures.push_back(describe(a) + " < " + describe(*b));
    }
    if (a.recall1 > b->recall1) ++out.strict;
  }
  return out;
}

}  // namespace pbr

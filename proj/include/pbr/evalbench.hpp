#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pbr/dataio.hpp"
#include "pbr/search.hpp"

namespace pbr {

/// Fraction of the first k truth identities present among the candidates.
double topk_recall(std::span<const std::uint32_t> candidates, std::span<const std::uint32_t> truth_row,
                   std::size_t k);

/// Exact k-NN rows for every query. With `exclude`, query q never lists
/// reference exclude[q] (used when queries are drawn from the reference set).
GroundTruth build_ground_truth(const VectorDataset& reference, const VectorDataset& queries, std::size_t k,
                               std::span<const std::uint32_t> exclude = {});

struct GridSpec {
  std::vector<Scheme> schemes;
  std::vector<Gamma> gammas = {Gamma::kNone};
  std::vector<bool> hierarchical = {false};
  std::vector<std::size_t> R = {1};
  std::vector<std::size_t> T = {0};  // 0 = every subcluster
  bool T_per_cluster = false;        // budget is T·R instead of T
  std::vector<std::size_t> caps = {0};
};

struct ReportRow {
  Scheme scheme = Scheme::kDistQcd;
  Gamma gamma = Gamma::kNone;
  bool hierarchical = false;
  std::size_t M = 0;
  std::uint64_t N = 0;
  std::size_t R = 0;
  std::size_t T = 0;         // effective budget of the cell
  std::size_t T_grid = 0;    // grid value it came from
  std::size_t cap = 0;
  double recall1 = 0.0;
  double recall10 = 0.0;
  double recall100 = 0.0;
  double ms_mean = 0.0;
  double cand_mean = 0.0;
  std::uint64_t seed = 0;
  std::string error;  // non-empty when the cell failed
};

struct BenchInputs {
  const VectorDataset* queries_index = nullptr;     // index space
  const VectorDataset* queries_original = nullptr;  // original space, for ADC
  const GroundTruth* truth = nullptr;               // depth ≥ 100 for recall@100
  std::span<const double> ideal_weights;            // weights over truth depth
  SearchArtifacts artifacts;
  std::uint64_t seed = 0;
  bool timing = false;  // record wall time; off keeps reports byte-stable
};

/// Cells the grid expands to; combinations a scheme cannot run are omitted
/// (distance ranking with quantity estimation, hierarchical without a model).
std::vector<ReportRow> expand_grid(const GridSpec& spec, const BenchInputs& in);

/// Runs every cell over every query. Failed cells keep their reason and the grid continues.
std::vector<ReportRow> run_grid(const GridSpec& spec, const BenchInputs& in);

inline constexpr const char* kReportHeader =
    "scheme,gamma,hier,M,N,R,T,cap,recall1,recall10,recall100,ms_mean,cand_mean,seed";

std::string report_csv(std::span<const ReportRow> rows);
void write_report(std::span<const ReportRow> rows, const std::filesystem::path& path);

struct AuditCount {
  std::size_t cells = 0;
  std::size_t passed = 0;
  std::size_t strict = 0;  // strictly better, where the audit distinguishes it
  std::vector<std::string> failures;
};

/// recall@1 non-decreasing in R within each (scheme, gamma, hier, grid T, cap) series.
AuditCount audit_monotone_in_r(std::span<const ReportRow> rows);
/// Ideal recall@1 ≥ every other row with the same gamma, R, T and cap.
AuditCount audit_ideal_dominance(std::span<const ReportRow> rows);
/// `with` vs `without` at equal scheme, hier, R, T, cap and R ≥ 2: passed counts
/// recall@1(with) ≥ recall@1(without) − tolerance, strict counts >.
AuditCount audit_gamma_gain(std::span<const ReportRow> rows, Scheme scheme, Gamma with, Gamma without,
                            double tolerance);
/// Hierarchical vs flat for one scheme and gamma at equal R, T, cap: passed counts ≥.
AuditCount audit_hierarchical_gain(std::span<const ReportRow> rows, Scheme scheme, Gamma gamma);

}  // namespace pbr

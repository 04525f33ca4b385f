#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pbr/evalbench.hpp"

namespace pbr {

/// Flat key=value run configuration. Every key has a default; unknown keys are rejected.
class RunConfig {
 public:
  RunConfig();

  /// Lines of key = value; '#' starts a comment.
  void load_file(const std::filesystem::path& path);
  /// "key=value".
  void set(const std::string& assignment);
  void set(const std::string& key, const std::string& value);

  const std::string& str(const std::string& key) const;
  std::size_t size(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<std::string> list(const std::string& key) const;
  std::vector<std::size_t> size_list(const std::string& key) const;

  std::filesystem::path workdir() const { return str("workdir"); }
  /// Sorted key=value lines for keys under any of the given prefixes.
  std::string canonical(const std::vector<std::string>& prefixes) const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

/// Checks every value parses and paths named by the config exist; throws ConfigError.
void validate_config(const RunConfig& cfg);

struct Artifacts {
  std::filesystem::path dir;
  std::filesystem::path pca, reference, queries, reference_pca, queries_pca, truth;
  std::filesystem::path index, pq_codec, pq_codes;
  std::filesystem::path train_truth, h_model;
  std::filesystem::path report;
  std::filesystem::path f_model(FeatureMode mode) const;
  std::filesystem::path stamp(const std::string& stage) const;

  explicit Artifacts(const RunConfig& cfg);
};

/// Each command returns false when it found its outputs up to date and did nothing.
bool cmd_prepare(const RunConfig& cfg, bool force, std::ostream& log);
bool cmd_build(const RunConfig& cfg, bool force, std::ostream& log);
bool cmd_train(const RunConfig& cfg, bool force, std::ostream& log);
std::vector<ReportRow> cmd_bench(const RunConfig& cfg, std::ostream& log);

/// Query by row of the prepared query set, or by the first vector of a file in original space.
struct QueryTarget {
  std::optional<std::size_t> query_id;
  std::optional<std::filesystem::path> vector_file;
};
SearchResult cmd_query(const RunConfig& cfg, const QueryTarget& target, std::ostream& out);

/// Prints artifact headers and the memory accounting.
void cmd_inspect(const RunConfig& cfg, std::ostream& out);

/// Bytes the index structure needs per the accounting formula.
struct MemoryAccount {
  std::size_t points = 0;
  std::size_t table_bytes = 0;
  std::size_t codebook_bytes = 0;
  std::size_t network_bytes = 0;
  std::size_t identity_bytes = 0;
  std::size_t pq_code_bytes = 0;
  std::size_t formula_bytes() const { return table_bytes + codebook_bytes + network_bytes; }
  double overhead_per_point() const {
    return points == 0 ? 0.0 : static_cast<double>(formula_bytes()) / static_cast<double>(points);
  }
};

struct FileAccount {
  std::size_t index_file = 0;     // whole index file
  std::size_t model_files = 0;    // networks used for search
  std::size_t structure = 0;      // index file minus identities, plus networks
};

MemoryAccount memory_account(const RunConfig& cfg);
FileAccount file_account(const RunConfig& cfg, const MemoryAccount& account);

}  // namespace pbr

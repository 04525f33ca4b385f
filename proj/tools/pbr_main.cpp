#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "pbr/pipeline.hpp"

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Probability-ranked two-level ANN index: prepare, build, train, query, bench, inspect"};
  app.require_subcommand(1, 1);
  std::string config_path;
  std::vector<std::string> overrides;
  bool force = false;
  app.add_option("-c,--config", config_path, "key=value configuration file");
  app.add_option("-s,--set", overrides, "override a config key (key=value); repeatable");
  app.add_flag("-f,--force", force, "rerun even when outputs are up to date");

  auto* prepare = app.add_subcommand("prepare", "PCA model, compressed sets and ground truth");
  auto* build = app.add_subcommand("build", "two-level index and PQ codes");
  auto* train = app.add_subcommand("train", "first-level and second-level networks");
  auto* query = app.add_subcommand("query", "search one query and print tab-separated hits");
  auto* bench = app.add_subcommand("bench", "run the recall grid and write the CSV report");
  auto* inspect = app.add_subcommand("inspect", "print artifact headers and memory accounting");
  std::size_t query_id = 0;
  std::string vector_file;
  auto* id_opt = query->add_option("--id", query_id, "row of the prepared query set");
  auto* file_opt = query->add_option("--vector", vector_file, "fvecs/bvecs file; its first vector is the query");
  id_opt->excludes(file_opt);
  for (auto* sub : {prepare, build, train, query, bench, inspect}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    pbr::RunConfig cfg;
    if (!config_path.empty()) cfg.load_file(config_path);
    for (const auto& o : overrides) cfg.set(o);
    if (prepare->parsed()) pbr::cmd_prepare(cfg, force, std::cout);
    if (build->parsed()) pbr::cmd_build(cfg, force, std::cout);
    if (train->parsed()) pbr::cmd_train(cfg, force, std::cout);
    if (bench->parsed()) pbr::cmd_bench(cfg, std::cout);
    if (inspect->parsed()) pbr::cmd_inspect(cfg, std::cout);
    if (query->parsed()) {
      pbr::QueryTarget target;
      if (*id_opt) target.query_id = query_id;
      if (*file_opt) target.vector_file = vector_file;
      pbr::cmd_query(cfg, target, std::cout);
    }
  } catch (const pbr::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const pbr::ParameterError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const pbr::FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  } catch (const pbr::NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kOk;
}

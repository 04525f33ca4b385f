#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <sstream>

#include "pbr/binio.hpp"
#include "pbr/common.hpp"
#include "pbr/pipeline.hpp"
#include "test_support.hpp"

using namespace pbr;
namespace fs = std::filesystem;

namespace {

RunConfig tiny(const fs::path& dir) {
  RunConfig cfg;
  for (const char* kv :
       {"synth.count=3000", "synth.modes=6", "synth.dim=12", "synth.spread=0.2", "data.query_count=40",
        "pca.out_dim=6", "truth.k=100", "index.M=8", "index.N=6", "index.kmeans_iters=8", "pq.segments=4",
        "pq.seg_k=16", "pq.iters=6", "train.points=300", "train.hidden=16", "train.epochs=3", "train.batch=50",
        "train.hier=true", "train.optimizer=adam", "train.lr=0.001", "bench.schemes=dist_qcd,prob_qcs,ideal",
        "bench.gammas=none,std", "bench.hier=false,true", "bench.R=1,2", "bench.T=0,4"}) {
    cfg.set(kv);
  }
  cfg.set("workdir", dir.string());
  return cfg;
}

void run_all(const RunConfig& cfg) {
  std::ostringstream log;
  cmd_prepare(cfg, false, log);
  cmd_build(cfg, false, log);
  cmd_train(cfg, false, log);
  cmd_bench(cfg, log);
}

}  // namespace

TEST_CASE("pipeline: config keys", "[pipeline]") {
  RunConfig cfg;
  REQUIRE(cfg.size("index.M") == 256);
  cfg.set("index.M=12");
  REQUIRE(cfg.size("index.M") == 12);
  REQUIRE_THROWS_AS(cfg.set("index.Q=3"), ConfigError);
  REQUIRE_THROWS_AS(cfg.set("index.M"), ConfigError);
  cfg.set("index.M=twelve");
  REQUIRE_THROWS_AS(validate_config(cfg), ConfigError);
  RunConfig bad;
  bad.set("bench.T_mode=sometimes");
  REQUIRE_THROWS_AS(validate_config(bad), ConfigError);
  RunConfig files;
  files.set("data.source=files");
  REQUIRE_THROWS_AS(validate_config(files), ConfigError);
}

TEST_CASE("pipeline: config files", "[pipeline]") {
  test::TempDir dir("pipeline_cfg");
  const std::string text = "# tiny\nindex.M = 9\n\nsearch.gamma=std  # trailing\n";
  test::write_bytes(dir / "run.cfg", std::vector<std::uint8_t>(text.begin(), text.end()));
  RunConfig cfg;
  cfg.load_file(dir / "run.cfg");
  REQUIRE(cfg.size("index.M") == 9);
  REQUIRE(cfg.str("search.gamma") == "std");
  const std::string wrong = "index.MM = 9\n";
  test::write_bytes(dir / "wrong.cfg", std::vector<std::uint8_t>(wrong.begin(), wrong.end()));
  REQUIRE_THROWS_AS(cfg.load_file(dir / "wrong.cfg"), ConfigError);
  REQUIRE_THROWS_AS(cfg.load_file(dir / "absent.cfg"), ConfigError);
}

TEST_CASE("pipeline: stages require their predecessors", "[pipeline]") {
  test::TempDir dir("pipeline_order");
  const auto cfg = tiny(dir.path());
  std::ostringstream log;
  REQUIRE_THROWS_AS(cmd_build(cfg, false, log), ConfigError);
  REQUIRE_THROWS_AS(cmd_train(cfg, false, log), ConfigError);
  REQUIRE_THROWS_AS(cmd_bench(cfg, log), ConfigError);
  REQUIRE(cmd_prepare(cfg, false, log));
  REQUIRE_FALSE(cmd_prepare(cfg, false, log));
  try {
    cmd_train(cfg, false, log);
    FAIL("train ran without an index");
  } catch (const ConfigError& e) {
    REQUIRE(std::string(e.what()).find("run `build` first") != std::string::npos);
  }
  REQUIRE(cmd_build(cfg, false, log));
  REQUIRE_FALSE(cmd_build(cfg, false, log));
  auto changed = cfg;
  changed.set("index.N=5");
  REQUIRE_THROWS_AS(cmd_train(changed, false, log), ConfigError);
}

TEST_CASE("pipeline: end to end and byte-identical reruns", "[pipeline]") {
  test::TempDir a("pipeline_a"), b("pipeline_b");
  const auto ca = tiny(a.path());
  const auto cb = tiny(b.path());
  run_all(ca);
  run_all(cb);

  const Artifacts aa(ca), ab(cb);
  for (const auto& [x, y] : {std::pair{aa.index, ab.index}, std::pair{aa.f_model(FeatureMode::kQcs), ab.f_model(FeatureMode::kQcs)},
                             std::pair{aa.h_model, ab.h_model}, std::pair{aa.report, ab.report},
                             std::pair{aa.pq_codes, ab.pq_codes}, std::pair{aa.truth, ab.truth}}) {
    INFO(x.filename().string());
    REQUIRE(binio::read_file(x) == binio::read_file(y));
  }

  const auto report = binio::read_file(aa.report);
  const std::string csv(report.begin(), report.end());
  REQUIRE(csv.rfind(std::string(kReportHeader) + "\n", 0) == 0);
  REQUIRE(csv.find("prob_qcs,std,1,") != std::string::npos);
  REQUIRE(csv.find("ideal,none,0,") != std::string::npos);

  std::ostringstream out;
  const auto res = cmd_query(ca, QueryTarget{.query_id = 3}, out);
  REQUIRE(res.hits.size() == 10);
  const std::string text = out.str();
  REQUIRE(text.rfind("0\t", 0) == 0);
  REQUIRE(text.find("# clusters=5 ") != std::string::npos);
  REQUIRE_THROWS_AS(cmd_query(ca, QueryTarget{.query_id = 40}, out), ParameterError);
  REQUIRE_THROWS_AS(cmd_query(ca, QueryTarget{}, out), ConfigError);

  std::ostringstream by_file;
  const auto fv = cmd_query(ca, QueryTarget{.vector_file = aa.queries}, by_file);
  std::ostringstream by_id;
  const auto fid = cmd_query(ca, QueryTarget{.query_id = 0}, by_id);
  REQUIRE(fv.hits.size() == fid.hits.size());
  for (std::size_t i = 0; i < fv.hits.size(); ++i) REQUIRE(fv.hits[i].id == fid.hits[i].id);

  std::ostringstream info;
  cmd_inspect(ca, info);
  REQUIRE(info.str().find("memory\ttable (8MN)\t384\n") != std::string::npos);
  const auto m = memory_account(ca);
  REQUIRE(m.points == 3000);
  REQUIRE(m.table_bytes == 8 * 8 * 6);
  REQUIRE(m.codebook_bytes == 4 * (8 + 6) * 6);
  const auto f = file_account(ca, m);
  REQUIRE(f.index_file == fs::file_size(aa.index));
  REQUIRE(f.structure > 0);
}

TEST_CASE("pipeline: empty bench grid writes a header", "[pipeline]") {
  test::TempDir dir("pipeline_empty");
  auto cfg = tiny(dir.path());
  cfg.set("train.hier=false");
  cfg.set("bench.schemes=prob_raw");
  std::ostringstream log;
  cmd_prepare(cfg, false, log);
  cmd_build(cfg, false, log);
  cmd_train(cfg, false, log);
  const auto rows = cmd_bench(cfg, log);
  REQUIRE(rows.size() == 8);
  for (const auto& r : rows) REQUIRE_FALSE(r.error.empty());
  cfg.set("bench.R=");
  REQUIRE(cmd_bench(cfg, log).empty());
  const auto bytes = binio::read_file(Artifacts(cfg).report);
  REQUIRE(std::string(bytes.begin(), bytes.end()) == std::string(kReportHeader) + "\n");
}

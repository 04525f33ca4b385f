#include "pbr/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "pbr/linalg.hpp"
#include "pbr/random.hpp"
#include "pbr/ranker.hpp"

namespace pbr {

namespace fs = std::filesystem;

namespace {

const std::map<std::string, std::string>& default_values() {
  static const std::map<std::string, std::string> d = {
      {"workdir", "pbr_work"},
      {"seed", "1"},
      {"data.source", "synthetic"},
      {"data.reference", ""},
      {"data.queries", ""},
      {"data.query_count", "1000"},
      {"synth.count", "100000"},
      {"synth.modes", "64"},
      {"synth.dim", "64"},
      {"synth.spread", "0.1"},
      {"pca.out_dim", "32"},
      {"pca.train_sample", "100000"},
      {"truth.k", "100"},
      {"index.kind", "rvq"},
      {"index.M", "256"},
      {"index.N", "256"},
      {"index.alpha", "4"},
      {"index.beta", "16"},
      {"index.kmeans_iters", "25"},
      {"index.opq_iters", "10"},
      {"index.train_sample", "0"},
      {"pq.segments", "16"},
      {"pq.seg_k", "256"},
      {"pq.iters", "25"},
      {"pq.train_sample", "20000"},
      {"train.points", "20000"},
      {"train.K", "100"},
      {"train.top_count", "1"},
      {"train.top_weight", "100"},
      {"train.features", "qcs"},
      {"train.hier", "false"},
      {"train.h_cells", "2"},
      {"train.hidden", "512,512"},
      {"train.epochs", "300"},
      {"train.batch", "1000"},
      {"train.optimizer", "sgd"},
      {"train.lr", "0.01"},
      {"train.momentum", "0.9"},
      {"train.halve_every", "100"},
      {"search.scheme", "prob_qcs"},
      {"search.gamma", "none"},
      {"search.hier", "false"},
      {"search.R", "5"},
      {"search.T", "0"},
      {"search.k", "10"},
      {"search.cap", "0"},
      {"bench.schemes", "dist_qcd,prob_qcs,ideal"},
      {"bench.gammas", "none"},
      {"bench.hier", "false"},
      {"bench.R", "1,2,4,8,16"},
      {"bench.T", "0"},
      {"bench.T_mode", "absolute"},
      {"bench.caps", "0"},
      {"bench.timing", "false"},
      {"bench.report", "report.csv"},
  };
  return d;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw ConfigError("config " + key + ": \"" + text + "\" is not a valid number");
  }
  return value;
}

}  // namespace

RunConfig::RunConfig() : values_(default_values()) {}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key \"" + key + "\"");
  it->second = value;
}

void RunConfig::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got \"" + assignment + "\"");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void RunConfig::load_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open config file");
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      set(line);
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
}

const std::string& RunConfig::str(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key \"" + key + "\"");
  return it->second;
}

std::size_t RunConfig::size(const std::string& key) const { return parse_number<std::size_t>(key, str(key)); }
std::uint64_t RunConfig::u64(const std::string& key) const { return parse_number<std::uint64_t>(key, str(key)); }

double RunConfig::real(const std::string& key) const {
  const std::string& text = str(key);
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size() || !std::isfinite(v)) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config " + key + ": \"" + text + "\" is not a valid real number");
  }
}

bool RunConfig::flag(const std::string& key) const {
  const std::string& v = str(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config " + key + ": \"" + v + "\" is not a boolean");
}

std::vector<std::string> RunConfig::list(const std::string& key) const {
  std::vector<std::string> out;
  std::stringstream ss(str(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<std::size_t> RunConfig::size_list(const std::string& key) const {
  std::vector<std::size_t> out;
  for (const auto& item : list(key)) out.push_back(parse_number<std::size_t>(key, item));
  return out;
}

std::string RunConfig::canonical(const std::vector<std::string>& prefixes) const {
  std::string out;
  for (const auto& [k, v] : values_) {
    const bool wanted = std::any_of(prefixes.begin(), prefixes.end(), [&](const std::string& p) {
      return k == p || k.rfind(p + ".", 0) == 0;
    });
    if (wanted) out += k + "=" + v + "\n";
  }
  return out;
}

namespace {

std::vector<bool> flag_list(const RunConfig& cfg, const std::string& key) {
  std::vector<bool> out;
  for (const auto& v : cfg.list(key)) {
    if (v == "true" || v == "1") {
      out.push_back(true);
    } else if (v == "false" || v == "0") {
      out.push_back(false);
    } else {
      throw ConfigError("config " + key + ": \"" + v + "\" is not a boolean");
    }
  }
  return out;
}

Optimizer parse_optimizer(const std::string& v) {
  if (v == "sgd") return Optimizer::kSgd;
  if (v == "adam") return Optimizer::kAdam;
  throw ConfigError("config train.optimizer: \"" + v + "\" (expected sgd or adam)");
}

}  // namespace

void validate_config(const RunConfig& cfg) {
  const std::string& source = cfg.str("data.source");
  if (source != "synthetic" && source != "files") {
    throw ConfigError("config data.source: \"" + source + "\" (expected synthetic or files)");
  }
  if (source == "files") {
    for (const char* key : {"data.reference", "data.queries"}) {
      const std::string& p = cfg.str(key);
      if (p.empty()) throw ConfigError(std::string("config ") + key + " is required when data.source=files");
      if (!fs::exists(p)) throw ConfigError(std::string("config ") + key + ": " + p + " does not exist");
    }
  }
  for (const char* key : {"seed"}) cfg.u64(key);
  for (const char* key :
       {"data.query_count", "synth.count", "synth.modes", "synth.dim", "pca.out_dim", "pca.train_sample", "truth.k", "index.M", "index.N",
        "index.alpha", "index.beta", "index.kmeans_iters", "index.opq_iters", "index.train_sample", "pq.segments",
        "pq.seg_k", "pq.iters", "pq.train_sample", "train.points", "train.K", "train.top_count", "train.h_cells",
        "train.epochs", "train.batch", "train.halve_every", "search.R", "search.T", "search.k", "search.cap"}) {
    cfg.size(key);
  }
  for (const char* key : {"synth.spread", "train.top_weight", "train.lr", "train.momentum"}) cfg.real(key);
  for (const char* key : {"train.hier", "search.hier", "bench.timing"}) cfg.flag(key);
  cfg.size_list("train.hidden");
  cfg.size_list("bench.R");
  cfg.size_list("bench.T");
  cfg.size_list("bench.caps");
  flag_list(cfg, "bench.hier");
  parse_index_kind(cfg.str("index.kind"));
  parse_optimizer(cfg.str("train.optimizer"));
  parse_scheme(cfg.str("search.scheme"));
  parse_gamma(cfg.str("search.gamma"));
  for (const auto& v : cfg.list("train.features")) {
    const FeatureMode mode = parse_feature_mode(v);
    if (mode == FeatureMode::kHierarchical) throw ConfigError("config train.features: use train.hier for h");
  }
  for (const auto& v : cfg.list("bench.schemes")) parse_scheme(v);
  for (const auto& v : cfg.list("bench.gammas")) parse_gamma(v);
  const std::string& mode = cfg.str("bench.T_mode");
  if (mode != "absolute" && mode != "per_cluster") {
    throw ConfigError("config bench.T_mode: \"" + mode + "\" (expected absolute or per_cluster)");
  }
}

Artifacts::Artifacts(const RunConfig& cfg) : dir(cfg.workdir()) {
  pca = dir / "pca.bin";
  const bool files = cfg.str("data.source") == "files";
  reference = files ? fs::path(cfg.str("data.reference")) : dir / "reference.fvecs";
  queries = files ? fs::path(cfg.str("data.queries")) : dir / "queries.fvecs";
  reference_pca = dir / "reference_pca.fvecs";
  queries_pca = dir / "queries_pca.fvecs";
  truth = dir / "truth.ivecs";
  index = dir / "index.lix";
  pq_codec = dir / "pq_codec.bin";
  pq_codes = dir / "pq_codes.bin";
  train_truth = dir / "train_truth.ivecs";
  h_model = dir / "h.mlp";
  const fs::path r = cfg.str("bench.report");
  report = r.is_absolute() ? r : dir / r;
}

fs::path Artifacts::f_model(FeatureMode mode) const { return dir / ("f_" + std::string(to_string(mode)) + ".mlp"); }
fs::path Artifacts::stamp(const std::string& stage) const { return dir / (stage + ".stamp"); }

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return {};
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(path.string() + ": cannot open for writing");
  out << text;
  if (!out) throw FormatError(path.string() + ": write failed");
}

bool up_to_date(const fs::path& stamp, const std::string& content, const std::vector<fs::path>& outputs) {
  if (!fs::exists(stamp) || read_text(stamp) != content) return false;
  return std::all_of(outputs.begin(), outputs.end(), [](const fs::path& p) { return fs::exists(p); });
}

void require_stage(const Artifacts& a, const std::string& stage, const std::string& command) {
  if (!fs::exists(a.stamp(stage))) {
    throw ConfigError("missing " + stage + " artifacts in " + a.dir.string() + "; run `" + command + "` first");
  }
}

std::string prepare_key(const RunConfig& cfg) {
  return cfg.canonical({"seed", "data", "synth", "pca", "truth"});
}
std::string build_key(const RunConfig& cfg) { return prepare_key(cfg) + cfg.canonical({"index", "pq"}); }
std::string trainset_key(const RunConfig& cfg) {
  return build_key(cfg) + cfg.canonical({"train.points", "train.K"});
}
std::string train_key(const RunConfig& cfg) { return build_key(cfg) + cfg.canonical({"train"}); }

std::vector<FeatureMode> feature_modes(const RunConfig& cfg) {
  std::vector<FeatureMode> out;
  for (const auto& v : cfg.list("train.features")) out.push_back(parse_feature_mode(v));
  return out;
}

// Exactly `count` references and `queries` held-out queries from one mixture.
void synthesize(const RunConfig& cfg, VectorDataset& reference, VectorDataset& queries) {
  const std::size_t count = cfg.size("synth.count");
  const std::size_t nq = cfg.size("data.query_count");
  const std::size_t modes = cfg.size("synth.modes");
  if (modes == 0 || count == 0) throw ParameterError("synth.modes and synth.count must be positive");
  const std::size_t per_mode = (count + nq + modes - 1) / modes;
  const std::uint64_t seed = cfg.u64("seed");
  VectorDataset all = gen_synthetic(modes, per_mode, cfg.size("synth.dim"), cfg.real("synth.spread"),
                                    derive_seed(seed, "synth.data"));
  Split split = split_holdout(all, nq, derive_seed(seed, "synth.queries"));
  queries = std::move(split.held_out);
  if (split.kept.count > count) {
    Split trim_split = split_holdout(split.kept, split.kept.count - count, derive_seed(seed, "synth.trim"));
    reference = std::move(trim_split.kept);
  } else {
    reference = std::move(split.kept);
  }
}

}  // namespace

bool cmd_prepare(const RunConfig& cfg, bool force, std::ostream& log) {
  validate_config(cfg);
  const Artifacts a(cfg);
  const std::string key = prepare_key(cfg);
  const std::vector<fs::path> outputs = {a.pca, a.reference, a.queries, a.reference_pca, a.queries_pca, a.truth};
  if (!force && up_to_date(a.stamp("prepare"), key, outputs)) {
    log << "prepare: up-to-date\n";
    return false;
  }
  const auto t0 = Clock::now();
  const bool synthetic = cfg.str("data.source") == "synthetic";
  const std::size_t out_dim = cfg.size("pca.out_dim");
  const std::size_t truth_k = cfg.size("truth.k");
  if (synthetic && (out_dim == 0 || out_dim > cfg.size("synth.dim"))) {
    throw ParameterError("pca.out_dim=" + std::to_string(out_dim) + " must be in [1, " + cfg.str("synth.dim") + "]");
  }

  VectorDataset reference, queries;
  if (synthetic) {
    synthesize(cfg, reference, queries);
  } else {
    reference = read_vectors(a.reference);
    queries = read_vectors(a.queries);
    const std::size_t nq = cfg.size("data.query_count");
    if (nq > 0 && nq < queries.count) {
      queries.count = nq;
      queries.data.resize(nq * queries.dim);
    }
  }
  reference.validate();
  queries.validate();
  if (reference.dim != queries.dim) {
    throw FormatError("reference dim " + std::to_string(reference.dim) + " differs from query dim " +
                      std::to_string(queries.dim));
  }
  if (out_dim == 0 || out_dim > reference.dim) {
    throw ParameterError("pca.out_dim=" + std::to_string(out_dim) + " must be in [1, " +
                         std::to_string(reference.dim) + "]");
  }
  if (truth_k == 0 || truth_k > reference.count) {
    throw ParameterError("truth.k=" + std::to_string(truth_k) + " must be in [1, reference count]");
  }

  fs::create_directories(a.dir);
  fs::remove(a.stamp("prepare"));
  if (synthetic) {
    write_fvecs(reference, a.reference);
    write_fvecs(queries, a.queries);
  }
  const std::size_t pca_sample = cfg.size("pca.train_sample");
  const PcaModel pca =
      pca_sample > 0 && pca_sample < reference.count
          ? pca_fit(split_holdout(reference, pca_sample, derive_seed(cfg.u64("seed"), "pca.sample")).held_out, out_dim)
          : pca_fit(reference, out_dim);
  save_pca(pca, a.pca);
  write_fvecs(pca_transform(pca, reference), a.reference_pca);
  write_fvecs(pca_transform(pca, queries), a.queries_pca);
  const GroundTruth truth = build_ground_truth(reference, queries, truth_k);
  truth.validate(reference.count);
  write_ivecs(truth, a.truth);
  write_text(a.stamp("prepare"), key);
  log << "prepare: " << reference.count << " references, " << queries.count << " queries, dim " << reference.dim
      << " -> " << out_dim << ", truth depth " << truth_k << " (" << std::fixed << std::setprecision(1)
      << seconds_since(t0) << " s)\n";
  log.unsetf(std::ios::floatfield);
  return true;
}

bool cmd_build(const RunConfig& cfg, bool force, std::ostream& log) {
  validate_config(cfg);
  const Artifacts a(cfg);
  require_stage(a, "prepare", "prepare");
  const std::string key = build_key(cfg);
  if (!force && up_to_date(a.stamp("build"), key, {a.index, a.pq_codec, a.pq_codes})) {
    log << "build: up-to-date\n";
    return false;
  }
  if (read_text(a.stamp("prepare")) != prepare_key(cfg)) {
    throw ConfigError("prepare artifacts are stale for this config; run `prepare` first");
  }
  const auto t0 = Clock::now();
  const std::uint64_t seed = cfg.u64("seed");
  IndexParams ip;
  ip.kind = parse_index_kind(cfg.str("index.kind"));
  ip.M = cfg.size("index.M");
  ip.N = cfg.size("index.N");
  ip.alpha = cfg.size("index.alpha");
  ip.beta = cfg.size("index.beta");
  ip.kmeans_iters = cfg.size("index.kmeans_iters");
  ip.opq_iters = cfg.size("index.opq_iters");
  ip.train_sample = cfg.size("index.train_sample");
  ip.seed = derive_seed(seed, "index");

  fs::remove(a.stamp("build"));
  const VectorDataset reference_pca = read_fvecs(a.reference_pca);
  const TwoLevelIndex index = TwoLevelIndex::build(reference_pca, ip);
  index.save(a.index);
  const double t_index = seconds_since(t0);

  const VectorDataset reference = read_vectors(a.reference);
  PqFitParams pp;
  pp.num_segments = cfg.size("pq.segments");
  pp.seg_k = cfg.size("pq.seg_k");
  pp.kmeans_iters = cfg.size("pq.iters");
  pp.seed = derive_seed(seed, "pq");
  const std::size_t sample = cfg.size("pq.train_sample");
  VectorDataset pq_train;
  if (sample > 0 && sample < reference.count) {
    pq_train = split_holdout(reference, sample, derive_seed(seed, "pq.sample")).held_out;
  }
  const PqCodec codec = pq_fit(pq_train.empty() ? reference : pq_train, pp);
  save_pq_codec(codec, a.pq_codec);
  save_pq_codes(pq_encode(codec, reference), a.pq_codes);
  write_text(a.stamp("build"), key);
  log << "build: " << to_string(ip.kind) << " index M=" << index.M() << " N=" << index.N() << " over "
      << index.size() << " points (" << std::fixed << std::setprecision(1) << t_index << " s), PQ "
      << codec.num_segments << "x" << codec.seg_k << " (" << seconds_since(t0) - t_index << " s)\n";
  log.unsetf(std::ios::floatfield);
  return true;
}

namespace {

TrainParams train_params(const RunConfig& cfg, const std::string& component) {
  TrainParams p;
  p.hidden = cfg.size_list("train.hidden");
  p.epochs = cfg.size("train.epochs");
  p.batch = cfg.size("train.batch");
  p.optimizer = parse_optimizer(cfg.str("train.optimizer"));
  p.learning_rate = cfg.real("train.lr");
  p.momentum = cfg.real("train.momentum");
  p.halve_every = cfg.size("train.halve_every");
  p.seed = derive_seed(cfg.u64("seed"), component);
  return p;
}

std::vector<double> training_weights(const RunConfig& cfg, std::size_t K) {
  return nn_weights(K, cfg.size("train.top_count"), cfg.real("train.top_weight"));
}

// Training queries (stratified by first-level cell) and their neighbors, cached.
void training_queries(const RunConfig& cfg, const Artifacts& a, const TwoLevelIndex& index,
                      const VectorDataset& reference_pca, VectorDataset& queries, GroundTruth& truth,
                      std::ostream& log) {
  const std::size_t points = cfg.size("train.points");
  const std::size_t K = cfg.size("train.K");
  if (points == 0) throw ParameterError("train.points must be positive");
  const Sample sample = stratified_sample(reference_pca, index.first_labels(), points,
                                          derive_seed(cfg.u64("seed"), "train.sample"));
  queries = sample.vectors;
  const std::string key = trainset_key(cfg);
  if (up_to_date(a.stamp("trainset"), key, {a.train_truth})) {
    truth = read_ivecs(a.train_truth);
    if (truth.query_count == points && truth.k == K) return;
  }
  const auto t0 = Clock::now();
  fs::remove(a.stamp("trainset"));
  const VectorDataset reference = read_vectors(a.reference);
  truth = build_ground_truth(reference, reference.select(sample.ids), K, sample.ids);
  write_ivecs(truth, a.train_truth);
  write_text(a.stamp("trainset"), key);
  log << "train: ground truth for " << points << " training points, depth " << K << " (" << std::fixed
      << std::setprecision(1) << seconds_since(t0) << " s)\n";
  log.unsetf(std::ios::floatfield);
}

void report_training(std::ostream& log, const std::string& name, const TrainingSet& set,
                     const TrainResult<float>& result, double secs) {
  log << "train: " << name << " rows=" << set.rows << " in=" << set.input_width << " out=" << set.output_width;
  if (!result.epoch_loss.empty()) {
    log << " loss " << std::setprecision(5) << result.epoch_loss.front() << " -> " << result.epoch_loss.back();
  }
  log << std::fixed << std::setprecision(1) << " (" << secs << " s)\n";
  log.unsetf(std::ios::floatfield);
  log << std::setprecision(6);
}

}  // namespace

bool cmd_train(const RunConfig& cfg, bool force, std::ostream& log) {
  validate_config(cfg);
  const Artifacts a(cfg);
  if (!fs::exists(a.stamp("build"))) {
    throw ConfigError("missing build artifacts in " + a.dir.string() + "; run `build` first");
  }
  const std::string key = train_key(cfg);
  std::vector<fs::path> outputs;
  const auto modes = feature_modes(cfg);
  for (auto m : modes) outputs.push_back(a.f_model(m));
  const bool hier = cfg.flag("train.hier");
  if (hier) outputs.push_back(a.h_model);
  if (!force && up_to_date(a.stamp("train"), key, outputs)) {
    log << "train: up-to-date\n";
    return false;
  }
  if (read_text(a.stamp("build")) != build_key(cfg)) {
    throw ConfigError("build artifacts are stale for this config; run `build` first");
  }
  fs::remove(a.stamp("train"));
  const TwoLevelIndex index = TwoLevelIndex::load(a.index);
  const VectorDataset reference_pca = read_fvecs(a.reference_pca);
  VectorDataset queries;
  GroundTruth truth;
  training_queries(cfg, a, index, reference_pca, queries, truth, log);
  const auto weights = training_weights(cfg, truth.k);

  for (auto mode : modes) {
    const auto t0 = Clock::now();
    const TrainingSet set = first_training_set(mode, queries, truth, weights, index);
    auto result = mlp_train<float>(set, mode, train_params(cfg, std::string("train.f.") + to_string(mode)));
    save_mlp(result.model, a.f_model(mode));
    report_training(log, std::string("f/") + to_string(mode), set, result, seconds_since(t0));
  }
  if (hier) {
    const auto t0 = Clock::now();
    const TrainingSet set = second_training_set(queries, truth, weights, index, cfg.size("train.h_cells"));
    if (set.rows == 0) throw ConfigError("train: no usable rows for h (no neighbors inside the sampled cells)");
    auto result = mlp_train<float>(set, FeatureMode::kHierarchical, train_params(cfg, "train.h"));
    save_mlp(result.model, a.h_model);
    report_training(log, "h", set, result, seconds_since(t0));
  }
  write_text(a.stamp("train"), key);
  return true;
}

namespace {

struct Loaded {
  TwoLevelIndex index;
  PqCodec pq;
  PqCodeStore codes;
  std::map<FeatureMode, Mlp> f;
  std::optional<Mlp> h;

  SearchArtifacts view(Scheme scheme) const {
    SearchArtifacts art;
    art.index = &index;
    art.pq = &pq;
    art.codes = &codes;
    if (is_probabilistic(scheme)) {
      const auto it = f.find(scheme_feature(scheme));
      if (it != f.end()) art.f = &it->second;
    }
    if (h) art.h = &*h;
    return art;
  }
};

Loaded load_search_artifacts(const RunConfig& cfg, const Artifacts& a, const std::vector<Scheme>& schemes,
                             bool want_h) {
  require_stage(a, "build", "build");
  Loaded l{TwoLevelIndex::load(a.index), load_pq_codec(a.pq_codec), load_pq_codes(a.pq_codes), {}, std::nullopt};
  validate_codes(l.pq, l.codes);
  for (auto s : schemes) {
    if (!is_probabilistic(s)) continue;
    const FeatureMode mode = scheme_feature(s);
    if (l.f.count(mode)) continue;
    if (fs::exists(a.f_model(mode))) l.f.emplace(mode, load_mlp(a.f_model(mode)));
  }
  if (want_h && fs::exists(a.h_model)) l.h = load_mlp(a.h_model);
  (void)cfg;
  return l;
}

}  // namespace

std::vector<ReportRow> cmd_bench(const RunConfig& cfg, std::ostream& log) {
  validate_config(cfg);
  const Artifacts a(cfg);
  require_stage(a, "prepare", "prepare");
  GridSpec spec;
  for (const auto& s : cfg.list("bench.schemes")) spec.schemes.push_back(parse_scheme(s));
  spec.gammas.clear();
  for (const auto& g : cfg.list("bench.gammas")) spec.gammas.push_back(parse_gamma(g));
  spec.hierarchical = flag_list(cfg, "bench.hier");
  spec.R = cfg.size_list("bench.R");
  spec.T = cfg.size_list("bench.T");
  spec.T_per_cluster = cfg.str("bench.T_mode") == "per_cluster";
  spec.caps = cfg.size_list("bench.caps");

  std::vector<ReportRow> rows;
  const bool empty = spec.schemes.empty() || spec.gammas.empty() || spec.hierarchical.empty() || spec.R.empty() ||
                     spec.T.empty() || spec.caps.empty();
  if (empty) {
    write_report(rows, a.report);
    log << "bench: empty grid; wrote " << a.report.string() << "\n";
    return rows;
  }
  const bool want_h = std::find(spec.hierarchical.begin(), spec.hierarchical.end(), true) != spec.hierarchical.end();
  const Loaded l = load_search_artifacts(cfg, a, spec.schemes, want_h);
  const VectorDataset qi = read_fvecs(a.queries_pca);
  VectorDataset qo = read_vectors(a.queries);
  if (qo.count > qi.count) {
    qo.count = qi.count;
    qo.data.resize(qi.count * qo.dim);
  }
  const GroundTruth truth = read_ivecs(a.truth);
  truth.validate(l.index.size());
  const auto weights = training_weights(cfg, truth.k);

  BenchInputs in;
  in.queries_index = &qi;
  in.queries_original = &qo;
  in.truth = &truth;
  in.ideal_weights = weights;
  in.seed = cfg.u64("seed");
  in.timing = cfg.flag("bench.timing");

  // Models differ per scheme, so each scheme runs as its own grid.
  const auto t0 = Clock::now();
  for (Scheme s : spec.schemes) {
    GridSpec one = spec;
    one.schemes = {s};
    in.artifacts = l.view(s);
    auto part = run_grid(one, in);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  write_report(rows, a.report);
  std::size_t failed = 0;
  for (const auto& r : rows) {
    if (!r.error.empty()) {
      ++failed;
      log << "bench: cell " << to_string(r.scheme) << "/" << to_string(r.gamma) << (r.hierarchical ? "/hier" : "")
          << " R=" << r.R << " T=" << r.T << " failed: " << r.error << "\n";
    }
  }
  const auto mono = audit_monotone_in_r(rows);
  const auto ideal = audit_ideal_dominance(rows);
  log << "bench: " << rows.size() << " cells (" << failed << " failed) in " << std::fixed << std::setprecision(1)
      << seconds_since(t0) << " s; monotone-in-R " << mono.passed << "/" << mono.cells << ", ideal dominance "
      << ideal.passed << "/" << ideal.cells << "\n";
  log.unsetf(std::ios::floatfield);
  for (const auto& f : mono.failures) log << "bench: not monotone: " << f << "\n";
  for (const auto& f : ideal.failures) log << "bench: ideal below: " << f << "\n";
  log << "bench: wrote " << a.report.string() << "\n";
  return rows;
}

SearchResult cmd_query(const RunConfig& cfg, const QueryTarget& target, std::ostream& out) {
  validate_config(cfg);
  const Artifacts a(cfg);
  require_stage(a, "prepare", "prepare");
  SearchConfig sc;
  sc.scheme = parse_scheme(cfg.str("search.scheme"));
  sc.gamma = parse_gamma(cfg.str("search.gamma"));
  sc.hierarchical = cfg.flag("search.hier");
  sc.R = cfg.size("search.R");
  sc.T = cfg.size("search.T");
  sc.k = cfg.size("search.k");
  sc.cap = cfg.size("search.cap");
  const Loaded l = load_search_artifacts(cfg, a, {sc.scheme}, sc.hierarchical);
  const SearchArtifacts art = l.view(sc.scheme);

  std::vector<float> q_orig, q_index;
  std::optional<GroundTruth> truth;
  std::vector<double> weights;
  IdealTruth ideal;
  if (target.query_id) {
    const VectorDataset qo = read_vectors(a.queries);
    const VectorDataset qi = read_fvecs(a.queries_pca);
    const std::size_t id = *target.query_id;
    if (id >= qi.count) {
      throw ParameterError("query id " + std::to_string(id) + " out of range [0, " + std::to_string(qi.count) + ")");
    }
    q_orig.assign(qo.row(id).begin(), qo.row(id).end());
    q_index.assign(qi.row(id).begin(), qi.row(id).end());
    truth = read_ivecs(a.truth);
    weights = training_weights(cfg, truth->k);
    ideal = {truth->row(id), weights};
  } else if (target.vector_file) {
    const VectorDataset v = read_vectors(*target.vector_file);
    if (v.count == 0) throw FormatError(target.vector_file->string() + ": no vectors");
    v.validate();
    q_orig.assign(v.row(0).begin(), v.row(0).end());
    const PcaModel pca = load_pca(a.pca);
    if (pca.dim != q_orig.size()) {
      throw FormatError(target.vector_file->string() + ": dim " + std::to_string(q_orig.size()) +
                        " does not match the prepared data (" + std::to_string(pca.dim) + ")");
    }
    q_index = pca_transform(pca, q_orig);
  } else {
    throw ConfigError("query: give a query id or a vector file");
  }
  const SearchResult res = search(q_index, q_orig, sc, art, truth ? &ideal : nullptr);
  for (std::size_t i = 0; i < res.hits.size(); ++i) {
    out << i << '\t' << res.hits[i].id << '\t' << std::setprecision(9) << res.hits[i].distance << '\n';
  }
  out << "# clusters=" << res.stats.clusters_visited << " subclusters=" << res.stats.subclusters_visited
      << " candidates=" << res.stats.candidates_scanned << " ms=" << std::fixed << std::setprecision(3)
      << res.stats.wall_ms << '\n';
  out.unsetf(std::ios::floatfield);
  return res;
}

MemoryAccount memory_account(const RunConfig& cfg) {
  const Artifacts a(cfg);
  require_stage(a, "build", "build");
  const TwoLevelIndex index = TwoLevelIndex::load(a.index);
  const IndexFootprint fp = index.footprint();
  MemoryAccount m;
  m.points = fp.reference_count;
  m.table_bytes = fp.table_bytes;
  m.codebook_bytes = fp.codebook_bytes;
  m.identity_bytes = fp.identity_bytes;
  const Scheme scheme = parse_scheme(cfg.str("search.scheme"));
  if (is_probabilistic(scheme) && fs::exists(a.f_model(scheme_feature(scheme)))) {
    m.network_bytes += 4 * load_mlp(a.f_model(scheme_feature(scheme))).parameter_count();
  }
  if (cfg.flag("search.hier") && fs::exists(a.h_model)) m.network_bytes += 4 * load_mlp(a.h_model).parameter_count();
  if (fs::exists(a.pq_codes)) {
    const PqCodeStore codes = load_pq_codes(a.pq_codes);
    m.pq_code_bytes = codes.codes.size();
  }
  return m;
}

FileAccount file_account(const RunConfig& cfg, const MemoryAccount& account) {
  const Artifacts a(cfg);
  FileAccount f;
  f.index_file = static_cast<std::size_t>(fs::file_size(a.index));
  const Scheme scheme = parse_scheme(cfg.str("search.scheme"));
  if (is_probabilistic(scheme) && fs::exists(a.f_model(scheme_feature(scheme)))) {
    f.model_files += static_cast<std::size_t>(fs::file_size(a.f_model(scheme_feature(scheme))));
  }
  if (cfg.flag("search.hier") && fs::exists(a.h_model)) f.model_files += static_cast<std::size_t>(fs::file_size(a.h_model));
  f.structure = f.index_file - std::min(f.index_file, account.identity_bytes) + f.model_files;
  return f;
}

void cmd_inspect(const RunConfig& cfg, std::ostream& out) {
  validate_config(cfg);
  const Artifacts a(cfg);
  out << "workdir\t" << a.dir.string() << '\n';
  if (fs::exists(a.pca)) {
    const PcaModel pca = load_pca(a.pca);
    out << "pca\t" << a.pca.string() << "\tdim=" << pca.dim << " out_dim=" << pca.out_dim << '\n';
  }
  if (fs::exists(a.truth)) {
    const GroundTruth t = read_ivecs(a.truth);
    out << "truth\t" << a.truth.string() << "\tqueries=" << t.query_count << " k=" << t.k << '\n';
  }
  if (!fs::exists(a.index)) {
    out << "index\tmissing\n";
    return;
  }
  const TwoLevelIndex index = TwoLevelIndex::load(a.index);
  out << "index\t" << a.index.string() << "\tkind=" << to_string(index.kind()) << " dim=" << index.dim()
      << " M=" << index.M() << " N=" << index.N() << " points=" << index.size() << '\n';
  if (fs::exists(a.pq_codec)) {
    const PqCodec pq = load_pq_codec(a.pq_codec);
    out << "pq\t" << a.pq_codec.string() << "\tdim=" << pq.dim << " segments=" << pq.num_segments
        << " seg_k=" << pq.seg_k << '\n';
  }
  for (auto mode : {FeatureMode::kRaw, FeatureMode::kQcs, FeatureMode::kRawQcs}) {
    if (!fs::exists(a.f_model(mode))) continue;
    const Mlp f = load_mlp(a.f_model(mode));
    out << "model\t" << a.f_model(mode).string() << "\tmode=" << to_string(f.mode()) << " layers=";
    for (std::size_t i = 0; i < f.layer_sizes().size(); ++i) out << (i ? "-" : "") << f.layer_sizes()[i];
    out << " params=" << f.parameter_count() << '\n';
  }
  if (fs::exists(a.h_model)) {
    const Mlp h = load_mlp(a.h_model);
    out << "model\t" << a.h_model.string() << "\tmode=" << to_string(h.mode()) << " layers=";
    for (std::size_t i = 0; i < h.layer_sizes().size(); ++i) out << (i ? "-" : "") << h.layer_sizes()[i];
    out << " params=" << h.parameter_count() << '\n';
  }

  const MemoryAccount m = memory_account(cfg);
  const FileAccount f = file_account(cfg, m);
  const double per_point = m.overhead_per_point();
  const double deviation = f.structure == 0 ? 0.0
                               : std::abs(static_cast<double>(m.formula_bytes()) - static_cast<double>(f.structure)) /
                                     static_cast<double>(f.structure);
  out << std::fixed << std::setprecision(3);
  out << "memory\ttable (8MN)\t" << m.table_bytes << '\n';
  out << "memory\tcodebooks\t" << m.codebook_bytes << '\n';
  out << "memory\tnetwork coefficients (4 per parameter)\t" << m.network_bytes << '\n';
  out << "memory\tformula total\t" << m.formula_bytes() << '\n';
  out << "memory\tidentities (4I, excluded)\t" << m.identity_bytes << '\n';
  out << "memory\tPQ codes (excluded)\t" << m.pq_code_bytes << '\n';
  out << "memory\toverhead bytes/point\t" << per_point << '\n';
  out << "files\tindex file\t" << f.index_file << '\n';
  out << "files\tmodel files\t" << f.model_files << '\n';
  out << "files\tstructure (index file - identities + models)\t" << f.structure << '\n';
  out << "files\tformula vs files deviation\t" << deviation << '\n';
  out.unsetf(std::ios::floatfield);
}

}  // namespace pbr

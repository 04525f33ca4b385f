#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "pbr/common.hpp"
#include "pbr/mlp.hpp"
#include "test_support.hpp"

using namespace pbr;
using Catch::Approx;

namespace {

using MlpD = BasicMlp<double>;

MlpD random_net(std::vector<std::size_t> sizes, std::uint64_t seed) {
  auto net = MlpD::glorot(sizes, FeatureMode::kRaw, seed);
  Rng rng(seed ^ 0xABCDEFull);
  for (auto& b : net.biases)
    for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = uniform(rng, -0.3, 0.3);
  return net;
}

// Signs of every hidden pre-activation over the batch.
std::vector<bool> relu_pattern(const MlpD& net, const MlpD::Matrix& x) {
  std::vector<bool> out;
  MlpD::Matrix a = x;
  for (std::size_t l = 0; l + 1 < net.layers(); ++l) {
    MlpD::Matrix z = (net.weights[l] * a).colwise() + net.biases[l];
    for (Eigen::Index i = 0; i < z.size(); ++i) out.push_back(z(i) > 0);
    a = z.cwiseMax(0.0);
  }
  return out;
}

double max_relative_gradient_error(std::uint64_t seed) {
  auto net = random_net({4, 8, 8, 3}, seed);
  Rng rng(seed + 1);
  const Eigen::Index B = 5;
  MlpD::Matrix x(4, B), y(3, B);
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = uniform(rng, -2, 2);
  for (Eigen::Index c = 0; c < B; ++c) {
    double s = 0.0;
    for (Eigen::Index r = 0; r < 3; ++r) s += (y(r, c) = uniform(rng, 0, 1));
    y.col(c) /= s;
  }
  const auto g = mlp_gradients(net, x, y);
  const double eps = 1e-4;
  double worst = 0.0;
  auto check = [&](double& param, double analytic) {
    const double saved = param;
    const auto base = relu_pattern(net, x);
    param = saved + eps;
    const double up = mlp_loss(net, x, y);
    bool kink = relu_pattern(net, x) != base;
    param = saved - eps;
    const double down = mlp_loss(net, x, y);
    kink = kink || relu_pattern(net, x) != base;
    param = saved;
    // The difference quotient is meaningless across a relu kink.
    if (kink) return;
    const double numeric = (up - down) / (2 * eps);
    worst = std::max(worst, std::abs(analytic - numeric) / std::max(std::abs(analytic) + std::abs(numeric), 1e-6));
  };
  for (std::size_t l = 0; l < net.layers(); ++l) {
    for (Eigen::Index i = 0; i < net.weights[l].size(); ++i) check(net.weights[l](i), g.weights[l](i));
    for (Eigen::Index i = 0; i < net.biases[l].size(); ++i) check(net.biases[l](i), g.biases[l](i));
  }
  return worst;
}

}  // namespace

TEST_CASE("mlp: zero parameters give a uniform output", "[ranker][mlp]") {
  Mlp net({3, 5, 4}, FeatureMode::kRaw);
  const std::vector<float> x{1, -2, 3};
  const auto p = net.forward(x);
  REQUIRE(p.size() == 4);
  for (float v : p) REQUIRE(v == Approx(0.25f).margin(1e-7));
}

TEST_CASE("mlp: softmax ignores a constant logit shift", "[ranker][mlp]") {
  Rng rng(4);
  MlpD::Matrix a(6, 3);
  for (Eigen::Index i = 0; i < a.size(); ++i) a(i) = uniform(rng, -20, 20);
  MlpD::Matrix b = a.array() + 123.5;
  softmax_columns<double>(a);
  softmax_columns<double>(b);
  for (Eigen::Index i = 0; i < a.size(); ++i) REQUIRE(a(i) == Approx(b(i)).margin(1e-9));
  for (Eigen::Index c = 0; c < 3; ++c) REQUIRE(a.col(c).sum() == Approx(1.0).margin(1e-12));

  MlpD::Matrix big(2, 1);
  big << 1000.0, 0.0;
  softmax_columns<double>(big);
  REQUIRE(big(0) == Approx(1.0));
  REQUIRE(std::isfinite(big(1)));
}

TEST_CASE("mlp: forward on a 2-2-2-2 toy matches hand arithmetic", "[ranker][mlp]") {
  MlpD net({2, 2, 2, 2}, FeatureMode::kRaw);
  net.weights[0] << 1.0, -2.0, 0.5, 0.25;
  net.biases[0] << 0.1, -0.2;
  net.weights[1] << -1.0, 1.0, 2.0, 0.5;
  net.biases[1] << 0.3, -0.1;
  net.weights[2] << 0.7, -0.4, 0.2, 1.1;
  net.biases[2] << 0.05, -0.05;
  const std::vector<double> x{0.8, -0.3};

  const double h1a = std::max(0.0, 1.0 * 0.8 + -2.0 * -0.3 + 0.1);
  const double h1b = std::max(0.0, 0.5 * 0.8 + 0.25 * -0.3 - 0.2);
  const double h2a = std::max(0.0, -1.0 * h1a + 1.0 * h1b + 0.3);
  const double h2b = std::max(0.0, 2.0 * h1a + 0.5 * h1b - 0.1);
  const double za = 0.7 * h2a - 0.4 * h2b + 0.05;
  const double zb = 0.2 * h2a + 1.1 * h2b - 0.05;
  const double pa = std::exp(za) / (std::exp(za) + std::exp(zb));

  const auto p = net.forward(x);
  REQUIRE(p[0] == Approx(pa).margin(1e-9));
  REQUIRE(p[1] == Approx(1.0 - pa).margin(1e-9));
  REQUIRE_THROWS_AS(net.forward(std::vector<double>{1.0}), ParameterError);
}

TEST_CASE("mlp: non-finite activations raise a numeric error", "[ranker][mlp]") {
  Mlp net({2, 2}, FeatureMode::kRaw);
  net.weights[0](0, 0) = std::numeric_limits<float>::infinity();
  REQUIRE_THROWS_AS(net.forward(std::vector<float>{1.0f, 0.0f}), NumericError);
}

TEST_CASE("mlp: gradients match central differences", "[ranker][mlp]") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    INFO("seed " << seed);
    REQUIRE(max_relative_gradient_error(seed) < 1e-3);
  }
}

TEST_CASE("mlp: single repeated pair trains to its entropy floor", "[ranker][mlp]") {
  TrainingSet data;
  data.input_width = 3;
  data.output_width = 3;
  const std::vector<float> x{0.2f, -0.5f, 1.0f}, y{0.5f, 0.3f, 0.2f};
  for (int i = 0; i < 64; ++i) data.append(x, y);
  double entropy = 0.0;
  for (float v : y) entropy -= v * std::log(double(v));
  TrainParams p;
  p.hidden = {8};
  p.epochs = 300;
  p.batch = 16;
  p.learning_rate = 0.05;
  p.halve_every = 0;
  p.seed = 3;
  const auto r = mlp_train<float>(data, FeatureMode::kRaw, p);
  REQUIRE(r.epoch_loss.back() <= entropy * 1.1);
  const auto out = r.model.forward(x);
  for (std::size_t j = 0; j < 3; ++j) REQUIRE(out[j] == Approx(y[j]).margin(0.02));
}

TEST_CASE("mlp: zero epochs return the initialization", "[ranker][mlp]") {
  TrainingSet data;
  data.input_width = 2;
  data.output_width = 2;
  data.append(std::vector<float>{1, 2}, std::vector<float>{1, 0});
  TrainParams p;
  p.hidden = {4};
  p.epochs = 0;
  p.seed = 8;
  const auto r = mlp_train<float>(data, FeatureMode::kQcs, p);
  const auto init = Mlp::glorot({2, 4, 2}, FeatureMode::kQcs, derive_seed(8, "mlp.init"));
  for (std::size_t l = 0; l < init.layers(); ++l) {
    REQUIRE(r.model.weights[l] == init.weights[l]);
    REQUIRE(r.model.biases[l] == init.biases[l]);
  }
  REQUIRE(r.epoch_loss.empty());
}

TEST_CASE("mlp: full-batch loss does not rise with a small step", "[ranker][mlp]") {
  TrainingSet data;
  data.input_width = 4;
  data.output_width = 3;
  Rng rng(5);
  for (int i = 0; i < 60; ++i) {
    auto x = test::random_vector(4, rng);
    std::vector<float> y(3, 0.0f);
    y[i % 3] = 1.0f;
    x[i % 3] += 1.0f;
    data.append(x, y);
  }
  TrainParams p;
  p.hidden = {8, 8};
  p.epochs = 200;
  p.batch = 60;
  p.learning_rate = 1e-3;
  p.momentum = 0.0;
  p.halve_every = 0;
  p.standardize = false;
  p.seed = 1;
  const auto r = mlp_train<double>(data, FeatureMode::kRaw, p);
  for (std::size_t e = 1; e < r.epoch_loss.size(); ++e) REQUIRE(r.epoch_loss[e] <= r.epoch_loss[e - 1] + 1e-12);
  REQUIRE(r.epoch_loss.back() < r.epoch_loss.front());
}

TEST_CASE("mlp: training is deterministic and standardization folds exactly", "[ranker][mlp]") {
  TrainingSet data;
  data.input_width = 3;
  data.output_width = 2;
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    auto x = test::random_vector(3, rng, 10, 20);
    data.append(x, i % 2 ? std::vector<float>{1, 0} : std::vector<float>{0.3f, 0.7f});
  }
  TrainParams p;
  p.hidden = {6};
  p.epochs = 5;
  p.batch = 8;
  p.seed = 4;
  const auto a = mlp_train<float>(data, FeatureMode::kRaw, p);
  const auto b = mlp_train<float>(data, FeatureMode::kRaw, p);
  for (std::size_t l = 0; l < a.model.layers(); ++l) REQUIRE(a.model.weights[l] == b.model.weights[l]);
  REQUIRE(a.epoch_loss == b.epoch_loss);

  // Raw inputs through the folded model equal standardized inputs through an unfolded copy.
  const auto d = mlp_train<double>(data, FeatureMode::kRaw, p);
  std::vector<double> mean(3, 0.0), var(3, 0.0);
  for (std::size_t t = 0; t < 50; ++t)
    for (std::size_t j = 0; j < 3; ++j) mean[j] += data.inputs[t * 3 + j] / 50.0;
  for (std::size_t t = 0; t < 50; ++t)
    for (std::size_t j = 0; j < 3; ++j) var[j] += std::pow(data.inputs[t * 3 + j] - mean[j], 2) / 50.0;
  std::vector<double> x(data.inputs.begin(), data.inputs.begin() + 3);
  const auto folded = d.model.forward(x);
  auto unfolded = d.model;
  // Undo the fold on the first layer.
  for (Eigen::Index r = 0; r < unfolded.weights[0].rows(); ++r) {
    double shift = 0.0;
    for (Eigen::Index j = 0; j < 3; ++j) shift += unfolded.weights[0](r, j) * mean[j];
    unfolded.biases[0](r) += shift;
  }
  for (Eigen::Index j = 0; j < 3; ++j) unfolded.weights[0].col(j) *= std::sqrt(var[j]);
  std::vector<double> z(3);
  for (std::size_t j = 0; j < 3; ++j) z[j] = (x[j] - mean[j]) / std::sqrt(var[j]);
  const auto direct = unfolded.forward(z);
  for (std::size_t j = 0; j < 2; ++j) REQUIRE(folded[j] == Approx(direct[j]).margin(1e-9));
}

TEST_CASE("mlp: divergence names the epoch", "[ranker][mlp]") {
  TrainingSet data;
  data.input_width = 2;
  data.output_width = 2;
  for (int i = 0; i < 20; ++i) data.append(std::vector<float>{float(i), 1.0f}, std::vector<float>{1, 0});
  TrainParams p;
  p.hidden = {4};
  p.epochs = 50;
  p.batch = 4;
  p.learning_rate = 1e30;
  p.momentum = 0.0;
  p.seed = 1;
  try {
    mlp_train<float>(data, FeatureMode::kRaw, p);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    REQUIRE(std::string(e.what()).find("epoch") != std::string::npos);
  }
  TrainingSet empty;
  empty.input_width = 2;
  empty.output_width = 2;
  REQUIRE_THROWS_AS(mlp_train<float>(empty, FeatureMode::kRaw, p), ParameterError);
}

TEST_CASE("mlp: model file round trip and corruption", "[ranker][mlp]") {
  test::TempDir dir("mlp");
  const auto net = Mlp::glorot({5, 7, 3}, FeatureMode::kRawQcs, 4);
  save_mlp(net, dir / "m.mlp");
  const auto back = load_mlp(dir / "m.mlp");
  REQUIRE(back.layer_sizes() == net.layer_sizes());
  REQUIRE(back.mode() == FeatureMode::kRawQcs);
  for (std::size_t l = 0; l < net.layers(); ++l) {
    REQUIRE(back.weights[l] == net.weights[l]);
    REQUIRE(back.biases[l] == net.biases[l]);
  }
  save_mlp(back, dir / "n.mlp");
  REQUIRE(binio::read_file(dir / "m.mlp") == binio::read_file(dir / "n.mlp"));

  auto bytes = binio::read_file(dir / "m.mlp");
  bytes.push_back(0);
  test::write_bytes(dir / "trail.mlp", bytes);
  REQUIRE_THROWS_AS(load_mlp(dir / "trail.mlp"), FormatError);
  bytes.resize(bytes.size() - 9);
  test::write_bytes(dir / "short.mlp", bytes);
  REQUIRE_THROWS_AS(load_mlp(dir / "short.mlp"), FormatError);
  REQUIRE_THROWS_AS(parse_feature_mode("pixels"), ConfigError);
}

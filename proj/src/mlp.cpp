#include "pbr/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pbr/binio.hpp"
#include "pbr/random.hpp"

namespace pbr {

const char* to_string(FeatureMode mode) {
  switch (mode) {
    case FeatureMode::kRaw: return "raw";
    case FeatureMode::kQcs: return "qcs";
    case FeatureMode::kRawQcs: return "raw_qcs";
    case FeatureMode::kHierarchical: return "hier";
  }
  return "?";
}

FeatureMode parse_feature_mode(const std::string& text) {
  if (text == "raw") return FeatureMode::kRaw;
  if (text == "qcs") return FeatureMode::kQcs;
  if (text == "raw_qcs") return FeatureMode::kRawQcs;
  if (text == "hier") return FeatureMode::kHierarchical;
  throw ConfigError("unknown feature mode \"" + text + "\" (expected raw, qcs, raw_qcs)");
}

template <class Scalar>
BasicMlp<Scalar>::BasicMlp(std::vector<std::size_t> layer_sizes, FeatureMode mode)
    : sizes_(std::move(layer_sizes)), mode_(mode) {
  require(sizes_.size() >= 2, "mlp: need at least input and output layers");
  for (auto s : sizes_) require(s > 0, "mlp: layer sizes must be positive");
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    weights.push_back(Matrix::Zero(static_cast<Eigen::Index>(sizes_[l + 1]), static_cast<Eigen::Index>(sizes_[l])));
    biases.push_back(Vector::Zero(static_cast<Eigen::Index>(sizes_[l + 1])));
  }
}

template <class Scalar>
BasicMlp<Scalar> BasicMlp<Scalar>::glorot(std::vector<std::size_t> layer_sizes, FeatureMode mode,
                                          std::uint64_t seed) {
  BasicMlp model(std::move(layer_sizes), mode);
  Rng rng(seed);
  for (auto& w : model.weights) {
    const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    // Row-major fill order so the draw sequence matches the file layout.
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = static_cast<Scalar>(uniform(rng, -limit, limit));
  }
  return model;
}

template <class Scalar>
std::size_t BasicMlp<Scalar>::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
  }
  return n;
}

template <class Scalar>
void softmax_columns(Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& z) {
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    auto col = z.col(c);
    const Scalar mx = col.maxCoeff();
    col = (col.array() - mx).exp();
    col /= col.sum();
  }
}

template <class Scalar>
typename BasicMlp<Scalar>::Matrix BasicMlp<Scalar>::logits_batch(const Matrix& inputs) const {
  if (static_cast<std::size_t>(inputs.rows()) != input_width()) {
    throw ParameterError("mlp: input width " + std::to_string(inputs.rows()) + " != " +
                         std::to_string(input_width()));
  }
  Matrix a = inputs;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    Matrix z = weights[l] * a;
    z.colwise() += biases[l];
    if (l + 1 < weights.size()) z = z.cwiseMax(Scalar(0));
    a = std::move(z);
  }
  return a;
}

template <class Scalar>
typename BasicMlp<Scalar>::Matrix BasicMlp<Scalar>::forward_batch(const Matrix& inputs) const {
  Matrix z = logits_batch(inputs);
  if (!z.allFinite()) throw NumericError("mlp: non-finite activation in forward pass");
  softmax_columns<Scalar>(z);
  return z;
}

template <class Scalar>
std::vector<Scalar> BasicMlp<Scalar>::forward(std::span<const Scalar> x) const {
  Matrix in = Eigen::Map<const Matrix>(x.data(), static_cast<Eigen::Index>(x.size()), 1);
  const Matrix out = forward_batch(in);
  return std::vector<Scalar>(out.data(), out.data() + out.size());
}

template <class Scalar>
template <class Other>
BasicMlp<Other> BasicMlp<Scalar>::cast() const {
  BasicMlp<Other> out(sizes_, mode_);
  for (std::size_t l = 0; l < weights.size(); ++l) {
    out.weights[l] = weights[l].template cast<Other>();
    out.biases[l] = biases[l].template cast<Other>();
  }
  return out;
}

void TrainingSet::append(std::span<const float> x, std::span<const float> y) {
  require_same_dim(x.size(), input_width, "training input");
  require_same_dim(y.size(), output_width, "training target");
  inputs.insert(inputs.end(), x.begin(), x.end());
  targets.insert(targets.end(), y.begin(), y.end());
  ++rows;
}

template <class Scalar>
typename BasicMlp<Scalar>::Matrix as_columns(std::span<const float> row_major, std::size_t rows,
                                             std::size_t width) {
  require_same_dim(row_major.size(), rows * width, "as_columns");
  return Eigen::Map<const Eigen::MatrixXf>(row_major.data(), static_cast<Eigen::Index>(width),
                                           static_cast<Eigen::Index>(rows))
      .template cast<Scalar>()
      .eval();
}

namespace {

// Mean cross-entropy of softmax(logits) against targets; log-sum-exp form.
template <class Scalar>
double cross_entropy(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& logits,
                     const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& targets) {
  double total = 0.0;
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    const auto z = logits.col(c);
    const double mx = static_cast<double>(z.maxCoeff());
    double sum = 0.0;
    for (Eigen::Index r = 0; r < z.size(); ++r) sum += std::exp(static_cast<double>(z(r)) - mx);
    const double lse = mx + std::log(sum);
    for (Eigen::Index r = 0; r < z.size(); ++r) {
      const double y = static_cast<double>(targets(r, c));
      if (y != 0.0) total -= y * (static_cast<double>(z(r)) - lse);
    }
  }
  return total / static_cast<double>(logits.cols());
}

}  // namespace

template <class Scalar>
Gradients<Scalar> mlp_gradients(const BasicMlp<Scalar>& model,
                                const typename BasicMlp<Scalar>::Matrix& inputs,
                                const typename BasicMlp<Scalar>::Matrix& targets) {
  using Matrix = typename BasicMlp<Scalar>::Matrix;
  const std::size_t L = model.layers();
  require_same_dim(static_cast<std::size_t>(inputs.rows()), model.input_width(), "mlp_gradients input");
  require_same_dim(static_cast<std::size_t>(targets.rows()), model.output_width(), "mlp_gradients target");
  require_same_dim(static_cast<std::size_t>(inputs.cols()), static_cast<std::size_t>(targets.cols()),
                   "mlp_gradients batch");
  const Scalar inv_batch = Scalar(1) / static_cast<Scalar>(inputs.cols());

  // activations[0] = inputs, activations[l] = relu(z_l) for hidden layers.
  std::vector<Matrix> activations;
  activations.reserve(L);
  activations.push_back(inputs);
  Matrix z;
  for (std::size_t l = 0; l < L; ++l) {
    z.noalias() = model.weights[l] * activations.back();
    z.colwise() += model.biases[l];
    if (l + 1 < L) activations.push_back(z.cwiseMax(Scalar(0)));
  }
  Gradients<Scalar> g;
  g.loss = cross_entropy<Scalar>(z, targets);
  if (!std::isfinite(g.loss)) throw NumericError("mlp: non-finite loss");

  // dL/dz = p·Σy − y for each column; equals p − y when targets sum to one.
  Matrix delta = z;
  softmax_columns<Scalar>(delta);
  const auto mass = targets.colwise().sum();
  for (Eigen::Index c = 0; c < delta.cols(); ++c) delta.col(c) *= mass(c);
  delta -= targets;
  delta *= inv_batch;

  g.weights.resize(L);
  g.biases.resize(L);
  for (std::size_t l = L; l-- > 0;) {
    g.weights[l].noalias() = delta * activations[l].transpose();
    g.biases[l] = delta.rowwise().sum();
    if (l == 0) break;
    Matrix back = model.weights[l].transpose() * delta;
    // relu'(z) = 1 where the stored activation is positive.
    delta = back.cwiseProduct((activations[l].array() > Scalar(0)).template cast<Scalar>().matrix());
  }
  return g;
}

template <class Scalar>
double mlp_loss(const BasicMlp<Scalar>& model, const typename BasicMlp<Scalar>::Matrix& inputs,
                const typename BasicMlp<Scalar>::Matrix& targets) {
  return cross_entropy<Scalar>(model.logits_batch(inputs), targets);
}

template <class Scalar>
TrainResult<Scalar> mlp_train(const TrainingSet& data, FeatureMode mode, const TrainParams& params) {
  using Matrix = typename BasicMlp<Scalar>::Matrix;
  using Vector = typename BasicMlp<Scalar>::Vector;
  require(data.rows > 0, "mlp_train: empty training set");
  require(params.batch > 0, "mlp_train: batch must be positive");
  std::vector<std::size_t> sizes{data.input_width};
  sizes.insert(sizes.end(), params.hidden.begin(), params.hidden.end());
  sizes.push_back(data.output_width);

  TrainResult<Scalar> result;
  result.model = BasicMlp<Scalar>::glorot(sizes, mode, derive_seed(params.seed, "mlp.init"));
  auto& model = result.model;
  if (params.epochs == 0) return result;

  const std::size_t in = data.input_width;
  const std::size_t out = data.output_width;
  const std::size_t T = data.rows;

  // Input standardization statistics (population), identity when disabled.
  std::vector<double> mean(in, 0.0), inv_std(in, 1.0);
  if (params.standardize) {
    std::vector<double> sq(in, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t j = 0; j < in; ++j) {
        const double v = data.inputs[t * in + j];
        mean[j] += v;
        sq[j] += v * v;
      }
    }
    for (std::size_t j = 0; j < in; ++j) {
      mean[j] /= static_cast<double>(T);
      const double var = std::max(0.0, sq[j] / static_cast<double>(T) - mean[j] * mean[j]);
      inv_std[j] = var > 1e-12 ? 1.0 / std::sqrt(var) : 1.0;
    }
  }

  const std::size_t L = model.layers();
  std::vector<Matrix> vel_w(L), vel_b_m(L), adam_vw(L);
  std::vector<Vector> vel_b(L), adam_mb(L), adam_vb(L);
  for (std::size_t l = 0; l < L; ++l) {
    vel_w[l] = Matrix::Zero(model.weights[l].rows(), model.weights[l].cols());
    adam_vw[l] = vel_w[l];
    vel_b[l] = Vector::Zero(model.biases[l].size());
    adam_mb[l] = vel_b[l];
    adam_vb[l] = vel_b[l];
  }

  Rng shuffle_rng(derive_seed(params.seed, "mlp.shuffle"));
  std::vector<std::size_t> order(T);
  std::iota(order.begin(), order.end(), 0);
  Matrix xb, yb;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < params.epochs; ++epoch) {
    for (std::size_t i = T; i > 1; --i) std::swap(order[i - 1], order[uniform_index(shuffle_rng, i)]);
    double lr = params.learning_rate;
    if (params.halve_every > 0) lr *= std::pow(0.5, static_cast<double>(epoch / params.halve_every));

    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < T; begin += params.batch) {
      const std::size_t B = std::min(params.batch, T - begin);
      xb.resize(static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(B));
      yb.resize(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(B));
      for (std::size_t b = 0; b < B; ++b) {
        const std::size_t t = order[begin + b];
        for (std::size_t j = 0; j < in; ++j) {
          xb(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(b)) =
              static_cast<Scalar>((data.inputs[t * in + j] - mean[j]) * inv_std[j]);
        }
        for (std::size_t j = 0; j < out; ++j) {
          yb(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(b)) = static_cast<Scalar>(data.targets[t * out + j]);
        }
      }
      Gradients<Scalar> g;
      try {
        g = mlp_gradients(model, xb, yb);
      } catch (const NumericError&) {
        throw NumericError("mlp_train: non-finite loss at epoch " + std::to_string(epoch));
      }
      epoch_loss += g.loss * static_cast<double>(B);
      ++step;
      for (std::size_t l = 0; l < L; ++l) {
        if (params.optimizer == Optimizer::kSgd) {
          vel_w[l] = static_cast<Scalar>(params.momentum) * vel_w[l] - static_cast<Scalar>(lr) * g.weights[l];
          vel_b[l] = static_cast<Scalar>(params.momentum) * vel_b[l] - static_cast<Scalar>(lr) * g.biases[l];
          model.weights[l] += vel_w[l];
          model.biases[l] += vel_b[l];
        } else {
          constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-7;
          const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
          const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
          const auto s = static_cast<Scalar>(lr * std::sqrt(c2) / c1);
          vel_w[l] = Scalar(b1) * vel_w[l] + Scalar(1 - b1) * g.weights[l];
          adam_vw[l] = Scalar(b2) * adam_vw[l] + Scalar(1 - b2) * g.weights[l].cwiseAbs2();
          vel_b[l] = Scalar(b1) * vel_b[l] + Scalar(1 - b1) * g.biases[l];
          adam_vb[l] = Scalar(b2) * adam_vb[l] + Scalar(1 - b2) * g.biases[l].cwiseAbs2();
          model.weights[l].array() -= s * vel_w[l].array() / (adam_vw[l].array().sqrt() + Scalar(eps));
          model.biases[l].array() -= s * vel_b[l].array() / (adam_vb[l].array().sqrt() + Scalar(eps));
        }
      }
    }
    epoch_loss /= static_cast<double>(T);
    if (!std::isfinite(epoch_loss)) {
      throw NumericError("mlp_train: non-finite loss at epoch " + std::to_string(epoch));
    }
    result.epoch_loss.push_back(epoch_loss);
  }

  if (params.standardize) {
    // W·((x − μ)/σ) + b = (W/σ)·x + (b − (W/σ)·μ)
    auto& w = model.weights.front();
    auto& b = model.biases.front();
    for (Eigen::Index j = 0; j < w.cols(); ++j) w.col(j) *= static_cast<Scalar>(inv_std[static_cast<std::size_t>(j)]);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      double shift = 0.0;
      for (Eigen::Index j = 0; j < w.cols(); ++j) shift += static_cast<double>(w(r, j)) * mean[static_cast<std::size_t>(j)];
      b(r) = static_cast<Scalar>(static_cast<double>(b(r)) - shift);
    }
  }
  for (std::size_t l = 0; l < L; ++l) {
    if (!model.weights[l].allFinite() || !model.biases[l].allFinite()) {
      throw NumericError("mlp_train: non-finite parameters after training");
    }
  }
  return result;
}

void save_mlp(const Mlp& model, const std::filesystem::path& path) {
  binio::Writer out;
  out.magic("MLP1");
  const auto& sizes = model.layer_sizes();
  out.put(static_cast<std::int32_t>(sizes.size()));
  for (auto s : sizes) out.put(static_cast<std::int32_t>(s));
  out.put(static_cast<std::int32_t>(model.mode()));
  for (std::size_t l = 0; l < model.layers(); ++l) {
    const auto& w = model.weights[l];
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) out.put(w(r, c));
    for (Eigen::Index r = 0; r < model.biases[l].size(); ++r) out.put(model.biases[l](r));
  }
  out.save(path);
}

Mlp load_mlp(const std::filesystem::path& path) {
  binio::Reader in(path);
  in.expect_magic("MLP1");
  const auto count = in.get_count("layer count");
  if (count < 2 || count > 64) in.fail("invalid layer count");
  std::vector<std::size_t> sizes(count);
  for (auto& s : sizes) {
    s = in.get_count("layer size");
    if (s == 0) in.fail("zero layer size");
  }
  const auto mode = in.get<std::int32_t>();
  if (mode < 0 || mode > 3) in.fail("unknown feature mode");
  Mlp model(sizes, static_cast<FeatureMode>(mode));
  for (std::size_t l = 0; l < model.layers(); ++l) {
    auto& w = model.weights[l];
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = in.get<float>();
    for (Eigen::Index r = 0; r < model.biases[l].size(); ++r) model.biases[l](r) = in.get<float>();
    if (!w.allFinite() || !model.biases[l].allFinite()) in.fail("non-finite parameter");
  }
  if (!in.at_end()) in.fail("trailing bytes");
  return model;
}

template class BasicMlp<float>;
template class BasicMlp<double>;
template BasicMlp<double> BasicMlp<float>::cast<double>() const;
template BasicMlp<float> BasicMlp<double>::cast<float>() const;
template void softmax_columns<float>(Eigen::MatrixXf&);
template void softmax_columns<double>(Eigen::MatrixXd&);
template Gradients<float> mlp_gradients(const BasicMlp<float>&, const Eigen::MatrixXf&, const Eigen::MatrixXf&);
template Gradients<double> mlp_gradients(const BasicMlp<double>&, const Eigen::MatrixXd&, const Eigen::MatrixXd&);
template double mlp_loss(const BasicMlp<float>&, const Eigen::MatrixXf&, const Eigen::MatrixXf&);
template double mlp_loss(const BasicMlp<double>&, const Eigen::MatrixXd&, const Eigen::MatrixXd&);
template TrainResult<float> mlp_train<float>(const TrainingSet&, FeatureMode, const TrainParams&);
template TrainResult<double> mlp_train<double>(const TrainingSet&, FeatureMode, const TrainParams&);
template Eigen::MatrixXf as_columns<float>(std::span<const float>, std::size_t, std::size_t);
template Eigen::MatrixXd as_columns<double>(std::span<const float>, std::size_t, std::size_t);

}  // namespace pbr

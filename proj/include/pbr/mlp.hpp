#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pbr/common.hpp"

namespace pbr {

/// Which query-dependent feature a network consumes.
enum class FeatureMode : std::int32_t {
  kRaw = 0,           // index-space query
  kQcs = 1,           // query-centroid similarities
  kRawQcs = 2,        // concatenation of the two
  kHierarchical = 3,  // (u_m, q − u_m), second-level network
};

const char* to_string(FeatureMode mode);
FeatureMode parse_feature_mode(const std::string& text);

/// Fully-connected network: rectifier hidden layers, softmax output.
template <class Scalar>
class BasicMlp {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  BasicMlp() = default;
  /// All parameters zero.
  BasicMlp(std::vector<std::size_t> layer_sizes, FeatureMode mode);
  /// Uniform ±sqrt(6 / (fan_in + fan_out)) weights, zero biases.
  static BasicMlp glorot(std::vector<std::size_t> layer_sizes, FeatureMode mode, std::uint64_t seed);

  const std::vector<std::size_t>& layer_sizes() const { return sizes_; }
  std::size_t input_width() const { return sizes_.front(); }
  std::size_t output_width() const { return sizes_.back(); }
  std::size_t layers() const { return weights.size(); }
  std::size_t parameter_count() const;
  FeatureMode mode() const { return mode_; }

  /// Columns of `inputs` are samples; returns one probability column per sample.
  Matrix forward_batch(const Matrix& inputs) const;
  /// Pre-softmax activations of the last layer.
  Matrix logits_batch(const Matrix& inputs) const;
  std::vector<Scalar> forward(std::span<const Scalar> x) const;

  template <class Other>
  BasicMlp<Other> cast() const;

  std::vector<Matrix> weights;  // layer l: sizes[l+1] x sizes[l]
  std::vector<Vector> biases;

 private:
  template <class>
  friend class BasicMlp;

  std::vector<std::size_t> sizes_;
  FeatureMode mode_ = FeatureMode::kRaw;
};

using Mlp = BasicMlp<float>;

/// Column-wise softmax with max subtraction.
template <class Scalar>
void softmax_columns(Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& logits);

/// Row-major samples paired with target distributions.
struct TrainingSet {
  std::size_t input_width = 0;
  std::size_t output_width = 0;
  std::size_t rows = 0;
  std::vector<float> inputs;   // rows x input_width
  std::vector<float> targets;  // rows x output_width

  void append(std::span<const float> x, std::span<const float> y);
};

enum class Optimizer { kSgd, kAdam };

struct TrainParams {
  std::vector<std::size_t> hidden = {512, 512};
  std::size_t epochs = 300;
  std::size_t batch = 1000;
  Optimizer optimizer = Optimizer::kSgd;
  double learning_rate = 0.01;
  double momentum = 0.9;          // SGD only
  std::size_t halve_every = 100;  // epochs between step-size halvings; 0 disables
  bool standardize = true;        // z-score inputs, folded into the first layer afterwards
  std::uint64_t seed = 0;
};

template <class Scalar>
struct TrainResult {
  BasicMlp<Scalar> model;
  std::vector<double> epoch_loss;  // mean mini-batch cross-entropy per epoch
};

template <class Scalar>
struct Gradients {
  double loss = 0.0;  // mean cross-entropy over the batch
  std::vector<typename BasicMlp<Scalar>::Matrix> weights;
  std::vector<typename BasicMlp<Scalar>::Vector> biases;
};

/// Mean cross-entropy −Σ y log p and its gradients by backpropagation.
/// Columns of `inputs` and `targets` are samples.
template <class Scalar>
Gradients<Scalar> mlp_gradients(const BasicMlp<Scalar>& model,
                                const typename BasicMlp<Scalar>::Matrix& inputs,
                                const typename BasicMlp<Scalar>::Matrix& targets);

template <class Scalar>
double mlp_loss(const BasicMlp<Scalar>& model, const typename BasicMlp<Scalar>::Matrix& inputs,
                const typename BasicMlp<Scalar>::Matrix& targets);

/// Mini-batch training on cross-entropy; deterministic given params.seed.
/// Throws NumericError naming the epoch if the loss becomes non-finite.
template <class Scalar>
TrainResult<Scalar> mlp_train(const TrainingSet& data, FeatureMode mode, const TrainParams& params);

/// Training set columns as an Eigen matrix (samples as columns).
template <class Scalar>
typename BasicMlp<Scalar>::Matrix as_columns(std::span<const float> row_major, std::size_t rows,
                                             std::size_t width);

void save_mlp(const Mlp& model, const std::filesystem::path& path);
Mlp load_mlp(const std::filesystem::path& path);

}  // namespace pbr

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gstrs/numerics.hpp"

namespace gstrs {

/// f(x) = [l2_normalize](W * h(x) + b), where h(x) = tanh(W1 x + b1) when a
/// hidden layer is present and h(x) = x otherwise.
struct EmbeddingModel {
  Matrix hidden_weight;  // d_hidden x d_in, empty without a hidden layer
  Vector hidden_bias;
  Matrix weight;  // d_out x d_mid
  Vector bias;
  bool normalize = true;

  std::size_t input_dim() const { return has_hidden() ? hidden_weight.cols() : weight.cols(); }
  std::size_t hidden_dim() const { return hidden_weight.rows(); }
  std::size_t output_dim() const { return weight.rows(); }
  bool has_hidden() const { return hidden_weight.rows() > 0; }

  /// Uniform init in +-sqrt(6 / (fan_in + fan_out)), zero biases.
  static EmbeddingModel init(std::size_t d_in, std::size_t d_out, std::size_t d_hidden,
                             bool normalize, std::uint64_t seed);
  static EmbeddingModel identity(std::size_t dim, bool normalize);

  bool operator==(const EmbeddingModel&) const = default;
};

struct ClassifierHead {
  Matrix weight;  // n_classes x d_out
  Vector bias;

  std::size_t num_classes() const { return weight.rows(); }
  std::size_t input_dim() const { return weight.cols(); }

  static ClassifierHead init(std::size_t d_out, std::size_t n_classes, std::uint64_t seed);

  bool operator==(const ClassifierHead&) const = default;
};

/// Intermediate values of a forward pass, kept for backprop.
struct EmbeddingForward {
  Matrix hidden;      // n x d_hidden (tanh outputs), empty without hidden layer
  Matrix pre_norm;    // n x d_out, W h + b
  Vector norms;       // per row, only when normalized
  FeatureMatrix output;
};

/// `normalize` overrides the model flag when given.
EmbeddingForward embed_forward(const EmbeddingModel& model, const FeatureMatrix& features,
                               std::optional<bool> normalize = std::nullopt);
FeatureMatrix embed(const EmbeddingModel& model, const FeatureMatrix& features);

struct EmbeddingGrads {
  Matrix hidden_weight;
  Vector hidden_bias;
  Matrix weight;
  Vector bias;
};

EmbeddingGrads backprop_embedding(const EmbeddingModel& model, const FeatureMatrix& inputs,
                                  const Matrix& grad_outputs,
                                  std::optional<bool> normalize = std::nullopt);
EmbeddingGrads backprop_embedding(const EmbeddingModel& model, const FeatureMatrix& inputs,
                                  const EmbeddingForward& forward, const Matrix& grad_outputs);

Matrix logits(const ClassifierHead& head, const FeatureMatrix& embedded);

struct SgdConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t epochs = 50;
  std::uint64_t weight_seed = 0;
};

/// Classic momentum SGD: v <- m v - lr g; p <- p + v. Velocity is kept per
/// named parameter block.
class SgdOptimizer {
 public:
  SgdOptimizer(double learning_rate, double momentum);

  /// Throws if any gradient entry is non-finite, naming the block.
  void step(std::string_view block, std::span<double> params, std::span<const double> grads);

 private:
  double learning_rate_;
  double momentum_;
  std::map<std::string, Vector, std::less<>> velocity_;
};

// Checkpoint layout (little-endian):
//   "GSTRSMDL" | version u32 (=1) | flags u32 (bit 0: normalize)
//   | d_in u64 | d_hidden u64 | d_out u64 | n_classes u64
//   | [W1 (d_hidden x d_in) | b1 (d_hidden)]  -- only when d_hidden > 0
//   | W (d_out x d_mid) | b (d_out) | V (n_classes x d_out) | c0 (n_classes)
// All arrays f64 row-major; d_mid = d_hidden if d_hidden > 0 else d_in.
inline constexpr char kCheckpointMagic[8] = {'G', 'S', 'T', 'R', 'S', 'M', 'D', 'L'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  EmbeddingModel model;
  ClassifierHead head;

  bool operator==(const Checkpoint&) const = default;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace gstrs

#pragma once

// Encoder (pointwise embedding + sinusoidal positions + pre-norm transformer
// blocks), reconstruction head and classifier head, with hand-written
// backward passes.
//
// Batches are (batch * seq) x channels matrices: row b*seq + i holds time step
// i of window b.

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "maskrec/data.hpp"
#include "maskrec/tensor.hpp"

namespace maskrec::model {

struct ModelConfig {
  std::size_t d_model = 128;
  std::size_t num_blocks = 3;
  std::size_t num_heads = 4;
  std::size_t ff_dim = 256;
  double dropout = 0.1;
  std::size_t head_hidden1 = 256;
  std::size_t head_hidden2 = 128;
  double bn_momentum = 0.9;  // running = momentum * running + (1 - momentum) * batch
  std::size_t max_len = 0;   // 0: no limit on sequence length

  /// Throws ConfigError.
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class Group : std::uint8_t { kEncoder = 0, kReconstruction = 1, kClassifier = 2 };
inline constexpr std::size_t kGroupCount = 3;
std::string to_string(Group g);

struct ParamArray {
  std::string name;
  std::vector<std::size_t> shape;  // 1 or 2 dims; `value` is 1 x n for vectors
  Matrix value;
  Group group = Group::kEncoder;
  bool trainable = true;  // false for batch-norm running statistics

  friend bool operator==(const ParamArray&, const ParamArray&) = default;
};

class ModelParams {
 public:
  ModelConfig config;
  std::size_t channels = 0;
  int classes = 0;
  std::vector<ParamArray> arrays;
  std::array<bool, kGroupCount> frozen{};

  /// Rebuilds the name index; call after editing `arrays` directly.
  void reindex();
  bool contains(const std::string& name) const { return index_.contains(name); }
  std::size_t index_of(const std::string& name) const;
  const ParamArray& at(const std::string& name) const { return arrays[index_of(name)]; }
  ParamArray& at(const std::string& name) { return arrays[index_of(name)]; }

  bool is_frozen(Group g) const { return frozen[static_cast<std::size_t>(g)]; }
  void set_frozen(Group g, bool f) { frozen[static_cast<std::size_t>(g)] = f; }

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    return a.config == b.config && a.channels == b.channels && a.classes == b.classes &&
           a.arrays == b.arrays && a.frozen == b.frozen;
  }

 private:
  std::map<std::string, std::size_t> index_;
};

/// Scaled-uniform fan-in weights (U(-sqrt(3/fan_in), sqrt(3/fan_in))), zero
/// biases, unit norm scales, zero shifts, running mean 0 / variance 1.
ModelParams init_params(const ModelConfig& cfg, std::size_t channels, int classes,
                        std::uint64_t seed);

/// Re-draws every array of `group` as init_params would with `seed`.
void reinit_group(ModelParams& params, Group group, std::uint64_t seed);

/// FNV-1a over names, shapes and raw bytes of every array in `group`.
std::uint64_t content_hash(const ModelParams& params, Group group);

/// seq x d, PE(i, 2m) = sin(i / 10000^(2m/d)), PE(i, 2m+1) = cos(same angle).
Matrix positional_encoding(std::size_t seq, std::size_t d_model);

enum class Mode { kTrain, kEval };

struct ForwardOptions {
  Mode mode = Mode::kEval;
  std::uint64_t dropout_seed = 0;
};

/// Stacks windows into a (batch * seq) x channels matrix.
Matrix stack_windows(std::span<const data::SensorWindow> windows);

/// Pointwise embedding plus positional encoding (the encoder's first stage).
Matrix embed(const ModelParams& params, const Matrix& input, std::size_t batch);

/// (batch*seq) x channels -> (batch*seq) x d_model.
Matrix encode(const ModelParams& params, const Matrix& input, std::size_t batch,
              const ForwardOptions& opts = {});
/// (batch*seq) x d_model -> (batch*seq) x channels.
Matrix reconstruct(const ModelParams& params, const Matrix& features,
                   const ForwardOptions& opts = {});
/// Temporal mean: (batch*seq) x d -> batch x d.
Matrix pool_time(const Matrix& features, std::size_t batch);
/// (batch*seq) x d_model -> batch x classes logits.
Matrix classify(const ModelParams& params, const Matrix& features, std::size_t batch,
                const ForwardOptions& opts = {});
/// Classifier applied to already-pooled features (batch x d_model).
Matrix classify_pooled(const ModelParams& params, const Matrix& pooled,
                       const ForwardOptions& opts = {});

/// Batch statistics observed by a train-mode forward pass. Applying them
/// advances the batch-norm running averages.
struct BatchNormUpdate {
  struct Entry {
    std::size_t mean_index;
    std::size_t var_index;
    std::vector<double> batch_mean;
    std::vector<double> batch_var;  // unbiased
  };
  std::vector<Entry> entries;
};
void apply_batchnorm_update(ModelParams& params, const BatchNormUpdate& update);

/// Maps a head output to a scalar loss and writes d(loss)/d(output).
using OutputLoss = std::function<double(const Matrix& output, Matrix& d_output)>;

enum class Head { kReconstruction, kClassifier };

struct Gradients {
  std::vector<Matrix> arrays;  // aligned with ModelParams::arrays

  static Gradients zeros_like(const ModelParams& params);
  const Matrix& at(const ModelParams& params, const std::string& name) const {
    return arrays[params.index_of(name)];
  }
};

struct GradientResult {
  double loss = 0.0;
  Gradients grads;
  BatchNormUpdate batchnorm;
  std::uint64_t relu_pattern = 0;  // hash of every ReLU input sign
};

/// Loss and d(loss)/d(theta) through encoder and the chosen head. Frozen groups
/// and non-trainable arrays get zero gradients. Throws NumericError on a
/// non-finite loss and std::invalid_argument on shape mismatch.
GradientResult gradients(const ModelParams& params, const Matrix& input, std::size_t batch,
                         Head head, const OutputLoss& loss, const ForwardOptions& opts);

/// Classifier-head-only variant on pooled features; encoder gradients are zero.
GradientResult classifier_gradients(const ModelParams& params, const Matrix& pooled,
                                    const OutputLoss& loss, const ForwardOptions& opts);

/// Forward-only loss evaluation matching gradients(); used by finite-difference
/// checks. Has no side effects.
struct LossProbe {
  double loss = 0.0;
  std::uint64_t relu_pattern = 0;
};
LossProbe probe_loss(const ModelParams& params, const Matrix& input, std::size_t batch, Head head,
                     const OutputLoss& loss, const ForwardOptions& opts);

}  // namespace maskrec::model

#pragma once

// Adam optimizer, masked-reconstruction pretraining and downstream
// finetuning. Both loops are fixed-epoch, keep the last partial batch and are
// fully determined by (config, seed, data).

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "maskrec/data.hpp"
#include "maskrec/masking.hpp"
#include "maskrec/model.hpp"
#include "maskrec/objective.hpp"

namespace maskrec::train {

struct AdamState {
  std::vector<Matrix> m, v;
  std::uint64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_params(const model::ModelParams& params);
};

/// One bias-corrected Adam update of every trainable array outside frozen
/// groups; frozen groups are left bit-unchanged. Throws NumericError naming
/// the array if a gradient is not finite.
void adam_step(model::ModelParams& params, const model::Gradients& grads, AdamState& state,
               double lr);

/// Newline-delimited JSON records, one per training step or epoch.
class RunLog {
 public:
  void record(nlohmann::json entry) { lines_.push_back(entry.dump()); }
  const std::vector<std::string>& lines() const { return lines_; }
  void append(const RunLog& other) {
    lines_.insert(lines_.end(), other.lines_.begin(), other.lines_.end());
  }
  void write(const std::filesystem::path& path) const;

 private:
  std::vector<std::string> lines_;
};

struct PretrainConfig {
  std::size_t epochs = 150;
  std::size_t batch_size = 256;
  double lr = 1e-3;
  masking::StrategyConfig strategy;
  double alpha = 0.5;
  std::uint64_t seed = 0;
  model::ModelConfig model;
};

struct PretrainResult {
  model::ModelParams params;
  std::vector<objective::LossBreakdown> loss_curve;  // per-epoch, batch-size weighted
};

/// Throws DataError for an empty training set and NumericError (with epoch and
/// step) if the loss or a gradient becomes non-finite.
PretrainResult pretrain(const PretrainConfig& cfg, const data::WindowSet& train,
                        RunLog* log = nullptr);

struct FinetuneConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 1024;
  double lr = 1e-3;
  bool freeze_encoder = true;
  std::uint64_t seed = 0;
};

struct FinetuneResult {
  model::ModelParams params;
  std::vector<double> loss_curve;  // per-epoch mean cross-entropy
  std::vector<double> val_f1;      // per epoch, empty if no validation data
};

/// Trains a freshly initialized classifier head on `labeled`. With
/// freeze_encoder the encoder of `start` is held fixed and run in eval mode;
/// otherwise it is trained end to end (pass init_params output for the
/// supervised baseline). Throws ConfigError if channel or class counts do not
/// match the model.
FinetuneResult finetune(const model::ModelParams& start, const FinetuneConfig& cfg,
                        const data::WindowSet& labeled, const data::WindowSet& val,
                        RunLog* log = nullptr);

/// Pooled encoder features of every window (eval mode), batch x d_model.
Matrix pooled_features(const model::ModelParams& params, const data::WindowSet& ws,
                       std::size_t chunk = 64);

/// Eval-mode argmax predictions.
std::vector<int> predict(const model::ModelParams& params, const data::WindowSet& ws,
                         std::size_t chunk = 64);

std::vector<int> labels_of(const data::WindowSet& ws);

}  // namespace maskrec::train

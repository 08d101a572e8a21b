#pragma once

// Multi-run experimental protocols. Each runner repeats a pretrain -> frozen
// finetune -> test pipeline once per seed and aggregates macro F1 into a
// ProtocolReport whose `config` field is the exact snapshot that produced it.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "maskrec/data.hpp"
#include "maskrec/eval.hpp"
#include "maskrec/train.hpp"

namespace maskrec::protocols {

struct SweepSettings {
  std::vector<std::size_t> x_values{1, 2, 5, 10, 25, 50, 100};
  std::vector<double> alpha_values{0.1, 0.3, 0.5, 0.7, 0.9};
  std::vector<double> time_ratio_values{0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9};
  std::vector<std::size_t> channel_count_values{1, 2, 3, 4, 5};
  std::vector<std::size_t> anomaly_m_values{1, 3, 5};
  /// Labelled windows per class for the alpha / ratio / count / trick /
  /// anomaly sweeps.
  std::size_t labels_per_class = 10;
  double alpha_time_ratio = 0.17;
  std::size_t alpha_channel_count = 1;
  double trick_time_ratio = 0.10;
  std::size_t trick_channel_count = 2;
  std::size_t anomaly_channel_count = 3;
  bool semi_include_supervised = true;
};

struct ExperimentConfig {
  train::PretrainConfig pretrain;
  train::FinetuneConfig finetune;
  /// 0: finetune on the whole training split.
  std::size_t labels_per_class = 0;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::string dataset_tag = "synthetic";
  SweepSettings sweep;
};

/// Normalized train/val/test windows for run `run_index`.
using SplitProvider = std::function<data::Splits(std::size_t run_index)>;

enum class SweepAxis { kX, kAlpha, kTimeRatio, kChannelCount, kTrick, kAnomaly, kStrategy };
std::string to_string(SweepAxis axis);
/// Throws ConfigError listing the valid axes.
SweepAxis parse_sweep_axis(const std::string& name);

struct NamedStrategy {
  std::string row;
  masking::StrategyConfig strategy;
};

/// The five masking strategies at their comparison settings for K channels:
/// time 10%, span 15%, channel round(K/2), time-channel 10% + 2 channels,
/// span-channel 15% + 2 channels. Other fields come from `base`.
std::vector<NamedStrategy> comparison_strategies(const masking::StrategyConfig& base,
                                                 std::size_t channels);

struct PipelineResult {
  eval::F1Result test;
  model::ModelParams classifier;
};

eval::F1Result evaluate(const model::ModelParams& params, const data::WindowSet& test);

/// Labelled subset for a run: sample_per_class when x > 0, else all of train.
data::WindowSet labelled_subset(const data::WindowSet& train, std::size_t x, std::uint64_t seed);

/// Pretrain with `strategy`/`alpha`, finetune a frozen-encoder classifier and
/// score it on the test split.
PipelineResult run_self_supervised(const ExperimentConfig& cfg,
                                   const masking::StrategyConfig& strategy, double alpha,
                                   const data::Splits& splits, std::uint64_t seed,
                                   std::size_t labels_per_class, train::RunLog* log = nullptr);

/// Randomly initialized encoder trained end to end with the same head.
PipelineResult run_supervised(const ExperimentConfig& cfg, const data::Splits& splits,
                              std::uint64_t seed, std::size_t labels_per_class,
                              train::RunLog* log = nullptr);

/// Rows: the five strategies then "Supervised".
eval::ProtocolReport run_strategy_comparison(const ExperimentConfig& cfg,
                                             const SplitProvider& splits,
                                             train::RunLog* log = nullptr);

/// Rows "<strategy> x=<x>" per x (and "Supervised x=<x>" if enabled). One
/// pretraining per seed is shared by every x.
eval::ProtocolReport run_semi_supervised_sweep(const ExperimentConfig& cfg,
                                               const SplitProvider& splits,
                                               const std::vector<std::size_t>& x_values,
                                               train::RunLog* log = nullptr);

/// axis is kAlpha (time-channel masking), kTimeRatio (time masking) or
/// kChannelCount (channel masking). Rows "<axis>=<value>".
eval::ProtocolReport run_parameter_sweep(const ExperimentConfig& cfg, const SplitProvider& splits,
                                         SweepAxis axis, const std::vector<double>& values,
                                         train::RunLog* log = nullptr);

/// Scores two trained classifiers on test data with m zeroed channels, one
/// anomaly draw per seed. Rows "m=<m> Supervised", "m=<m> Self-supervised".
eval::ProtocolReport run_anomaly_eval(const model::ModelParams& self_supervised,
                                      const model::ModelParams& supervised,
                                      const data::WindowSet& test,
                                      const std::vector<std::size_t>& m_values,
                                      const std::vector<std::uint64_t>& seeds);

/// Trains both paradigms per seed (channel masking with
/// sweep.anomaly_channel_count) and evaluates them under anomalies.
eval::ProtocolReport run_anomaly_protocol(const ExperimentConfig& cfg, const SplitProvider& splits,
                                          const std::vector<std::size_t>& m_values,
                                          train::RunLog* log = nullptr);

/// Time-channel masking with different vs same mask positions per batch, on
/// shared seeds. Rows "Different", "Same".
eval::ProtocolReport run_trick_comparison(const ExperimentConfig& cfg, const SplitProvider& splits,
                                          train::RunLog* log = nullptr);

/// Dispatches an axis to its runner using the value grids in cfg.sweep.
eval::ProtocolReport run_sweep(const ExperimentConfig& cfg, const SplitProvider& splits,
                               SweepAxis axis, train::RunLog* log = nullptr);

}  // namespace maskrec::protocols

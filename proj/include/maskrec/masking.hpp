#pragma once

// Mask sampling and application. A mask zeroes every cell (i, j) with i in the
// time set T or j in the channel set C; there is no learned mask token.

#include <cstddef>
#include <string>
#include <vector>

#include "maskrec/data.hpp"
#include "maskrec/random.hpp"

namespace maskrec::masking {

struct MaskSpec {
  std::vector<std::size_t> time_indices;     // T, sorted, unique
  std::vector<std::size_t> channel_indices;  // C, sorted, unique

  bool masks_time(std::size_t i) const;
  bool masks_channel(std::size_t j) const;
  /// Canonical log form `T=[1,4];C=[0]`.
  std::string to_string() const;
  friend bool operator==(const MaskSpec&, const MaskSpec&) = default;
};

enum class StrategyKind { kTime, kSpan, kChannel, kTimeChannel, kSpanChannel };

std::string to_string(StrategyKind kind);
/// Accepts time|span|channel|time-channel|span-channel. Throws ConfigError.
StrategyKind parse_strategy_kind(const std::string& name);

bool masks_time_axis(StrategyKind kind);
bool masks_channel_axis(StrategyKind kind);

struct StrategyConfig {
  StrategyKind kind = StrategyKind::kChannel;
  double time_ratio = 0.10;       // time and time-channel
  double span_ratio = 0.15;       // span and span-channel
  double span_geometric_p = 0.2;  // span length ~ Geometric(p) on {1, 2, ...}
  std::size_t span_max_len = 10;
  std::size_t channel_count_masked = 3;
  bool same_position_per_batch = true;

  /// Throws ConfigError if ratios / p are out of range or count > channels.
  void validate(std::size_t channels) const;
  friend bool operator==(const StrategyConfig&, const StrategyConfig&) = default;
};

/// round-half-up(ratio * n), at least 1 when ratio > 0, at most n.
std::size_t masked_count(std::size_t n, double ratio);

std::vector<std::size_t> sample_time_mask(std::size_t n, double ratio, Rng& rng);

/// Union of non-overlapping contiguous spans with exactly masked_count(n, ratio)
/// indices in total.
std::vector<std::size_t> sample_span_mask(std::size_t n, double ratio, double p,
                                          std::size_t max_len, Rng& rng);

std::vector<std::size_t> sample_channel_mask(std::size_t k, std::size_t count, Rng& rng);

/// Samples one MaskSpec for an N x K window according to cfg.kind.
MaskSpec sample_mask(std::size_t n, std::size_t k, const StrategyConfig& cfg, Rng& rng);

Matrix apply_mask(const Matrix& values, const MaskSpec& spec);
data::SensorWindow apply_mask(const data::SensorWindow& w, const MaskSpec& spec);

struct MaskedBatch {
  std::vector<data::SensorWindow> windows;
  std::vector<MaskSpec> specs;
};

/// Masks every window in `batch`. With same_position_per_batch one spec is
/// drawn and shared, otherwise each window draws its own.
MaskedBatch batch_mask(const std::vector<data::SensorWindow>& batch, const StrategyConfig& cfg,
                       Rng& rng);

}  // namespace maskrec::masking

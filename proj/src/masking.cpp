#include "maskrec/masking.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "maskrec/error.hpp"

namespace maskrec::masking {

bool MaskSpec::masks_time(std::size_t i) const {
  return std::binary_search(time_indices.begin(), time_indices.end(), i);
}

bool MaskSpec::masks_channel(std::size_t j) const {
  return std::binary_search(channel_indices.begin(), channel_indices.end(), j);
}

std::string MaskSpec::to_string() const {
  std::ostringstream out;
  auto list = [&](const std::vector<std::size_t>& v) {
    out << '[';
    for (std::size_t i = 0; i < v.size(); ++i) out << (i ? "," : "") << v[i];
    out << ']';
  };
  out << "T=";
  list(time_indices);
  out << ";C=";
  list(channel_indices);
  return out.str();
}

std::string to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::kTime: return "time";
    case StrategyKind::kSpan: return "span";
    case StrategyKind::kChannel: return "channel";
    case StrategyKind::kTimeChannel: return "time-channel";
    case StrategyKind::kSpanChannel: return "span-channel";
  }
  return "unknown";
}

StrategyKind parse_strategy_kind(const std::string& name) {
  for (auto k : {StrategyKind::kTime, StrategyKind::kSpan, StrategyKind::kChannel,
                 StrategyKind::kTimeChannel, StrategyKind::kSpanChannel})
    if (to_string(k) == name) return k;
  throw ConfigError("unknown masking strategy '" + name +
                    "' (expected time|span|channel|time-channel|span-channel)");
}

bool masks_time_axis(StrategyKind kind) { return kind != StrategyKind::kChannel; }

bool masks_channel_axis(StrategyKind kind) {
  return kind == StrategyKind::kChannel || kind == StrategyKind::kTimeChannel ||
         kind == StrategyKind::kSpanChannel;
}

void StrategyConfig::validate(std::size_t channels) const {
  if (!(time_ratio >= 0.0 && time_ratio <= 1.0)) throw ConfigError("strategy.time_ratio must be in [0, 1]");
  if (!(span_ratio >= 0.0 && span_ratio <= 1.0)) throw ConfigError("strategy.span_ratio must be in [0, 1]");
  if (!(span_geometric_p > 0.0 && span_geometric_p < 1.0))
    throw ConfigError("strategy.span_geometric_p must be in (0, 1)");
  if (span_max_len < 1) throw ConfigError("strategy.span_max_len must be >= 1");
  if (masks_channel_axis(kind) && channel_count_masked > channels)
    throw ConfigError("strategy.channel_count (" + std::to_string(channel_count_masked) +
                      ") exceeds channel count " + std::to_string(channels));
}

std::size_t masked_count(std::size_t n, double ratio) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw std::invalid_argument("mask ratio must be in [0, 1]");
  if (ratio == 0.0 || n == 0) return 0;
  auto c = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 0.5));
  return std::clamp<std::size_t>(c, 1, n);
}

std::vector<std::size_t> sample_time_mask(std::size_t n, double ratio, Rng& rng) {
  return sample_without_replacement(n, masked_count(n, ratio), rng);
}

std::vector<std::size_t> sample_span_mask(std::size_t n, double ratio, double p,
                                          std::size_t max_len, Rng& rng) {
  const std::size_t target = masked_count(n, ratio);
  std::vector<char> taken(n, 0);
  std::size_t filled = 0;
  std::geometric_distribution<std::size_t> geom(p);
  constexpr int kMaxRetries = 32;
  while (filled < target) {
    const std::size_t len =
        std::min({geom(rng) + 1, std::max<std::size_t>(max_len, 1), target - filled});
    bool placed = false;
    for (int attempt = 0; attempt < kMaxRetries && !placed; ++attempt) {
      std::uniform_int_distribution<std::size_t> start_dist(0, n - len);
      const std::size_t start = start_dist(rng);
      if (std::none_of(taken.begin() + static_cast<std::ptrdiff_t>(start),
                       taken.begin() + static_cast<std::ptrdiff_t>(start + len),
                       [](char t) { return t != 0; })) {
        std::fill_n(taken.begin() + static_cast<std::ptrdiff_t>(start), len, 1);
        filled += len;
        placed = true;
      }
    }
    if (placed) continue;
    // Fallback: grow a run from a random free slot over adjacent free slots.
    std::vector<std::size_t> free_slots;
    for (std::size_t i = 0; i < n; ++i)
      if (!taken[i]) free_slots.push_back(i);
    std::uniform_int_distribution<std::size_t> pick(0, free_slots.size() - 1);
    std::size_t lo = free_slots[pick(rng)], hi = lo;
    taken[lo] = 1;
    std::size_t grown = 1;
    while (grown < len && hi + 1 < n && !taken[hi + 1]) taken[++hi] = 1, ++grown;
    while (grown < len && lo > 0 && !taken[lo - 1]) taken[--lo] = 1, ++grown;
    filled += grown;
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; ++i)
    if (taken[i]) out.push_back(i);
  return out;
}

std::vector<std::size_t> sample_channel_mask(std::size_t k, std::size_t count, Rng& rng) {
  if (count > k) throw std::invalid_argument("sample_channel_mask: count exceeds channel count");
  return sample_without_replacement(k, count, rng);
}

MaskSpec sample_mask(std::size_t n, std::size_t k, const StrategyConfig& cfg, Rng& rng) {
  MaskSpec spec;
  switch (cfg.kind) {
    case StrategyKind::kTime:
    case StrategyKind::kTimeChannel:
      spec.time_indices = sample_time_mask(n, cfg.time_ratio, rng);
      break;
    case StrategyKind::kSpan:
    case StrategyKind::kSpanChannel:
      spec.time_indices =
          sample_span_mask(n, cfg.span_ratio, cfg.span_geometric_p, cfg.span_max_len, rng);
      break;
    case StrategyKind::kChannel:
      break;
  }
  if (masks_channel_axis(cfg.kind))
    spec.channel_indices = sample_channel_mask(k, cfg.channel_count_masked, rng);
  return spec;
}

Matrix apply_mask(const Matrix& values, const MaskSpec& spec) {
  Matrix out = values;
  for (std::size_t i : spec.time_indices) {
    if (i >= out.rows()) throw std::invalid_argument("apply_mask: time index out of range");
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) = 0.0;
  }
  for (std::size_t j : spec.channel_indices) {
    if (j >= out.cols()) throw std::invalid_argument("apply_mask: channel index out of range");
    for (std::size_t i = 0; i < out.rows(); ++i) out(i, j) = 0.0;
  }
  return out;
}

data::SensorWindow apply_mask(const data::SensorWindow& w, const MaskSpec& spec) {
  return {apply_mask(w.values, spec), w.label, w.subject_id};
}

MaskedBatch batch_mask(const std::vector<data::SensorWindow>& batch, const StrategyConfig& cfg,
                       Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("batch_mask: empty batch");
  const std::size_t n = batch.front().length(), k = batch.front().channels();
  MaskedBatch out;
  out.windows.reserve(batch.size());
  out.specs.reserve(batch.size());
  MaskSpec shared;
  if (cfg.same_position_per_batch) shared = sample_mask(n, k, cfg, rng);
  for (const auto& w : batch) {
    if (w.length() != n || w.channels() != k)
      throw std::invalid_argument("batch_mask: heterogeneous window shapes");
    out.specs.push_back(cfg.same_position_per_batch ? shared : sample_mask(n, k, cfg, rng));
    out.windows.push_back(apply_mask(w, out.specs.back()));
  }
  return out;
}

}  // namespace maskrec::masking

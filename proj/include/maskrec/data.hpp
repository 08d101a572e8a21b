#pragma once

// Sensor recordings, sliding-window segmentation, subject-disjoint splits,
// normalization, labelled subsampling, a synthetic generator and channel
// fault injection. Every randomized function is a pure function of its
// inputs and seed.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "maskrec/tensor.hpp"

namespace maskrec::data {

/// One contiguous stream of samples from a single subject performing a
/// single activity. `samples` is length x channels.
struct RawRecording {
  std::string subject_id;
  int activity_label = 0;
  Matrix samples;
  double sample_rate_hz = 50.0;

  std::size_t length() const { return samples.rows(); }
  std::size_t channels() const { return samples.cols(); }
};

/// N x K slice of a recording (time x channel).
struct SensorWindow {
  Matrix values;
  int label = 0;
  std::string subject_id;

  std::size_t length() const { return values.rows(); }
  std::size_t channels() const { return values.cols(); }
  friend bool operator==(const SensorWindow&, const SensorWindow&) = default;
};

struct WindowSet {
  std::vector<SensorWindow> windows;
  int num_classes = 0;
  std::size_t channel_count = 0;

  std::size_t size() const { return windows.size(); }
  bool empty() const { return windows.empty(); }
  std::size_t window_length() const { return windows.empty() ? 0 : windows.front().length(); }
  std::vector<std::string> subjects() const;  // sorted, unique
  friend bool operator==(const WindowSet&, const WindowSet&) = default;
};

/// Builds a WindowSet and checks its invariants (shared N, K; labels in range;
/// finite values). Throws DataError.
WindowSet make_window_set(std::vector<SensorWindow> windows, int num_classes);

struct CsvSchema {
  std::string subject_column = "subject";
  std::string label_column = "label";
  /// Empty means "every column that is not subject or label", in header order.
  std::vector<std::string> channel_columns;
  double sample_rate_hz = 50.0;
};

/// One RawRecording per contiguous (subject, label) run of rows, in file order.
/// Throws IoError (unreadable), DataError (schema or parse errors; parse errors
/// name the 1-based data row).
std::vector<RawRecording> load_csv(const std::filesystem::path& path,
                                   const CsvSchema& schema = {});

/// Writes recordings as `subject,label,ch0..ch{K-1}`.
void write_csv(const std::filesystem::path& path, const std::vector<RawRecording>& recordings);

/// Stride between window starts: round(N * (1 - overlap)), at least 1.
std::size_t window_stride(std::size_t window_len, double overlap_fraction);

std::vector<SensorWindow> segment(const RawRecording& rec, std::size_t window_len,
                                  double overlap_fraction);

/// Segments every recording; num_classes defaults to 1 + the largest label.
WindowSet segment_all(const std::vector<RawRecording>& recs, std::size_t window_len,
                      double overlap_fraction, std::optional<int> num_classes = std::nullopt);

enum class SplitPolicy { kExplicitSubjects, kRandomSubjectFraction };

struct SplitSpec {
  SplitPolicy policy = SplitPolicy::kRandomSubjectFraction;
  std::vector<std::string> test_subjects;
  std::vector<std::string> val_subjects;
  double test_fraction = 0.2;
  double val_fraction = 0.2;
  std::uint64_t seed = 0;
};

struct Splits {
  WindowSet train, val, test;
};

/// Subject-disjoint partition. The fraction policy shuffles the sorted subject
/// list with `seed`, takes round(test_fraction * S) test subjects, then
/// round(val_fraction * remaining) validation subjects. Throws ConfigError on
/// unknown subjects or overlapping explicit lists.
Splits split_by_subject(const WindowSet& ws, const SplitSpec& spec);

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

/// Per-channel population mean / std over every entry of every train window.
/// A std below 1e-8 is replaced by 1.
ChannelStats channel_stats(const WindowSet& train);
WindowSet apply_normalization(const WindowSet& ws, const ChannelStats& stats);

/// z-scores `train` and each of `others` with statistics of `train`.
/// Returns the transformed train set followed by the transformed others.
std::vector<WindowSet> normalize(const WindowSet& train, const std::vector<WindowSet>& others);

/// For every class, min(x, available) windows without replacement. Output keeps
/// the original window order. Throws ProtocolError naming an empty class.
WindowSet sample_per_class(const WindowSet& train, std::size_t x, std::uint64_t seed);

struct SynthParams {
  std::size_t num_subjects = 4;
  int num_classes = 4;
  std::size_t length = 600;
  std::size_t channels = 6;
  std::uint64_t seed = 0;
  double noise_std = 0.1;
  double sample_rate_hz = 50.0;
};

/// Latent parameters the generator draws from `seed`. Channel j of class c for
/// subject s at sample t is
///   scale[s] * amplitude[c][j] * sin(2*pi*frequency[c]*(t + offset[s])/fs + phase[c][j])
/// plus N(0, noise_std^2) noise.
struct SynthLatents {
  std::vector<double> frequency_hz;                // per class
  std::vector<std::vector<double>> amplitude;      // [class][channel]
  std::vector<std::vector<double>> phase;          // [class][channel]
  std::vector<double> subject_scale;               // per subject
  std::vector<double> subject_offset;              // per subject, in samples
};

SynthLatents synth_latents(const SynthParams& params);

/// One recording per (subject, class), subject-major. Subject ids are "1".."S".
/// Throws std::invalid_argument unless num_classes >= 2 and channels >= 2.
std::vector<RawRecording> synth_generate(const SynthParams& params);

/// Chooses m channels uniformly without replacement (one draw for the whole
/// set) and zeroes them in every window. Throws std::invalid_argument if m > K.
WindowSet inject_channel_anomaly(const WindowSet& ws, std::size_t m, std::uint64_t seed);

/// The channels inject_channel_anomaly would zero for (K, m, seed).
std::vector<std::size_t> anomaly_channels(std::size_t channels, std::size_t m, std::uint64_t seed);

}  // namespace maskrec::data

#pragma once

// Classification metrics, confidence intervals and the report files written
// by every protocol (JSON for archival, flat CSV for plotting).

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace maskrec::eval {

struct F1Result {
  double mean_f1 = 0.0;
  std::vector<double> per_class;  // 0 for classes that are not scored
  std::vector<bool> scored;       // false when absent from both preds and labels
};

/// Macro F1 over the classes present in labels or preds. F1_c is 0 when
/// precision + recall is 0. Throws std::invalid_argument on length mismatch
/// or out-of-range classes.
F1Result macro_f1(std::span<const int> preds, std::span<const int> labels, int classes);

/// Two-sided Student-t quantile, e.g. t(0.975, 4) = 2.776.
double student_t_quantile(double p, double dof);

struct Interval {
  double mean = 0.0;
  double halfwidth = 0.0;
};

/// mean +- t_{0.975, n-1} * s / sqrt(n) with the sample standard deviation.
/// Throws std::invalid_argument when fewer than two scores are given.
Interval confidence_interval(std::span<const double> scores);

struct MetricsReport {
  std::string row;          // e.g. "Channel Masking", "x=10", "m=3 Supervised"
  double axis_value = 0.0;  // numeric sweep coordinate, 0 when not applicable
  std::vector<std::uint64_t> seeds;
  std::vector<double> per_run_f1;
  double mean_f1 = 0.0;
  double ci95_halfwidth = 0.0;  // 0 with fewer than two runs
  std::vector<double> per_class_f1;  // averaged over runs

  /// Fills mean_f1 / ci95_halfwidth / per_class_f1 from per-run results.
  static MetricsReport from_runs(std::string row, double axis_value,
                                 std::vector<std::uint64_t> seeds, std::vector<F1Result> runs);
  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

struct ProtocolReport {
  std::string protocol;     // strategy_comparison, semi_supervised, ...
  std::string dataset_tag;
  nlohmann::json config;    // exact configuration snapshot
  std::vector<MetricsReport> rows;

  std::vector<std::string> row_names() const;
  friend bool operator==(const ProtocolReport&, const ProtocolReport&) = default;
};

nlohmann::json to_json(const MetricsReport& r);
MetricsReport metrics_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ProtocolReport& r);
/// Throws FormatError on missing fields.
ProtocolReport report_from_json(const nlohmann::json& j);

/// Pretty-printed JSON; doubles round-trip exactly.
void write_report_json(const ProtocolReport& r, const std::filesystem::path& path);
ProtocolReport read_report_json(const std::filesystem::path& path);
/// One line per (row, run): protocol,dataset,row,axis_value,seed,f1,mean_f1,ci95_halfwidth
void write_report_csv(const ProtocolReport& r, const std::filesystem::path& path);

}  // namespace maskrec::eval

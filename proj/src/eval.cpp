#include "maskrec/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <boost/math/distributions/students_t.hpp>

#include "maskrec/error.hpp"

namespace maskrec::eval {

F1Result macro_f1(std::span<const int> preds, std::span<const int> labels, int classes) {
  if (preds.size() != labels.size()) throw std::invalid_argument("macro_f1: length mismatch");
  if (classes < 1) throw std::invalid_argument("macro_f1: need at least one class");
  const auto a = static_cast<std::size_t>(classes);
  std::vector<std::size_t> tp(a, 0), fp(a, 0), fn(a, 0), seen(a, 0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const int p = preds[i], y = labels[i];
    if (p < 0 || p >= classes || y < 0 || y >= classes)
      throw std::invalid_argument("macro_f1: class id out of range");
    const auto pi = static_cast<std::size_t>(p), yi = static_cast<std::size_t>(y);
    ++seen[pi];
    ++seen[yi];
    if (p == y) {
      ++tp[pi];
    } else {
      ++fp[pi];
      ++fn[yi];
    }
  }
  F1Result r;
  r.per_class.assign(a, 0.0);
  r.scored.assign(a, false);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < a; ++c) {
    if (seen[c] == 0) continue;
    r.scored[c] = true;
    const double denom = 2.0 * static_cast<double>(tp[c]) + static_cast<double>(fp[c] + fn[c]);
    // 2PR/(P+R) == 2TP/(2TP+FP+FN); zero when TP == 0.
    r.per_class[c] = tp[c] == 0 ? 0.0 : 2.0 * static_cast<double>(tp[c]) / denom;
    sum += r.per_class[c];
    ++n;
  }
  r.mean_f1 = n == 0 ? 0.0 : sum / static_cast<double>(n);
  return r;
}

double student_t_quantile(double p, double dof) {
  boost::math::students_t dist(dof);
  return boost::math::quantile(dist, p);
}

Interval confidence_interval(std::span<const double> scores) {
  const std::size_t n = scores.size();
  if (n < 2) throw std::invalid_argument("confidence_interval: need at least two scores");
  const double mean = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(n);
  // The rounded mean of equal scores can differ from them in the last bit.
  if (std::all_of(scores.begin(), scores.end(), [&](double s) { return s == scores[0]; }))
    return {scores[0], 0.0};
  double ss = 0.0;
  for (double s : scores) ss += (s - mean) * (s - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  const double t = student_t_quantile(0.975, static_cast<double>(n - 1));
  return {mean, t * sd / std::sqrt(static_cast<double>(n))};
}

MetricsReport MetricsReport::from_runs(std::string row, double axis_value,
                                       std::vector<std::uint64_t> seeds,
                                       std::vector<F1Result> runs) {
  MetricsReport r;
  r.row = std::move(row);
  r.axis_value = axis_value;
  r.seeds = std::move(seeds);
  for (const auto& run : runs) r.per_run_f1.push_back(run.mean_f1);
  if (!runs.empty()) {
    r.mean_f1 = std::accumulate(r.per_run_f1.begin(), r.per_run_f1.end(), 0.0) /
                static_cast<double>(runs.size());
    r.per_class_f1.assign(runs.front().per_class.size(), 0.0);
    for (const auto& run : runs)
      for (std::size_t c = 0; c < run.per_class.size() && c < r.per_class_f1.size(); ++c)
        r.per_class_f1[c] += run.per_class[c] / static_cast<double>(runs.size());
  }
  if (runs.size() >= 2) r.ci95_halfwidth = confidence_interval(r.per_run_f1).halfwidth;
  return r;
}

std::vector<std::string> ProtocolReport::row_names() const {
  std::vector<std::string> out;
  for (const auto& r : rows) out.push_back(r.row);
  return out;
}

nlohmann::json to_json(const MetricsReport& r) {
  return {{"row", r.row},
          {"axis_value", r.axis_value},
          {"seeds", r.seeds},
          {"per_run_f1", r.per_run_f1},
          {"mean_f1", r.mean_f1},
          {"ci95_halfwidth", r.ci95_halfwidth},
          {"per_class_f1", r.per_class_f1}};
}

MetricsReport metrics_from_json(const nlohmann::json& j) {
  try {
    MetricsReport r;
    r.row = j.at("row").get<std::string>();
    r.axis_value = j.at("axis_value").get<double>();
    r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    r.per_run_f1 = j.at("per_run_f1").get<std::vector<double>>();
    r.mean_f1 = j.at("mean_f1").get<double>();
    r.ci95_halfwidth = j.at("ci95_halfwidth").get<double>();
    r.per_class_f1 = j.at("per_class_f1").get<std::vector<double>>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed metrics report: ") + e.what());
  }
}

nlohmann::json to_json(const ProtocolReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) rows.push_back(to_json(row));
  return {{"protocol", r.protocol}, {"dataset", r.dataset_tag}, {"config", r.config}, {"rows", rows}};
}

ProtocolReport report_from_json(const nlohmann::json& j) {
  try {
    ProtocolReport r;
    r.protocol = j.at("protocol").get<std::string>();
    r.dataset_tag = j.at("dataset").get<std::string>();
    r.config = j.at("config");
    for (const auto& row : j.at("rows")) r.rows.push_back(metrics_from_json(row));
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed protocol report: ") + e.what());
  }
}

void write_report_json(const ProtocolReport& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json(r).dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

ProtocolReport read_report_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return report_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("report is not valid JSON: ") + e.what());
  }
}

namespace {

std::string exact(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, static_cast<std::size_t>(p - buf)};
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

}  // namespace

void write_report_csv(const ProtocolReport& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "protocol,dataset,row,axis_value,seed,f1,mean_f1,ci95_halfwidth\n";
  for (const auto& row : r.rows)
    for (std::size_t i = 0; i < row.per_run_f1.size(); ++i)
      out << csv_field(r.protocol) << ',' << csv_field(r.dataset_tag) << ',' << csv_field(row.row)
          << ',' << exact(row.axis_value) << ',' << (i < row.seeds.size() ? row.seeds[i] : 0)
          << ',' << exact(row.per_run_f1[i]) << ',' << exact(row.mean_f1) << ','
          << exact(row.ci95_halfwidth) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace maskrec::eval

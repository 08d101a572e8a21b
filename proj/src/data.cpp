#include "maskrec/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>

#include "maskrec/error.hpp"
#include "maskrec/random.hpp"

namespace maskrec::data {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    std::size_t b = 0;
    while (b < cell.size() && cell[b] == ' ') ++b;
    out.push_back(cell.substr(b));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

bool parse_double(const std::string& s, double& out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last && std::isfinite(out);
}

bool parse_int(const std::string& s, int& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

std::size_t find_column(const std::vector<std::string>& header, const std::string& name) {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw DataError("schema error: missing column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

}  // namespace

std::vector<std::string> WindowSet::subjects() const {
  std::set<std::string> s;
  for (const auto& w : windows) s.insert(w.subject_id);
  return {s.begin(), s.end()};
}

WindowSet make_window_set(std::vector<SensorWindow> windows, int num_classes) {
  WindowSet ws;
  ws.num_classes = num_classes;
  if (!windows.empty()) {
    const std::size_t n = windows.front().length(), k = windows.front().channels();
    if (n < 2 || k < 1) throw DataError("window must have N >= 2 and K >= 1");
    for (const auto& w : windows) {
      if (w.length() != n || w.channels() != k)
        throw DataError("windows must share length and channel count");
      if (w.label < 0 || w.label >= num_classes)
        throw DataError("window label " + std::to_string(w.label) + " outside [0, " +
                        std::to_string(num_classes) + ")");
      for (double v : w.values.values())
        if (!std::isfinite(v)) throw DataError("window contains non-finite value");
    }
    ws.channel_count = k;
  }
  ws.windows = std::move(windows);
  return ws;
}

std::vector<RawRecording> load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("schema error: empty file " + path.string());
  const auto header = split_csv_line(line);
  const std::size_t subj_col = find_column(header, schema.subject_column);
  const std::size_t label_col = find_column(header, schema.label_column);
  std::vector<std::size_t> ch_cols;
  if (schema.channel_columns.empty()) {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (i != subj_col && i != label_col) ch_cols.push_back(i);
  } else {
    for (const auto& c : schema.channel_columns) ch_cols.push_back(find_column(header, c));
  }
  if (ch_cols.empty()) throw DataError("schema error: no channel columns");

  std::vector<RawRecording> out;
  std::vector<double> current;  // flattened samples of the open run
  auto flush = [&] {
    if (out.empty() || current.empty()) return;
    auto& rec = out.back();
    const std::size_t k = ch_cols.size();
    rec.samples = Matrix(current.size() / k, k);
    std::copy(current.begin(), current.end(), rec.samples.data());
    current.clear();
  };

  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() < header.size())
      throw DataError("parse error at row " + std::to_string(row) + ": expected " +
                      std::to_string(header.size()) + " columns, got " +
                      std::to_string(cells.size()));
    int label = 0;
    if (!parse_int(cells[label_col], label) || label < 0)
      throw DataError("parse error at row " + std::to_string(row) + ": bad label '" +
                      cells[label_col] + "'");
    const std::string& subject = cells[subj_col];
    if (out.empty() || out.back().subject_id != subject || out.back().activity_label != label) {
      flush();
      RawRecording rec;
      rec.subject_id = subject;
      rec.activity_label = label;
      rec.sample_rate_hz = schema.sample_rate_hz;
      out.push_back(std::move(rec));
    }
    for (std::size_t c : ch_cols) {
      double v = 0.0;
      if (!parse_double(cells[c], v))
        throw DataError("parse error at row " + std::to_string(row) + ", column '" + header[c] +
                        "': not a finite number '" + cells[c] + "'");
      current.push_back(v);
    }
  }
  flush();
  return out;
}

void write_csv(const std::filesystem::path& path, const std::vector<RawRecording>& recordings) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  const std::size_t k = recordings.empty() ? 0 : recordings.front().channels();
  out << "subject,label";
  for (std::size_t j = 0; j < k; ++j) out << ",ch" << j;
  out << '\n';
  char buf[32];
  for (const auto& rec : recordings) {
    if (rec.channels() != k) throw DataError("recordings disagree on channel count");
    for (std::size_t i = 0; i < rec.length(); ++i) {
      out << rec.subject_id << ',' << rec.activity_label;
      for (std::size_t j = 0; j < k; ++j) {
        auto [p, ec] = std::to_chars(buf, buf + sizeof buf, rec.samples(i, j));
        out << ',' << std::string_view(buf, static_cast<std::size_t>(p - buf));
      }
      out << '\n';
    }
  }
  if (!out) throw IoError("write failed for " + path.string());
}

std::size_t window_stride(std::size_t window_len, double overlap_fraction) {
  const double s = std::round(static_cast<double>(window_len) * (1.0 - overlap_fraction));
  return std::max<std::size_t>(1, static_cast<std::size_t>(s));
}

std::vector<SensorWindow> segment(const RawRecording& rec, std::size_t window_len,
                                  double overlap_fraction) {
  if (window_len < 2) throw std::invalid_argument("segment: window_len must be >= 2");
  if (!(overlap_fraction >= 0.0 && overlap_fraction < 1.0))
    throw std::invalid_argument("segment: overlap_fraction must be in [0, 1)");
  std::vector<SensorWindow> out;
  const std::size_t len = rec.length(), k = rec.channels();
  if (len < window_len) return out;
  const std::size_t stride = window_stride(window_len, overlap_fraction);
  for (std::size_t start = 0; start + window_len <= len; start += stride) {
    SensorWindow w;
    w.values = Matrix(window_len, k);
    std::copy_n(rec.samples.data() + start * k, window_len * k, w.values.data());
    w.label = rec.activity_label;
    w.subject_id = rec.subject_id;
    out.push_back(std::move(w));
  }
  return out;
}

WindowSet segment_all(const std::vector<RawRecording>& recs, std::size_t window_len,
                      double overlap_fraction, std::optional<int> num_classes) {
  std::vector<SensorWindow> all;
  int max_label = -1;
  for (const auto& r : recs) {
    max_label = std::max(max_label, r.activity_label);
    auto w = segment(r, window_len, overlap_fraction);
    std::move(w.begin(), w.end(), std::back_inserter(all));
  }
  return make_window_set(std::move(all), num_classes.value_or(max_label + 1));
}

namespace {

WindowSet filter_subjects(const WindowSet& ws, const std::set<std::string>& keep) {
  WindowSet out;
  out.num_classes = ws.num_classes;
  out.channel_count = ws.channel_count;
  for (const auto& w : ws.windows)
    if (keep.contains(w.subject_id)) out.windows.push_back(w);
  return out;
}

}  // namespace

Splits split_by_subject(const WindowSet& ws, const SplitSpec& spec) {
  const auto all = ws.subjects();
  std::set<std::string> test, val;
  if (spec.policy == SplitPolicy::kExplicitSubjects) {
    const std::set<std::string> known(all.begin(), all.end());
    for (const auto& s : spec.test_subjects) {
      if (!known.contains(s)) throw ConfigError("split: unknown test subject '" + s + "'");
      test.insert(s);
    }
    for (const auto& s : spec.val_subjects) {
      if (!known.contains(s)) throw ConfigError("split: unknown validation subject '" + s + "'");
      if (test.contains(s)) throw ConfigError("split: subject '" + s + "' is in test and val");
      val.insert(s);
    }
  } else {
    if (!(spec.test_fraction >= 0 && spec.test_fraction < 1 && spec.val_fraction >= 0 &&
          spec.val_fraction < 1))
      throw ConfigError("split: fractions must be in [0, 1)");
    std::vector<std::string> order = all;
    Rng rng = make_rng(spec.seed, 0x5eed);
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_test = static_cast<std::size_t>(std::round(spec.test_fraction * order.size()));
    const std::size_t rest = order.size() - n_test;
    const auto n_val = static_cast<std::size_t>(std::round(spec.val_fraction * rest));
    for (std::size_t i = 0; i < n_test; ++i) test.insert(order[i]);
    for (std::size_t i = n_test; i < n_test + n_val; ++i) val.insert(order[i]);
  }
  std::set<std::string> train;
  for (const auto& s : all)
    if (!test.contains(s) && !val.contains(s)) train.insert(s);
  return {filter_subjects(ws, train), filter_subjects(ws, val), filter_subjects(ws, test)};
}

ChannelStats channel_stats(const WindowSet& train) {
  if (train.empty()) throw DataError("normalize: empty training set");
  const std::size_t k = train.channel_count;
  std::vector<double> sum(k, 0.0), sq(k, 0.0);
  std::size_t count = 0;
  for (const auto& w : train.windows) {
    for (std::size_t i = 0; i < w.length(); ++i)
      for (std::size_t j = 0; j < k; ++j) sum[j] += w.values(i, j);
    count += w.length();
  }
  ChannelStats st{std::vector<double>(k), std::vector<double>(k)};
  for (std::size_t j = 0; j < k; ++j) st.mean[j] = sum[j] / static_cast<double>(count);
  for (const auto& w : train.windows)
    for (std::size_t i = 0; i < w.length(); ++i)
      for (std::size_t j = 0; j < k; ++j) {
        const double d = w.values(i, j) - st.mean[j];
        sq[j] += d * d;
      }
  for (std::size_t j = 0; j < k; ++j) {
    const double sd = std::sqrt(sq[j] / static_cast<double>(count));
    st.stddev[j] = sd < 1e-8 ? 1.0 : sd;
  }
  return st;
}

WindowSet apply_normalization(const WindowSet& ws, const ChannelStats& stats) {
  WindowSet out = ws;
  for (auto& w : out.windows) {
    if (w.channels() != stats.mean.size()) throw DataError("normalize: channel count mismatch");
    for (std::size_t i = 0; i < w.length(); ++i)
      for (std::size_t j = 0; j < w.channels(); ++j)
        w.values(i, j) = (w.values(i, j) - stats.mean[j]) / stats.stddev[j];
  }
  return out;
}

std::vector<WindowSet> normalize(const WindowSet& train, const std::vector<WindowSet>& others) {
  const auto stats = channel_stats(train);
  std::vector<WindowSet> out;
  out.push_back(apply_normalization(train, stats));
  for (const auto& o : others) out.push_back(apply_normalization(o, stats));
  return out;
}

WindowSet sample_per_class(const WindowSet& train, std::size_t x, std::uint64_t seed) {
  if (x == 0) throw std::invalid_argument("sample_per_class: x must be positive");
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(train.num_classes));
  for (std::size_t i = 0; i < train.size(); ++i)
    by_class[static_cast<std::size_t>(train.windows[i].label)].push_back(i);
  Rng rng = make_rng(seed, 0xc1a55);
  std::vector<std::size_t> chosen;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    const auto& idx = by_class[c];
    if (idx.empty())
      throw ProtocolError("sample_per_class: class " + std::to_string(c) + " has no windows");
    for (std::size_t pick : sample_without_replacement(idx.size(), std::min(x, idx.size()), rng))
      chosen.push_back(idx[pick]);
  }
  std::sort(chosen.begin(), chosen.end());
  WindowSet out;
  out.num_classes = train.num_classes;
  out.channel_count = train.channel_count;
  for (std::size_t i : chosen) out.windows.push_back(train.windows[i]);
  return out;
}

SynthLatents synth_latents(const SynthParams& p) {
  Rng rng = make_rng(p.seed, 0x5717);
  std::uniform_real_distribution<double> amp(0.5, 1.5);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> scale(0.8, 1.2);
  std::uniform_real_distribution<double> offset(0.0, p.sample_rate_hz);
  SynthLatents lat;
  const auto a = static_cast<std::size_t>(p.num_classes);
  // Class frequencies sit on a grid well below Nyquist so classes separate.
  const double nyquist = p.sample_rate_hz / 2.0;
  for (std::size_t c = 0; c < a; ++c)
    lat.frequency_hz.push_back(nyquist * 0.4 * (static_cast<double>(c) + 1.0) / static_cast<double>(a));
  lat.amplitude.assign(a, std::vector<double>(p.channels));
  lat.phase.assign(a, std::vector<double>(p.channels));
  for (std::size_t c = 0; c < a; ++c)
    for (std::size_t j = 0; j < p.channels; ++j) {
      lat.amplitude[c][j] = amp(rng);
      lat.phase[c][j] = phase(rng);
    }
  for (std::size_t s = 0; s < p.num_subjects; ++s) {
    lat.subject_scale.push_back(scale(rng));
    lat.subject_offset.push_back(offset(rng));
  }
  return lat;
}

std::vector<RawRecording> synth_generate(const SynthParams& p) {
  if (p.num_classes < 2) throw std::invalid_argument("synth_generate: need at least 2 classes");
  if (p.channels < 2) throw std::invalid_argument("synth_generate: need at least 2 channels");
  const SynthLatents lat = synth_latents(p);
  Rng noise_rng = make_rng(p.seed, 0x9015e);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<RawRecording> out;
  for (std::size_t s = 0; s < p.num_subjects; ++s)
    for (int c = 0; c < p.num_classes; ++c) {
      const auto ci = static_cast<std::size_t>(c);
      RawRecording rec;
      rec.subject_id = std::to_string(s + 1);
      rec.activity_label = c;
      rec.sample_rate_hz = p.sample_rate_hz;
      rec.samples = Matrix(p.length, p.channels);
      const double w = 2.0 * std::numbers::pi * lat.frequency_hz[ci] / p.sample_rate_hz;
      for (std::size_t t = 0; t < p.length; ++t)
        for (std::size_t j = 0; j < p.channels; ++j) {
          double v = lat.subject_scale[s] * lat.amplitude[ci][j] *
                     std::sin(w * (static_cast<double>(t) + lat.subject_offset[s]) + lat.phase[ci][j]);
          if (p.noise_std > 0.0) v += p.noise_std * noise(noise_rng);
          rec.samples(t, j) = v;
        }
      out.push_back(std::move(rec));
    }
  return out;
}

std::vector<std::size_t> anomaly_channels(std::size_t channels, std::size_t m, std::uint64_t seed) {
  if (m > channels) throw std::invalid_argument("inject_channel_anomaly: m exceeds channel count");
  Rng rng = make_rng(seed, 0xa11);
  return sample_without_replacement(channels, m, rng);
}

WindowSet inject_channel_anomaly(const WindowSet& ws, std::size_t m, std::uint64_t seed) {
  const auto chans = anomaly_channels(ws.channel_count, m, seed);
  WindowSet out = ws;
  for (auto& w : out.windows)
    for (std::size_t i = 0; i < w.length(); ++i)
      for (std::size_t j : chans) w.values(i, j) = 0.0;
  return out;
}

}  // namespace maskrec::data

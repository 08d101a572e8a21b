#include "maskrec/config.hpp"

#include <fstream>
#include <functional>
#include <optional>
#include <set>

#include "maskrec/error.hpp"

namespace maskrec::config {

using nlohmann::json;

json to_json(const masking::StrategyConfig& s) {
  return {{"kind", masking::to_string(s.kind)},
          {"time_ratio", s.time_ratio},
          {"span_ratio", s.span_ratio},
          {"span_geometric_p", s.span_geometric_p},
          {"span_max_len", s.span_max_len},
          {"channel_count", s.channel_count_masked},
          {"same_position_per_batch", s.same_position_per_batch}};
}

json to_json(const model::ModelConfig& m) {
  return {{"d_model", m.d_model},           {"num_blocks", m.num_blocks},
          {"num_heads", m.num_heads},       {"ff_dim", m.ff_dim},
          {"dropout", m.dropout},           {"head_hidden1", m.head_hidden1},
          {"head_hidden2", m.head_hidden2}, {"bn_momentum", m.bn_momentum},
          {"max_len", m.max_len}};
}

json to_json(const train::PretrainConfig& p) {
  return {{"epochs", p.epochs},     {"batch_size", p.batch_size},  {"lr", p.lr},
          {"alpha", p.alpha},       {"seed", p.seed},              {"strategy", to_json(p.strategy)},
          {"model", to_json(p.model)}};
}

json to_json(const train::FinetuneConfig& f) {
  return {{"epochs", f.epochs},
          {"batch_size", f.batch_size},
          {"lr", f.lr},
          {"freeze_encoder", f.freeze_encoder},
          {"seed", f.seed}};
}

json to_json(const protocols::SweepSettings& s) {
  return {{"x_values", s.x_values},
          {"alpha_values", s.alpha_values},
          {"time_ratio_values", s.time_ratio_values},
          {"channel_count_values", s.channel_count_values},
          {"anomaly_m_values", s.anomaly_m_values},
          {"labels_per_class", s.labels_per_class},
          {"alpha_time_ratio", s.alpha_time_ratio},
          {"alpha_channel_count", s.alpha_channel_count},
          {"trick_time_ratio", s.trick_time_ratio},
          {"trick_channel_count", s.trick_channel_count},
          {"anomaly_channel_count", s.anomaly_channel_count},
          {"semi_include_supervised", s.semi_include_supervised}};
}

json to_json(const protocols::ExperimentConfig& e) {
  return {{"pretrain", to_json(e.pretrain)},
          {"finetune", to_json(e.finetune)},
          {"labels_per_class", e.labels_per_class},
          {"seeds", e.seeds},
          {"dataset_tag", e.dataset_tag},
          {"sweep", to_json(e.sweep)}};
}

namespace {

std::string policy_name(data::SplitPolicy p) {
  return p == data::SplitPolicy::kExplicitSubjects ? "explicit-subjects" : "random-subject-fraction";
}

}  // namespace

json to_json(const RunConfig& c) {
  const auto& syn = c.dataset.synthetic;
  return {
      {"schema_version", c.schema_version},
      {"dataset",
       {{"source", c.dataset.source},
        {"path", c.dataset.path},
        {"tag", c.dataset.tag},
        {"num_classes", c.dataset.num_classes},
        {"csv",
         {{"subject_column", c.dataset.csv.subject_column},
          {"label_column", c.dataset.csv.label_column},
          {"channel_columns", c.dataset.csv.channel_columns},
          {"sample_rate_hz", c.dataset.csv.sample_rate_hz}}},
        {"synthetic",
         {{"num_subjects", syn.num_subjects},
          {"num_classes", syn.num_classes},
          {"length", syn.length},
          {"channels", syn.channels},
          {"seed", syn.seed},
          {"noise_std", syn.noise_std},
          {"sample_rate_hz", syn.sample_rate_hz}}}}},
      {"window", {{"length", c.window.length}, {"overlap", c.window.overlap}}},
      {"split",
       {{"policy", policy_name(c.split.policy)},
        {"test_subjects", c.split.test_subjects},
        {"val_subjects", c.split.val_subjects},
        {"test_fraction", c.split.test_fraction},
        {"val_fraction", c.split.val_fraction},
        {"seed", c.split.seed}}},
      {"strategy", to_json(c.strategy)},
      {"alpha", c.alpha},
      {"model", to_json(c.model)},
      {"pretrain",
       {{"epochs", c.pretrain_epochs}, {"batch_size", c.pretrain_batch_size}, {"lr", c.pretrain_lr}}},
      {"finetune",
       {{"epochs", c.finetune.epochs},
        {"batch_size", c.finetune.batch_size},
        {"lr", c.finetune.lr},
        {"freeze_encoder", c.finetune.freeze_encoder}}},
      {"labels_per_class", c.labels_per_class},
      {"seeds", c.seeds},
      {"sweep", to_json(c.sweep)},
      {"output_dir", c.output_dir}};
}

namespace {

// Reads known keys of one JSON object and rejects the rest.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config: '" + display() + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config: bad value for '" + sub(key) + "': " + j_.at(key).dump());
    }
  }

  /// Unsigned integer; rejects negatives that nlohmann would wrap.
  void get_size(const char* key, std::size_t& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0)
      throw ConfigError("config: '" + sub(key) + "' must be a non-negative integer");
    out = v.get<std::size_t>();
  }

  void get_sizes(const char* key, std::vector<std::size_t>& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_array()) throw ConfigError("config: '" + sub(key) + "' must be an array");
    out.clear();
    for (const auto& e : v) {
      if (!e.is_number_integer() || e.get<long long>() < 0)
        throw ConfigError("config: '" + sub(key) + "' must hold non-negative integers");
      out.push_back(e.get<std::size_t>());
    }
  }

  bool has(const char* key) const { return j_.contains(key); }

  ObjectReader child(const char* key) {
    seen_.insert(key);
    static const json kEmpty = json::object();
    return ObjectReader(j_.contains(key) ? j_.at(key) : kEmpty, sub(key));
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.contains(k)) throw ConfigError("config: unknown key '" + sub(k) + "'");
  }

 private:
  std::string sub(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  std::string display() const { return path_.empty() ? "<root>" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_strategy(ObjectReader r, masking::StrategyConfig& s) {
  std::string kind = masking::to_string(s.kind);
  r.get("kind", kind);
  s.kind = masking::parse_strategy_kind(kind);
  r.get("time_ratio", s.time_ratio);
  r.get("span_ratio", s.span_ratio);
  r.get("span_geometric_p", s.span_geometric_p);
  r.get_size("span_max_len", s.span_max_len);
  r.get_size("channel_count", s.channel_count_masked);
  r.get("same_position_per_batch", s.same_position_per_batch);
  r.finish();
}

void read_model(ObjectReader r, model::ModelConfig& m) {
  r.get_size("d_model", m.d_model);
  r.get_size("num_blocks", m.num_blocks);
  r.get_size("num_heads", m.num_heads);
  r.get_size("ff_dim", m.ff_dim);
  r.get("dropout", m.dropout);
  r.get_size("head_hidden1", m.head_hidden1);
  r.get_size("head_hidden2", m.head_hidden2);
  r.get("bn_momentum", m.bn_momentum);
  r.get_size("max_len", m.max_len);
  r.finish();
}

void read_sweep(ObjectReader r, protocols::SweepSettings& s) {
  r.get_sizes("x_values", s.x_values);
  r.get("alpha_values", s.alpha_values);
  r.get("time_ratio_values", s.time_ratio_values);
  r.get_sizes("channel_count_values", s.channel_count_values);
  r.get_sizes("anomaly_m_values", s.anomaly_m_values);
  r.get_size("labels_per_class", s.labels_per_class);
  r.get("alpha_time_ratio", s.alpha_time_ratio);
  r.get_size("alpha_channel_count", s.alpha_channel_count);
  r.get("trick_time_ratio", s.trick_time_ratio);
  r.get_size("trick_channel_count", s.trick_channel_count);
  r.get_size("anomaly_channel_count", s.anomaly_channel_count);
  r.get("semi_include_supervised", s.semi_include_supervised);
  r.finish();
}

}  // namespace

RunConfig from_json(const json& j) {
  RunConfig c;
  ObjectReader root(j, "");
  root.get("schema_version", c.schema_version);
  if (c.schema_version != kSchemaVersion)
    throw ConfigError("config: unsupported schema_version " + std::to_string(c.schema_version));
  {
    auto d = root.child("dataset");
    d.get("source", c.dataset.source);
    if (c.dataset.source != "synthetic" && c.dataset.source != "csv")
      throw ConfigError("config: dataset.source must be 'synthetic' or 'csv'");
    d.get("path", c.dataset.path);
    d.get("tag", c.dataset.tag);
    d.get("num_classes", c.dataset.num_classes);
    {
      auto csv = d.child("csv");
      csv.get("subject_column", c.dataset.csv.subject_column);
      csv.get("label_column", c.dataset.csv.label_column);
      csv.get("channel_columns", c.dataset.csv.channel_columns);
      csv.get("sample_rate_hz", c.dataset.csv.sample_rate_hz);
      csv.finish();
    }
    {
      auto s = d.child("synthetic");
      auto& p = c.dataset.synthetic;
      s.get_size("num_subjects", p.num_subjects);
      s.get("num_classes", p.num_classes);
      s.get_size("length", p.length);
      s.get_size("channels", p.channels);
      s.get("seed", p.seed);
      s.get("noise_std", p.noise_std);
      s.get("sample_rate_hz", p.sample_rate_hz);
      s.finish();
    }
    d.finish();
  }
  {
    auto w = root.child("window");
    w.get_size("length", c.window.length);
    w.get("overlap", c.window.overlap);
    w.finish();
    if (c.window.length < 2) throw ConfigError("config: window.length must be >= 2");
    if (!(c.window.overlap >= 0.0 && c.window.overlap < 1.0))
      throw ConfigError("config: window.overlap must be in [0, 1)");
  }
  {
    auto s = root.child("split");
    std::string policy = policy_name(c.split.policy);
    s.get("policy", policy);
    if (policy == "explicit-subjects")
      c.split.policy = data::SplitPolicy::kExplicitSubjects;
    else if (policy == "random-subject-fraction")
      c.split.policy = data::SplitPolicy::kRandomSubjectFraction;
    else
      throw ConfigError("config: split.policy must be explicit-subjects or random-subject-fraction");
    s.get("test_subjects", c.split.test_subjects);
    s.get("val_subjects", c.split.val_subjects);
    s.get("test_fraction", c.split.test_fraction);
    s.get("val_fraction", c.split.val_fraction);
    s.get("seed", c.split.seed);
    s.finish();
  }
  read_strategy(root.child("strategy"), c.strategy);
  root.get("alpha", c.alpha);
  if (!(c.alpha >= 0.0 && c.alpha <= 1.0)) throw ConfigError("config: alpha must be in [0, 1]");
  read_model(root.child("model"), c.model);
  {
    auto p = root.child("pretrain");
    p.get_size("epochs", c.pretrain_epochs);
    p.get_size("batch_size", c.pretrain_batch_size);
    p.get("lr", c.pretrain_lr);
    p.finish();
  }
  {
    auto f = root.child("finetune");
    f.get_size("epochs", c.finetune.epochs);
    f.get_size("batch_size", c.finetune.batch_size);
    f.get("lr", c.finetune.lr);
    f.get("freeze_encoder", c.finetune.freeze_encoder);
    f.finish();
  }
  root.get_size("labels_per_class", c.labels_per_class);
  root.get("seeds", c.seeds);
  if (c.seeds.empty()) throw ConfigError("config: seeds must not be empty");
  read_sweep(root.child("sweep"), c.sweep);
  root.get("output_dir", c.output_dir);
  root.finish();
  c.model.validate();
  if (c.pretrain_epochs < 1 || c.pretrain_batch_size < 1 || c.finetune.epochs < 1 ||
      c.finetune.batch_size < 1)
    throw ConfigError("config: epochs and batch sizes must be >= 1");
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + assignment + "' must look like key.path=value");
  const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  // Validate the path against the schema so typos fail loudly.
  const json defaults = to_json(RunConfig{});
  const json* schema = &defaults;
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!schema->is_object() || !schema->contains(part))
      throw ConfigError("config: unknown key '" + key + "'");
    schema = &schema->at(part);
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

std::vector<std::pair<std::string, std::string>> flattened_defaults() {
  std::vector<std::pair<std::string, std::string>> out;
  // Arrays are leaves so they print as one value.
  const json doc = to_json(RunConfig{});
  std::function<void(const json&, const std::string&)> walk = [&](const json& j, const std::string& path) {
    if (j.is_object() && !j.empty()) {
      for (const auto& [k, v] : j.items()) walk(v, path.empty() ? k : path + "." + k);
    } else {
      out.emplace_back(path, j.dump());
    }
  };
  walk(doc, "");
  return out;
}

protocols::ExperimentConfig experiment_from(const RunConfig& c) {
  protocols::ExperimentConfig e;
  e.pretrain.epochs = c.pretrain_epochs;
  e.pretrain.batch_size = c.pretrain_batch_size;
  e.pretrain.lr = c.pretrain_lr;
  e.pretrain.strategy = c.strategy;
  e.pretrain.alpha = c.alpha;
  e.pretrain.model = c.model;
  e.pretrain.seed = c.seeds.front();
  e.finetune = c.finetune;
  e.finetune.seed = c.seeds.front();
  e.labels_per_class = c.labels_per_class;
  e.seeds = c.seeds;
  e.dataset_tag = c.dataset.tag;
  e.sweep = c.sweep;
  return e;
}

std::vector<data::RawRecording> load_recordings(const RunConfig& c) {
  if (c.dataset.source == "synthetic") return data::synth_generate(c.dataset.synthetic);
  if (c.dataset.path.empty()) throw ConfigError("config: dataset.path is required for csv sources");
  return data::load_csv(c.dataset.path, c.dataset.csv);
}

data::WindowSet load_windows(const RunConfig& c) {
  std::optional<int> classes;
  if (c.dataset.num_classes > 0) classes = c.dataset.num_classes;
  return data::segment_all(load_recordings(c), c.window.length, c.window.overlap, classes);
}

protocols::SplitProvider make_split_provider(const RunConfig& c, data::WindowSet windows) {
  return [spec = c.split, ws = std::move(windows)](std::size_t run_index) {
    data::SplitSpec s = spec;
    if (s.policy == data::SplitPolicy::kRandomSubjectFraction) s.seed += run_index;
    auto parts = data::split_by_subject(ws, s);
    auto norm = data::normalize(parts.train, {parts.val, parts.test});
    return data::Splits{std::move(norm[0]), std::move(norm[1]), std::move(norm[2])};
  };
}

}  // namespace maskrec::config

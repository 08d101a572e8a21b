#include "maskrec/cli.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <omp.h>

#include "maskrec/checkpoint.hpp"
#include "maskrec/config.hpp"
#include "maskrec/error.hpp"

namespace maskrec::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string checkpoint;
  std::string baseline;
  std::string axis;
  std::string run_id;
  std::string out;
  int threads = 0;
};

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y%m%dT%H%M%SZ");
  return os.str();
}

// The resolved document: file (if any) with overrides applied, validated.
struct Resolved {
  config::RunConfig cfg;
  json doc;
};

Resolved resolve(const Options& o) {
  json doc = json::object();
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path);
    if (!in) throw IoError("cannot open config " + o.config_path);
    try {
      doc = json::parse(in, nullptr, true, true);
    } catch (const json::parse_error& e) {
      throw ConfigError("config " + o.config_path + " is not valid JSON: " + e.what());
    }
  }
  for (const auto& a : o.overrides) config::apply_override(doc, a);
  Resolved r;
  r.cfg = config::from_json(doc);
  r.doc = config::to_json(r.cfg);
  return r;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

// Creates <outdir>/<protocol>/<run_id>/ and writes the snapshot and metadata.
fs::path prepare_run_dir(const Resolved& r, const Options& o, const std::string& protocol,
                         const std::string& command) {
  const std::string stamp = utc_timestamp();
  const std::string id = o.run_id.empty() ? stamp : o.run_id;
  const fs::path base = o.out.empty() ? fs::path(r.cfg.output_dir) : fs::path(o.out);
  const fs::path dir = base / protocol / id;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  write_text(dir / "config.snapshot", r.doc.dump(2) + "\n");
  const json meta = {{"command", command},
                     {"protocol", protocol},
                     {"run_id", id},
                     {"timestamp", stamp},
                     {"threads", omp_get_max_threads()}};
  write_text(dir / "metadata.json", meta.dump(2) + "\n");
  return dir;
}

void write_report(const eval::ProtocolReport& report, const fs::path& dir, std::ostream& out) {
  eval::write_report_json(report, dir / "report.json");
  eval::write_report_csv(report, dir / "report.csv");
  out << std::left;
  for (const auto& row : report.rows) {
    out << std::setw(28) << row.row << " mean_f1=" << std::fixed << std::setprecision(4)
        << row.mean_f1 << " ci95=" << row.ci95_halfwidth << "\n";
  }
  out.unsetf(std::ios::floatfield);
  out << "wrote " << (dir / "report.json").string() << "\n";
}

// The checkpoint must match the architecture the config describes.
model::ModelParams load_model(const std::string& path, const config::RunConfig& cfg,
                              const data::Splits& split) {
  if (path.empty()) throw ConfigError("--checkpoint is required");
  const auto expected =
      model::init_params(cfg.model, split.train.channel_count, split.train.num_classes, 0);
  return model::load_checkpoint(path, expected);
}

data::Splits first_split(const config::RunConfig& cfg) {
  return config::make_split_provider(cfg, config::load_windows(cfg))(0);
}

int cmd_synth(const Options& o, std::ostream& out) {
  const auto r = resolve(o);
  const auto& p = r.cfg.dataset.synthetic;
  const auto recs = data::synth_generate(p);
  const fs::path dir = o.out.empty() ? fs::path(r.cfg.output_dir) / "synth" : fs::path(o.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  data::write_csv(dir / "data.csv", recs);
  const json manifest = {{"seed", p.seed},
                         {"params", r.doc["dataset"]["synthetic"]},
                         {"recordings", recs.size()},
                         {"file", "data.csv"}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  out << "wrote " << recs.size() << " recordings to " << (dir / "data.csv").string() << "\n";
  return kOk;
}

int cmd_pretrain(const Options& o, std::ostream& out) {
  const auto r = resolve(o);
  const auto split = first_split(r.cfg);
  auto exp = config::experiment_from(r.cfg);
  const auto dir = prepare_run_dir(r, o, "pretrain", "pretrain");
  train::RunLog log;
  const auto result = train::pretrain(exp.pretrain, split.train, &log);
  log.write(dir / "run.ndjson");
  model::save_checkpoint(result.params, dir / "pretrained.ckpt");
  json curve = json::array();
  for (const auto& e : result.loss_curve)
    curve.push_back({{"loss_time", e.loss_time}, {"loss_channel", e.loss_channel}, {"combined", e.combined}});
  write_text(dir / "loss_curve.json", curve.dump(2) + "\n");
  if (!result.loss_curve.empty())
    out << "final combined loss " << result.loss_curve.back().combined << "\n";
  out << "wrote " << (dir / "pretrained.ckpt").string() << "\n";
  return kOk;
}

int cmd_finetune(const Options& o, std::ostream& out) {
  const auto r = resolve(o);
  const auto split = first_split(r.cfg);
  const auto start = load_model(o.checkpoint, r.cfg, split);
  auto exp = config::experiment_from(r.cfg);
  const auto dir = prepare_run_dir(r, o, "finetune", "finetune");
  train::RunLog log;
  const auto labelled = protocols::labelled_subset(split.train, exp.labels_per_class, exp.finetune.seed);
  const auto result = train::finetune(start, exp.finetune, labelled, split.val, &log);
  log.write(dir / "run.ndjson");
  model::save_checkpoint(result.params, dir / "classifier.ckpt");

  eval::ProtocolReport report;
  report.protocol = "finetune";
  report.dataset_tag = exp.dataset_tag;
  report.config = r.doc;
  report.rows.push_back(eval::MetricsReport::from_runs(
      "Test", 0.0, {exp.finetune.seed}, {protocols::evaluate(result.params, split.test)}));
  write_report(report, dir, out);
  return kOk;
}

int cmd_eval(const Options& o, std::ostream& out) {
  const auto r = resolve(o);
  const auto split = first_split(r.cfg);
  const auto params = load_model(o.checkpoint, r.cfg, split);
  const auto exp = config::experiment_from(r.cfg);
  eval::ProtocolReport report;
  if (o.baseline.empty()) {
    report.protocol = "eval";
    report.rows.push_back(eval::MetricsReport::from_runs("Test", 0.0, {exp.seeds.front()},
                                                         {protocols::evaluate(params, split.test)}));
  } else {
    // Anomaly evaluation of a self-supervised classifier against a baseline.
    const auto baseline = load_model(o.baseline, r.cfg, split);
    report = protocols::run_anomaly_eval(params, baseline, split.test, exp.sweep.anomaly_m_values,
                                         exp.seeds);
  }
  report.dataset_tag = exp.dataset_tag;
  report.config = r.doc;
  const auto dir = prepare_run_dir(r, o, report.protocol, "eval");
  write_report(report, dir, out);
  return kOk;
}

int cmd_sweep(const Options& o, std::ostream& out) {
  if (o.axis.empty()) throw ConfigError("--axis is required");
  const auto axis = protocols::parse_sweep_axis(o.axis);
  const auto r = resolve(o);
  const auto provider = config::make_split_provider(r.cfg, config::load_windows(r.cfg));
  const auto exp = config::experiment_from(r.cfg);
  train::RunLog log;
  auto report = protocols::run_sweep(exp, provider, axis, &log);
  report.config["run"] = r.doc;
  const auto dir = prepare_run_dir(r, o, report.protocol, "sweep " + o.axis);
  log.write(dir / "run.ndjson");
  write_report(report, dir, out);
  return kOk;
}

std::string defaults_listing() {
  std::ostringstream os;
  os << "Config keys (JSON; override with --set key=value):\n";
  for (const auto& [k, v] : config::flattened_defaults()) os << "  " << k << " = " << v << "\n";
  os << "Exit codes: 0 ok, 2 config, 3 data/io, 4 numeric.\n";
  return os.str();
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Masked-reconstruction pretraining for sensor time series", "maskrec"};
  app.require_subcommand(1);
  app.footer(defaults_listing());
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", o.config_path, "JSON run config");
    sub->add_option("--set", o.overrides, "Override a config key, e.g. --set alpha=0.7")->take_all();
    sub->add_option("--out", o.out, "Output directory (default: output_dir)");
    sub->add_option("--threads", o.threads, "OpenMP threads (0: runtime default)");
  };
  auto run_scoped = [&](CLI::App* sub) {
    common(sub);
    sub->add_option("--run-id", o.run_id, "Run directory name (default: UTC timestamp)");
  };
  auto* synth = app.add_subcommand("synth", "Write a synthetic CSV dataset and manifest");
  common(synth);
  auto* pre = app.add_subcommand("pretrain", "Masked-reconstruction pretraining");
  run_scoped(pre);
  auto* fin = app.add_subcommand("finetune", "Train a classifier on a pretrained encoder");
  run_scoped(fin);
  fin->add_option("--checkpoint", o.checkpoint, "Pretrained checkpoint");
  auto* ev = app.add_subcommand("eval", "Score a classifier on the test split");
  run_scoped(ev);
  ev->add_option("--checkpoint", o.checkpoint, "Classifier checkpoint");
  ev->add_option("--baseline", o.baseline, "Supervised checkpoint; enables anomaly evaluation");
  auto* sw = app.add_subcommand("sweep", "Run a multi-seed protocol");
  run_scoped(sw);
  sw->add_option("--axis", o.axis, "x|alpha|time_ratio|channel_count|trick|anomaly|strategy");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kOk;
    }
    err << "error: " << e.what() << "\n";
    return kConfig;
  }

  try {
    if (o.threads > 0) omp_set_num_threads(o.threads);
    if (*synth) return cmd_synth(o, out);
    if (*pre) return cmd_pretrain(o, out);
    if (*fin) return cmd_finetune(o, out);
    if (*ev) return cmd_eval(o, out);
    return cmd_sweep(o, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  } catch (const IoError& e) {
    err << "io error: " << e.what() << "\n";
    return kData;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return kData;
  }
}

}  // namespace maskrec::cli

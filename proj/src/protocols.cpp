#include "maskrec/protocols.hpp"

#include <charconv>
#include <cmath>

#include "maskrec/config.hpp"
#include "maskrec/error.hpp"

namespace maskrec::protocols {

using masking::StrategyConfig;
using masking::StrategyKind;

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kX: return "x";
    case SweepAxis::kAlpha: return "alpha";
    case SweepAxis::kTimeRatio: return "time_ratio";
    case SweepAxis::kChannelCount: return "channel_count";
    case SweepAxis::kTrick: return "trick";
    case SweepAxis::kAnomaly: return "anomaly";
    case SweepAxis::kStrategy: return "strategy";
  }
  return "?";
}

SweepAxis parse_sweep_axis(const std::string& name) {
  for (auto a : {SweepAxis::kX, SweepAxis::kAlpha, SweepAxis::kTimeRatio, SweepAxis::kChannelCount,
                 SweepAxis::kTrick, SweepAxis::kAnomaly, SweepAxis::kStrategy})
    if (to_string(a) == name) return a;
  throw ConfigError("unknown sweep axis '" + name +
                    "' (expected x, alpha, time_ratio, channel_count, trick, anomaly, strategy)");
}

namespace {

std::string row_name(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::kTime: return "Time Masking";
    case StrategyKind::kSpan: return "Span Masking";
    case StrategyKind::kChannel: return "Channel Masking";
    case StrategyKind::kTimeChannel: return "Time-Channel Masking";
    case StrategyKind::kSpanChannel: return "Span-Channel Masking";
  }
  return "?";
}

std::string format_value(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::size_t channels_of(const data::Splits& s) { return s.train.channel_count; }

nlohmann::json snapshot(const ExperimentConfig& cfg, const std::string& protocol) {
  auto j = config::to_json(cfg);
  j["protocol"] = protocol;
  return j;
}

eval::ProtocolReport make_report(const ExperimentConfig& cfg, const std::string& protocol) {
  eval::ProtocolReport report;
  report.protocol = protocol;
  report.dataset_tag = cfg.dataset_tag;
  report.config = snapshot(cfg, protocol);
  return report;
}

void require_seeds(const ExperimentConfig& cfg) {
  if (cfg.seeds.empty()) throw ConfigError("experiment needs at least one seed");
}

train::PretrainResult pretrain_run(const ExperimentConfig& cfg, const StrategyConfig& strategy,
                                   double alpha, const data::WindowSet& train_set,
                                   std::uint64_t seed, train::RunLog* log) {
  train::PretrainConfig p = cfg.pretrain;
  p.strategy = strategy;
  p.alpha = alpha;
  p.seed = seed;
  return train::pretrain(p, train_set, log);
}

model::ModelParams finetune_run(const ExperimentConfig& cfg, const model::ModelParams& start,
                                bool freeze, const data::Splits& splits, std::uint64_t seed,
                                std::size_t labels_per_class, train::RunLog* log) {
  train::FinetuneConfig f = cfg.finetune;
  f.freeze_encoder = freeze;
  f.seed = seed;
  const auto labelled = labelled_subset(splits.train, labels_per_class, seed);
  return train::finetune(start, f, labelled, splits.val, log).params;
}

}  // namespace

std::vector<NamedStrategy> comparison_strategies(const StrategyConfig& base, std::size_t channels) {
  auto with = [&](StrategyKind kind, double time_ratio, double span_ratio, std::size_t count) {
    StrategyConfig s = base;
    s.kind = kind;
    s.time_ratio = time_ratio;
    s.span_ratio = span_ratio;
    s.channel_count_masked = count;
    return NamedStrategy{row_name(kind), s};
  };
  const std::size_t half = std::max<std::size_t>(1, channels / 2);
  const std::size_t two = std::min<std::size_t>(2, channels);
  return {with(StrategyKind::kTime, 0.10, base.span_ratio, base.channel_count_masked),
          with(StrategyKind::kSpan, base.time_ratio, 0.15, base.channel_count_masked),
          with(StrategyKind::kChannel, base.time_ratio, base.span_ratio, half),
          with(StrategyKind::kTimeChannel, 0.10, base.span_ratio, two),
          with(StrategyKind::kSpanChannel, base.time_ratio, 0.15, two)};
}

eval::F1Result evaluate(const model::ModelParams& params, const data::WindowSet& test) {
  const auto preds = train::predict(params, test);
  const auto labels = train::labels_of(test);
  return eval::macro_f1(preds, labels, params.classes);
}

data::WindowSet labelled_subset(const data::WindowSet& train, std::size_t x, std::uint64_t seed) {
  return x > 0 ? data::sample_per_class(train, x, seed) : train;
}

PipelineResult run_self_supervised(const ExperimentConfig& cfg, const StrategyConfig& strategy,
                                   double alpha, const data::Splits& splits, std::uint64_t seed,
                                   std::size_t labels_per_class, train::RunLog* log) {
  const auto pre = pretrain_run(cfg, strategy, alpha, splits.train, seed, log);
  auto cls = finetune_run(cfg, pre.params, true, splits, seed, labels_per_class, log);
  auto f1 = evaluate(cls, splits.test);
  return {std::move(f1), std::move(cls)};
}

PipelineResult run_supervised(const ExperimentConfig& cfg, const data::Splits& splits,
                              std::uint64_t seed, std::size_t labels_per_class, train::RunLog* log) {
  const auto start =
      model::init_params(cfg.pretrain.model, channels_of(splits), splits.train.num_classes, seed);
  auto cls = finetune_run(cfg, start, false, splits, seed, labels_per_class, log);
  auto f1 = evaluate(cls, splits.test);
  return {std::move(f1), std::move(cls)};
}

eval::ProtocolReport run_strategy_comparison(const ExperimentConfig& cfg, const SplitProvider& splits,
                                             train::RunLog* log) {
  require_seeds(cfg);
  auto report = make_report(cfg, "strategy_comparison");
  std::vector<data::Splits> per_run;
  for (std::size_t r = 0; r < cfg.seeds.size(); ++r) per_run.push_back(splits(r));

  const auto strategies = comparison_strategies(cfg.pretrain.strategy, channels_of(per_run.front()));
  for (const auto& ns : strategies) {
    std::vector<eval::F1Result> runs;
    for (std::size_t r = 0; r < cfg.seeds.size(); ++r)
      runs.push_back(run_self_supervised(cfg, ns.strategy, cfg.pretrain.alpha, per_run[r],
                                         cfg.seeds[r], cfg.labels_per_class, log)
                         .test);
    report.rows.push_back(eval::MetricsReport::from_runs(ns.row, 0.0, cfg.seeds, std::move(runs)));
  }
  std::vector<eval::F1Result> runs;
  for (std::size_t r = 0; r < cfg.seeds.size(); ++r)
    runs.push_back(run_supervised(cfg, per_run[r], cfg.seeds[r], cfg.labels_per_class, log).test);
  report.rows.push_back(eval::MetricsReport::from_runs("Supervised", 0.0, cfg.seeds, std::move(runs)));
  return report;
}

eval::ProtocolReport run_semi_supervised_sweep(const ExperimentConfig& cfg, const SplitProvider& splits,
                                               const std::vector<std::size_t>& x_values,
                                               train::RunLog* log) {
  require_seeds(cfg);
  if (x_values.empty()) throw ConfigError("semi-supervised sweep needs at least one x value");
  auto report = make_report(cfg, "semi_supervised");
  report.config["x_values"] = x_values;

  const std::size_t nx = x_values.size(), nr = cfg.seeds.size();
  std::vector<std::vector<eval::F1Result>> ssl(nx), sup(nx);
  for (std::size_t r = 0; r < nr; ++r) {
    const auto s = splits(r);
    const auto seed = cfg.seeds[r];
    const auto pre = pretrain_run(cfg, cfg.pretrain.strategy, cfg.pretrain.alpha, s.train, seed, log);
    for (std::size_t i = 0; i < nx; ++i) {
      ssl[i].push_back(evaluate(finetune_run(cfg, pre.params, true, s, seed, x_values[i], log), s.test));
      if (cfg.sweep.semi_include_supervised)
        sup[i].push_back(run_supervised(cfg, s, seed, x_values[i], log).test);
    }
  }
  const std::string name = row_name(cfg.pretrain.strategy.kind);
  for (std::size_t i = 0; i < nx; ++i) {
    const std::string suffix = " x=" + std::to_string(x_values[i]);
    const auto xv = static_cast<double>(x_values[i]);
    report.rows.push_back(eval::MetricsReport::from_runs(name + suffix, xv, cfg.seeds, std::move(ssl[i])));
    if (cfg.sweep.semi_include_supervised)
      report.rows.push_back(
          eval::MetricsReport::from_runs("Supervised" + suffix, xv, cfg.seeds, std::move(sup[i])));
  }
  return report;
}

eval::ProtocolReport run_parameter_sweep(const ExperimentConfig& cfg, const SplitProvider& splits,
                                         SweepAxis axis, const std::vector<double>& values,
                                         train::RunLog* log) {
  require_seeds(cfg);
  if (values.empty()) throw ConfigError("parameter sweep needs at least one value");
  std::string protocol;
  switch (axis) {
    case SweepAxis::kAlpha: protocol = "alpha_sweep"; break;
    case SweepAxis::kTimeRatio: protocol = "time_ratio_sweep"; break;
    case SweepAxis::kChannelCount: protocol = "channel_count_sweep"; break;
    default: throw ConfigError("axis '" + to_string(axis) + "' is not a parameter sweep");
  }
  auto report = make_report(cfg, protocol);
  report.config["axis"] = to_string(axis);
  report.config["values"] = values;

  std::vector<data::Splits> per_run;
  for (std::size_t r = 0; r < cfg.seeds.size(); ++r) per_run.push_back(splits(r));

  for (double v : values) {
    StrategyConfig s = cfg.pretrain.strategy;
    double alpha = cfg.pretrain.alpha;
    if (axis == SweepAxis::kAlpha) {
      s.kind = StrategyKind::kTimeChannel;
      s.time_ratio = cfg.sweep.alpha_time_ratio;
      s.channel_count_masked = cfg.sweep.alpha_channel_count;
      alpha = v;
    } else if (axis == SweepAxis::kTimeRatio) {
      s.kind = StrategyKind::kTime;
      s.time_ratio = v;
    } else {
      if (v < 1 || v != std::floor(v)) throw ConfigError("channel counts must be positive integers");
      s.kind = StrategyKind::kChannel;
      s.channel_count_masked = static_cast<std::size_t>(v);
    }
    std::vector<eval::F1Result> runs;
    for (std::size_t r = 0; r < cfg.seeds.size(); ++r)
      runs.push_back(run_self_supervised(cfg, s, alpha, per_run[r], cfg.seeds[r],
                                         cfg.sweep.labels_per_class, log)
                         .test);
    report.rows.push_back(eval::MetricsReport::from_runs(to_string(axis) + "=" + format_value(v), v,
                                                         cfg.seeds, std::move(runs)));
  }
  return report;
}

namespace {

// Per-run anomaly scores for one (m, model) pair; run r uses seeds[r] both
// for the channel draw and as the run identity.
eval::F1Result anomaly_score(const model::ModelParams& params, const data::WindowSet& test,
                             std::size_t m, std::uint64_t seed) {
  return evaluate(params, m == 0 ? test : data::inject_channel_anomaly(test, m, seed));
}

}  // namespace

eval::ProtocolReport run_anomaly_eval(const model::ModelParams& self_supervised,
                                      const model::ModelParams& supervised,
                                      const data::WindowSet& test,
                                      const std::vector<std::size_t>& m_values,
                                      const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw ConfigError("anomaly evaluation needs at least one seed");
  eval::ProtocolReport report;
  report.protocol = "anomaly";
  report.config = {{"m_values", m_values}, {"seeds", seeds}};
  for (std::size_t m : m_values) {
    if (m > test.channel_count) throw ConfigError("anomaly m exceeds channel count");
    std::vector<eval::F1Result> sup, ssl;
    for (auto seed : seeds) {
      sup.push_back(anomaly_score(supervised, test, m, seed));
      ssl.push_back(anomaly_score(self_supervised, test, m, seed));
    }
    const std::string prefix = "m=" + std::to_string(m);
    const auto mv = static_cast<double>(m);
    report.rows.push_back(eval::MetricsReport::from_runs(prefix + " Supervised", mv, seeds, std::move(sup)));
    report.rows.push_back(
        eval::MetricsReport::from_runs(prefix + " Self-supervised", mv, seeds, std::move(ssl)));
  }
  return report;
}

eval::ProtocolReport run_anomaly_protocol(const ExperimentConfig& cfg, const SplitProvider& splits,
                                          const std::vector<std::size_t>& m_values,
                                          train::RunLog* log) {
  require_seeds(cfg);
  auto report = make_report(cfg, "anomaly");
  report.config["m_values"] = m_values;

  StrategyConfig strategy = cfg.pretrain.strategy;
  strategy.kind = StrategyKind::kChannel;
  strategy.channel_count_masked = cfg.sweep.anomaly_channel_count;

  const std::size_t nm = m_values.size();
  std::vector<std::vector<eval::F1Result>> sup(nm), ssl(nm);
  for (std::size_t r = 0; r < cfg.seeds.size(); ++r) {
    const auto s = splits(r);
    const auto seed = cfg.seeds[r];
    const auto lpc = cfg.sweep.labels_per_class;
    const auto self = run_self_supervised(cfg, strategy, cfg.pretrain.alpha, s, seed, lpc, log);
    const auto base = run_supervised(cfg, s, seed, lpc, log);
    for (std::size_t i = 0; i < nm; ++i) {
      if (m_values[i] > s.test.channel_count) throw ConfigError("anomaly m exceeds channel count");
      sup[i].push_back(anomaly_score(base.classifier, s.test, m_values[i], seed));
      ssl[i].push_back(anomaly_score(self.classifier, s.test, m_values[i], seed));
    }
  }
  for (std::size_t i = 0; i < nm; ++i) {
    const std::string prefix = "m=" + std::to_string(m_values[i]);
    const auto mv = static_cast<double>(m_values[i]);
    report.rows.push_back(eval::MetricsReport::from_runs(prefix + " Supervised", mv, cfg.seeds, std::move(sup[i])));
    report.rows.push_back(
        eval::MetricsReport::from_runs(prefix + " Self-supervised", mv, cfg.seeds, std::move(ssl[i])));
  }
  return report;
}

eval::ProtocolReport run_trick_comparison(const ExperimentConfig& cfg, const SplitProvider& splits,
                                          train::RunLog* log) {
  require_seeds(cfg);
  auto report = make_report(cfg, "trick");
  StrategyConfig s = cfg.pretrain.strategy;
  s.kind = StrategyKind::kTimeChannel;
  s.time_ratio = cfg.sweep.trick_time_ratio;
  s.channel_count_masked = cfg.sweep.trick_channel_count;

  std::vector<data::Splits> per_run;
  for (std::size_t r = 0; r < cfg.seeds.size(); ++r) per_run.push_back(splits(r));
  for (bool same : {false, true}) {
    s.same_position_per_batch = same;
    std::vector<eval::F1Result> runs;
    for (std::size_t r = 0; r < cfg.seeds.size(); ++r)
      runs.push_back(run_self_supervised(cfg, s, cfg.pretrain.alpha, per_run[r], cfg.seeds[r],
                                         cfg.sweep.labels_per_class, log)
                         .test);
    report.rows.push_back(
        eval::MetricsReport::from_runs(same ? "Same" : "Different", same ? 1.0 : 0.0, cfg.seeds, std::move(runs)));
  }
  return report;
}

eval::ProtocolReport run_sweep(const ExperimentConfig& cfg, const SplitProvider& splits,
                               SweepAxis axis, train::RunLog* log) {
  const auto& sw = cfg.sweep;
  switch (axis) {
    case SweepAxis::kX: return run_semi_supervised_sweep(cfg, splits, sw.x_values, log);
    case SweepAxis::kAlpha: return run_parameter_sweep(cfg, splits, axis, sw.alpha_values, log);
    case SweepAxis::kTimeRatio: return run_parameter_sweep(cfg, splits, axis, sw.time_ratio_values, log);
    case SweepAxis::kChannelCount: {
      std::vector<double> v(sw.channel_count_values.begin(), sw.channel_count_values.end());
      return run_parameter_sweep(cfg, splits, axis, v, log);
    }
    case SweepAxis::kTrick: return run_trick_comparison(cfg, splits, log);
    case SweepAxis::kAnomaly: return run_anomaly_protocol(cfg, splits, sw.anomaly_m_values, log);
    case SweepAxis::kStrategy: return run_strategy_comparison(cfg, splits, log);
  }
  throw ConfigError("unknown sweep axis");
}

}  // namespace maskrec::protocols

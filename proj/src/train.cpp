#include "maskrec/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "maskrec/error.hpp"
#include "maskrec/eval.hpp"
#include "maskrec/random.hpp"

namespace maskrec::train {

using model::Group;
using model::ModelParams;

AdamState AdamState::for_params(const ModelParams& params) {
  AdamState s;
  for (const auto& a : params.arrays) {
    s.m.emplace_back(a.value.rows(), a.value.cols());
    s.v.emplace_back(a.value.rows(), a.value.cols());
  }
  return s;
}

void adam_step(ModelParams& params, const model::Gradients& grads, AdamState& state, double lr) {
  if (grads.arrays.size() != params.arrays.size() || state.m.size() != params.arrays.size())
    throw std::invalid_argument("adam_step: gradient / state layout does not match params");
  for (std::size_t i = 0; i < params.arrays.size(); ++i) {
    const auto& a = params.arrays[i];
    if (!a.trainable || params.is_frozen(a.group)) continue;
    for (double g : grads.arrays[i].values())
      if (!std::isfinite(g)) throw NumericError("non-finite gradient for '" + a.name + "'");
  }
  ++state.t;
  const double b1 = state.beta1, b2 = state.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.arrays.size(); ++i) {
    auto& a = params.arrays[i];
    if (!a.trainable || params.is_frozen(a.group)) continue;
    auto& theta = a.value.values();
    const auto& g = grads.arrays[i].values();
    auto& m = state.m[i].values();
    auto& v = state.v[i].values();
    for (std::size_t k = 0; k < theta.size(); ++k) {
      m[k] = b1 * m[k] + (1.0 - b1) * g[k];
      v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      theta[k] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

void RunLog::write(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& l : lines_) out << l << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

namespace {

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

}  // namespace

PretrainResult pretrain(const PretrainConfig& cfg, const data::WindowSet& train, RunLog* log) {
  if (train.empty()) throw DataError("pretrain: empty training set");
  if (cfg.epochs < 1 || cfg.batch_size < 1) throw ConfigError("pretrain: epochs and batch_size must be >= 1");
  cfg.strategy.validate(train.channel_count);

  PretrainResult result;
  result.params = model::init_params(cfg.model, train.channel_count, train.num_classes, cfg.seed);
  auto& params = result.params;
  const auto saved_frozen = params.frozen;
  params.set_frozen(Group::kClassifier, true);
  AdamState adam = AdamState::for_params(params);
  Rng shuffle_rng = make_rng(cfg.seed, 1);
  Rng mask_rng = make_rng(cfg.seed, 2);
  Rng dropout_rng = make_rng(cfg.seed, 3);
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled(train.size(), shuffle_rng);
    objective::LossBreakdown acc{};
    acc.alpha = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++step) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<data::SensorWindow> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(train.windows[order[i]]);
      const auto masked = masking::batch_mask(batch, cfg.strategy, mask_rng);
      const Matrix raw = model::stack_windows(batch);
      const Matrix input = model::stack_windows(masked.windows);
      objective::LossBreakdown step_loss;
      const model::OutputLoss loss_fn = [&](const Matrix& rec, Matrix& d_rec) {
        step_loss = objective::combined_loss(raw, rec, masked.specs, cfg.alpha, &d_rec);
        return step_loss.combined;
      };
      try {
        auto g = model::gradients(params, input, batch.size(), model::Head::kReconstruction,
                                  loss_fn, {model::Mode::kTrain, dropout_rng()});
        model::apply_batchnorm_update(params, g.batchnorm);
        adam_step(params, g.grads, adam, cfg.lr);
      } catch (const NumericError& e) {
        throw NumericError("pretrain epoch " + std::to_string(epoch + 1) + ", step " +
                           std::to_string(step) + ": " + e.what());
      }
      const double w = static_cast<double>(batch.size()) / static_cast<double>(order.size());
      acc.loss_time += w * step_loss.loss_time;
      acc.loss_channel += w * step_loss.loss_channel;
      acc.combined += w * step_loss.combined;
      acc.alpha += w * step_loss.alpha;
      acc.has_time |= step_loss.has_time;
      acc.has_channel |= step_loss.has_channel;
      if (log)
        log->record({{"phase", "pretrain"},
                     {"epoch", epoch + 1},
                     {"step", step},
                     {"loss_time", step_loss.loss_time},
                     {"loss_channel", step_loss.loss_channel},
                     {"combined", step_loss.combined}});
    }
    result.loss_curve.push_back(acc);
  }
  params.frozen = saved_frozen;
  return result;
}

std::vector<int> labels_of(const data::WindowSet& ws) {
  std::vector<int> out;
  out.reserve(ws.size());
  for (const auto& w : ws.windows) out.push_back(w.label);
  return out;
}

Matrix pooled_features(const ModelParams& params, const data::WindowSet& ws, std::size_t chunk) {
  Matrix out(ws.size(), params.config.d_model);
  for (std::size_t start = 0; start < ws.size(); start += chunk) {
    const std::size_t end = std::min(ws.size(), start + chunk);
    const std::span<const data::SensorWindow> part(ws.windows.data() + start, end - start);
    const Matrix feats = model::encode(params, model::stack_windows(part), part.size());
    const Matrix pooled = model::pool_time(feats, part.size());
    std::copy_n(pooled.data(), pooled.size(), out.data() + start * out.cols());
  }
  return out;
}

namespace {

std::vector<int> argmax_rows(const Matrix& logits) {
  std::vector<int> out;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto r = logits.row(i);
    out.push_back(static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin()));
  }
  return out;
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(m.row(rows[i]).data(), m.cols(), out.row(i).data());
  return out;
}

}  // namespace

std::vector<int> predict(const ModelParams& params, const data::WindowSet& ws, std::size_t chunk) {
  if (ws.empty()) return {};
  const Matrix pooled = pooled_features(params, ws, chunk);
  return argmax_rows(model::classify_pooled(params, pooled));
}

FinetuneResult finetune(const ModelParams& start, const FinetuneConfig& cfg,
                        const data::WindowSet& labeled, const data::WindowSet& val, RunLog* log) {
  if (labeled.empty()) throw DataError("finetune: empty labelled set");
  if (cfg.epochs < 1 || cfg.batch_size < 1) throw ConfigError("finetune: epochs and batch_size must be >= 1");
  if (labeled.channel_count != start.channels)
    throw ConfigError("finetune: data has " + std::to_string(labeled.channel_count) +
                      " channels, checkpoint expects " + std::to_string(start.channels));
  if (labeled.num_classes != start.classes)
    throw ConfigError("finetune: data has " + std::to_string(labeled.num_classes) +
                      " classes, classifier head has " + std::to_string(start.classes));

  FinetuneResult result;
  result.params = start;
  auto& params = result.params;
  model::reinit_group(params, Group::kClassifier, cfg.seed ^ 0xc1a5517f1e5ULL);
  params.set_frozen(Group::kEncoder, cfg.freeze_encoder);
  params.set_frozen(Group::kReconstruction, true);
  params.set_frozen(Group::kClassifier, false);

  AdamState adam = AdamState::for_params(params);
  Rng shuffle_rng = make_rng(cfg.seed, 11);
  Rng dropout_rng = make_rng(cfg.seed, 13);
  const std::vector<int> labels = labels_of(labeled);
  // A frozen encoder in eval mode is a fixed feature map; compute it once.
  Matrix cached, val_cached;
  if (cfg.freeze_encoder) {
    cached = pooled_features(params, labeled);
    if (!val.empty()) val_cached = pooled_features(params, val);
  }

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled(labeled.size(), shuffle_rng);
    double epoch_loss = 0.0;
    for (std::size_t s = 0; s < order.size(); s += cfg.batch_size, ++step) {
      const std::size_t e = std::min(order.size(), s + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + s, e - s);
      std::vector<int> y;
      for (std::size_t i : idx) y.push_back(labels[i]);
      const model::OutputLoss ce = [&](const Matrix& logits, Matrix& d) {
        return objective::cross_entropy(logits, y, &d);
      };
      const model::ForwardOptions opts{model::Mode::kTrain, dropout_rng()};
      model::GradientResult g;
      try {
        if (cfg.freeze_encoder) {
          g = model::classifier_gradients(params, gather_rows(cached, idx), ce, opts);
        } else {
          std::vector<data::SensorWindow> batch;
          for (std::size_t i : idx) batch.push_back(labeled.windows[i]);
          g = model::gradients(params, model::stack_windows(batch), batch.size(),
                               model::Head::kClassifier, ce, opts);
        }
        model::apply_batchnorm_update(params, g.batchnorm);
        adam_step(params, g.grads, adam, cfg.lr);
      } catch (const NumericError& err) {
        throw NumericError("finetune epoch " + std::to_string(epoch + 1) + ", step " +
                           std::to_string(step) + ": " + err.what());
      }
      epoch_loss += g.loss * static_cast<double>(idx.size()) / static_cast<double>(order.size());
    }
    result.loss_curve.push_back(epoch_loss);
    nlohmann::json rec{{"phase", "finetune"}, {"epoch", epoch + 1}, {"step", step},
                       {"ce_loss", epoch_loss}};
    if (!val.empty()) {
      const auto preds = cfg.freeze_encoder
                             ? argmax_rows(model::classify_pooled(params, val_cached))
                             : predict(params, val);
      const auto f1 = eval::macro_f1(preds, labels_of(val), val.num_classes).mean_f1;
      result.val_f1.push_back(f1);
      rec["val_f1"] = f1;
    }
    if (log) log->record(std::move(rec));
  }
  return result;
}

}  // namespace maskrec::train

#include "maskrec/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "maskrec/error.hpp"
#include "maskrec/kernels.hpp"
#include "maskrec/random.hpp"

namespace maskrec::model {

namespace {

constexpr double kNormEps = 1e-5;

std::string block_name(std::size_t i, const char* rest) {
  return "block" + std::to_string(i) + "." + rest;
}

void add_vector(std::vector<ParamArray>& out, std::string name, std::size_t n, Group g,
                bool trainable = true) {
  out.push_back({std::move(name), {n}, Matrix(1, n), g, trainable});
}

void add_matrix(std::vector<ParamArray>& out, std::string name, std::size_t rows,
                std::size_t cols, Group g) {
  out.push_back({std::move(name), {rows, cols}, Matrix(rows, cols), g, true});
}

void add_linear(std::vector<ParamArray>& out, const std::string& prefix, std::size_t in,
                std::size_t outw, Group g) {
  add_matrix(out, prefix + ".weight", outw, in, g);
  add_vector(out, prefix + ".bias", outw, g);
}

void add_norm(std::vector<ParamArray>& out, const std::string& prefix, std::size_t n, Group g,
              bool running) {
  add_vector(out, prefix + ".gamma", n, g);
  add_vector(out, prefix + ".beta", n, g);
  if (running) {
    add_vector(out, prefix + ".running_mean", n, g, false);
    add_vector(out, prefix + ".running_var", n, g, false);
  }
}

void add_head(std::vector<ParamArray>& out, const std::string& prefix, const ModelConfig& cfg,
              std::size_t in, std::size_t outw, Group g) {
  add_linear(out, prefix + ".fc1", in, cfg.head_hidden1, g);
  add_norm(out, prefix + ".bn1", cfg.head_hidden1, g, true);
  add_linear(out, prefix + ".fc2", cfg.head_hidden1, cfg.head_hidden2, g);
  add_norm(out, prefix + ".bn2", cfg.head_hidden2, g, true);
  add_linear(out, prefix + ".fc3", cfg.head_hidden2, outw, g);
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

void init_array(ParamArray& a, std::uint64_t seed, std::size_t stream) {
  if (ends_with(a.name, ".weight")) {
    const double bound = std::sqrt(3.0 / static_cast<double>(a.shape[1]));
    Rng rng = make_rng(seed, stream);
    std::uniform_real_distribution<double> u(-bound, bound);
    for (double& v : a.value.values()) v = u(rng);
  } else if (ends_with(a.name, ".gamma") || ends_with(a.name, ".running_var")) {
    a.value.fill(1.0);
  } else {
    a.value.fill(0.0);
  }
}

// ---------------------------------------------------------------- layers

struct Ctx {
  Mode mode;
  double dropout;
  Rng rng;
  std::uint64_t relu_hash = 1469598103934665603ULL;
  BatchNormUpdate* bn = nullptr;

  void mix(std::uint64_t v) {
    relu_hash ^= v;
    relu_hash *= 1099511628211ULL;
  }
};

Matrix linear(const Matrix& x, const ParamArray& w, const ParamArray& b) {
  if (x.cols() != w.value.cols())
    throw std::invalid_argument("shape mismatch at '" + w.name + "': input width " +
                                std::to_string(x.cols()) + ", expected " +
                                std::to_string(w.value.cols()));
  Matrix y;
  kernels::matmul_nt(x, w.value, y);
  kernels::add_row_bias(y, b.value.row(0));
  return y;
}

// Writes parameter grads only when dw/db are non-null; dx only when non-null.
void linear_backward(const Matrix& dy, const Matrix& x, const ParamArray& w, Matrix* dx,
                     Matrix* dw, Matrix* db) {
  if (dx) kernels::matmul_nn(dy, w.value, *dx);
  if (dw) kernels::matmul_tn(dy, x, *dw);
  if (db) kernels::column_sums(dy, db->row(0));
}

struct NormCache {
  Matrix xhat;
  std::vector<double> rstd;  // per row (layer norm) or per column (batch norm)
  bool batch_stats = true;
};

Matrix layer_norm(const Matrix& x, const ParamArray& gamma, const ParamArray& beta,
                  NormCache& c) {
  const std::size_t n = x.rows(), d = x.cols();
  c.xhat = Matrix(n, d);
  c.rstd.assign(n, 0.0);
  Matrix y(n, d);
  const auto g = gamma.value.row(0), b = beta.value.row(0);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(n); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const auto r = x.row(i);
    double mean = 0.0;
    for (double v : r) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : r) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + kNormEps);
    c.rstd[i] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = (r[j] - mean) * rs;
      c.xhat(i, j) = xh;
      y(i, j) = g[j] * xh + b[j];
    }
  }
  return y;
}

Matrix layer_norm_backward(const Matrix& dy, const ParamArray& gamma, const NormCache& c,
                           Matrix* dgamma, Matrix* dbeta) {
  const std::size_t n = dy.rows(), d = dy.cols();
  const auto g = gamma.value.row(0);
  if (dgamma) {
    auto dg = dgamma->row(0);
    auto db = dbeta->row(0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        dg[j] += dy(i, j) * c.xhat(i, j);
        db[j] += dy(i, j);
      }
  }
  Matrix dx(n, d);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(n); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double mean_dxh = 0.0, mean_dxh_xh = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double dxh = dy(i, j) * g[j];
      mean_dxh += dxh;
      mean_dxh_xh += dxh * c.xhat(i, j);
    }
    mean_dxh /= static_cast<double>(d);
    mean_dxh_xh /= static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j) {
      const double dxh = dy(i, j) * g[j];
      dx(i, j) = c.rstd[i] * (dxh - mean_dxh - c.xhat(i, j) * mean_dxh_xh);
    }
  }
  return dx;
}

Matrix batch_norm(const Matrix& x, const ModelParams& p, const std::string& prefix, Ctx& ctx,
                  NormCache& c) {
  const auto& gamma = p.at(prefix + ".gamma");
  const auto& beta = p.at(prefix + ".beta");
  const std::size_t rm_idx = p.index_of(prefix + ".running_mean");
  const std::size_t rv_idx = p.index_of(prefix + ".running_var");
  const auto rm = p.arrays[rm_idx].value.row(0), rv = p.arrays[rv_idx].value.row(0);
  const std::size_t n = x.rows(), d = x.cols();
  c.xhat = Matrix(n, d);
  c.rstd.assign(d, 0.0);
  c.batch_stats = ctx.mode == Mode::kTrain;
  std::vector<double> mean(d, 0.0), var(d, 0.0);
  if (c.batch_stats) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) mean[j] += x(i, j);
    for (double& m : mean) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) var[j] += (x(i, j) - mean[j]) * (x(i, j) - mean[j]);
    if (ctx.bn) {
      BatchNormUpdate::Entry e{rm_idx, rv_idx, mean, var};
      const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
      for (double& v : e.batch_var) v /= denom;
      ctx.bn->entries.push_back(std::move(e));
    }
    for (double& v : var) v /= static_cast<double>(n);
  } else {
    std::copy(rm.begin(), rm.end(), mean.begin());
    std::copy(rv.begin(), rv.end(), var.begin());
  }
  for (std::size_t j = 0; j < d; ++j) c.rstd[j] = 1.0 / std::sqrt(var[j] + kNormEps);
  const auto g = gamma.value.row(0), b = beta.value.row(0);
  Matrix y(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = (x(i, j) - mean[j]) * c.rstd[j];
      c.xhat(i, j) = xh;
      y(i, j) = g[j] * xh + b[j];
    }
  return y;
}

Matrix batch_norm_backward(const Matrix& dy, const ParamArray& gamma, const NormCache& c,
                           Matrix* dgamma, Matrix* dbeta) {
  const std::size_t n = dy.rows(), d = dy.cols();
  const auto g = gamma.value.row(0);
  std::vector<double> sum_dxh(d, 0.0), sum_dxh_xh(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double dxh = dy(i, j) * g[j];
      sum_dxh[j] += dxh;
      sum_dxh_xh[j] += dxh * c.xhat(i, j);
    }
  if (dgamma) {
    auto dg = dgamma->row(0);
    auto db = dbeta->row(0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        dg[j] += dy(i, j) * c.xhat(i, j);
        db[j] += dy(i, j);
      }
  }
  Matrix dx(n, d);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double dxh = dy(i, j) * g[j];
      dx(i, j) = c.batch_stats
                     ? c.rstd[j] * (dxh - sum_dxh[j] * inv_n - c.xhat(i, j) * sum_dxh_xh[j] * inv_n)
                     : c.rstd[j] * dxh;
    }
  return dx;
}

void relu_inplace(Matrix& x, Ctx& ctx) {
  std::uint64_t word = 0;
  std::size_t bit = 0;
  for (double& v : x.values()) {
    const bool on = v > 0.0;
    word = (word << 1) | (on ? 1u : 0u);
    if (++bit == 64) ctx.mix(word), word = 0, bit = 0;
    if (!on) v = 0.0;
  }
  ctx.mix(word ^ bit);
}

// Inverted dropout; leaves `mask` empty when inactive.
void dropout_inplace(Matrix& x, Ctx& ctx, std::vector<double>& mask) {
  mask.clear();
  if (ctx.mode != Mode::kTrain || ctx.dropout <= 0.0) return;
  mask.resize(x.size());
  std::bernoulli_distribution keep(1.0 - ctx.dropout);
  const double scale = 1.0 / (1.0 - ctx.dropout);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = keep(ctx.rng) ? scale : 0.0;
    x.values()[i] *= mask[i];
  }
}

void dropout_backward(Matrix& dy, const std::vector<double>& mask) {
  if (mask.empty()) return;
  for (std::size_t i = 0; i < mask.size(); ++i) dy.values()[i] *= mask[i];
}

void add_inplace(Matrix& a, const Matrix& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a.values()[i] += b.values()[i];
}

// ---------------------------------------------------------------- encoder

struct BlockCache {
  Matrix x_in, a, q, k, v, att, c, ff_pre_relu, ff_act;
  NormCache ln1, ln2;
  std::vector<double> probs, mask1, mask2;
};

struct EncoderCache {
  Matrix input;
  std::size_t batch = 0, seq = 0;
  std::vector<BlockCache> blocks;
  Matrix pre_final;
  NormCache final_ln;
};

std::size_t check_input(const ModelParams& p, const Matrix& input, std::size_t batch) {
  if (batch == 0 || input.rows() % batch != 0)
    throw std::invalid_argument("encode: input rows not divisible by batch size");
  if (input.cols() != p.channels)
    throw std::invalid_argument("encode: input has " + std::to_string(input.cols()) +
                                " channels, model expects " + std::to_string(p.channels));
  const std::size_t seq = input.rows() / batch;
  if (p.config.max_len != 0 && seq > p.config.max_len)
    throw std::invalid_argument("encode: sequence length exceeds max_len");
  return seq;
}

Matrix block_forward(const ModelParams& p, std::size_t i, const Matrix& x, std::size_t batch,
                     std::size_t seq, Ctx& ctx, BlockCache& c) {
  const auto& cfg = p.config;
  auto P = [&](const char* rest) -> const ParamArray& { return p.at(block_name(i, rest)); };
  c.x_in = x;
  c.a = layer_norm(x, P("ln1.gamma"), P("ln1.beta"), c.ln1);
  c.q = linear(c.a, P("attn.q.weight"), P("attn.q.bias"));
  c.k = linear(c.a, P("attn.k.weight"), P("attn.k.bias"));
  c.v = linear(c.a, P("attn.v.weight"), P("attn.v.bias"));
  c.probs.assign(batch * cfg.num_heads * seq * seq, 0.0);
  kernels::attention_forward(c.q, c.k, c.v, batch, seq, cfg.num_heads, c.probs, c.att);
  Matrix o = linear(c.att, P("attn.o.weight"), P("attn.o.bias"));
  dropout_inplace(o, ctx, c.mask1);
  Matrix x1 = x;
  add_inplace(x1, o);
  c.c = layer_norm(x1, P("ln2.gamma"), P("ln2.beta"), c.ln2);
  c.ff_pre_relu = linear(c.c, P("ff1.weight"), P("ff1.bias"));
  c.ff_act = c.ff_pre_relu;
  relu_inplace(c.ff_act, ctx);
  Matrix f = linear(c.ff_act, P("ff2.weight"), P("ff2.bias"));
  dropout_inplace(f, ctx, c.mask2);
  add_inplace(x1, f);
  return x1;
}

// Returns d(block input).
Matrix block_backward(const ModelParams& p, std::size_t i, const BlockCache& c,
                      const Matrix& d_out, std::size_t batch, std::size_t seq, Gradients& g) {
  const auto& cfg = p.config;
  auto P = [&](const char* rest) -> const ParamArray& { return p.at(block_name(i, rest)); };
  auto G = [&](const char* rest) -> Matrix* { return &g.arrays[p.index_of(block_name(i, rest))]; };

  Matrix dx1 = d_out;
  Matrix df = d_out;
  dropout_backward(df, c.mask2);
  Matrix d_act;
  linear_backward(df, c.ff_act, P("ff2.weight"), &d_act, G("ff2.weight"), G("ff2.bias"));
  for (std::size_t t = 0; t < d_act.size(); ++t)
    if (!(c.ff_pre_relu.values()[t] > 0.0)) d_act.values()[t] = 0.0;
  Matrix dc;
  linear_backward(d_act, c.c, P("ff1.weight"), &dc, G("ff1.weight"), G("ff1.bias"));
  add_inplace(dx1, layer_norm_backward(dc, P("ln2.gamma"), c.ln2, G("ln2.gamma"), G("ln2.beta")));

  Matrix d_o = dx1;
  dropout_backward(d_o, c.mask1);
  Matrix d_att;
  linear_backward(d_o, c.att, P("attn.o.weight"), &d_att, G("attn.o.weight"), G("attn.o.bias"));
  Matrix dq, dk, dv;
  kernels::attention_backward(c.q, c.k, c.v, c.probs, d_att, batch, seq, cfg.num_heads, dq, dk, dv);
  Matrix da, tmp;
  linear_backward(dq, c.a, P("attn.q.weight"), &da, G("attn.q.weight"), G("attn.q.bias"));
  linear_backward(dk, c.a, P("attn.k.weight"), &tmp, G("attn.k.weight"), G("attn.k.bias"));
  add_inplace(da, tmp);
  linear_backward(dv, c.a, P("attn.v.weight"), &tmp, G("attn.v.weight"), G("attn.v.bias"));
  add_inplace(da, tmp);
  Matrix dx = dx1;
  add_inplace(dx, layer_norm_backward(da, P("ln1.gamma"), c.ln1, G("ln1.gamma"), G("ln1.beta")));
  return dx;
}

Matrix encoder_forward(const ModelParams& p, const Matrix& input, std::size_t batch, Ctx& ctx,
                       EncoderCache* cache) {
  const std::size_t seq = check_input(p, input, batch);
  Matrix h = embed(p, input, batch);
  EncoderCache local;
  EncoderCache& c = cache ? *cache : local;
  c.batch = batch;
  c.seq = seq;
  if (cache) c.input = input;
  c.blocks.assign(cache ? p.config.num_blocks : 1, {});
  for (std::size_t b = 0; b < p.config.num_blocks; ++b)
    h = block_forward(p, b, h, batch, seq, ctx, c.blocks[cache ? b : 0]);
  if (cache) c.pre_final = h;
  return layer_norm(h, p.at("final_ln.gamma"), p.at("final_ln.beta"), c.final_ln);
}

void encoder_backward(const ModelParams& p, const EncoderCache& c, const Matrix& d_out,
                      Gradients& g) {
  auto G = [&](const std::string& n) { return &g.arrays[p.index_of(n)]; };
  Matrix d = layer_norm_backward(d_out, p.at("final_ln.gamma"), c.final_ln, G("final_ln.gamma"),
                                 G("final_ln.beta"));
  for (std::size_t b = p.config.num_blocks; b-- > 0;)
    d = block_backward(p, b, c.blocks[b], d, c.batch, c.seq, g);
  linear_backward(d, c.input, p.at("embed.weight"), nullptr, G("embed.weight"), G("embed.bias"));
}

// ---------------------------------------------------------------- heads

struct HeadCache {
  Matrix x, n1, h1, n2, h2;
  NormCache bn1, bn2;
  std::vector<double> mask1, mask2;
};

Matrix head_forward(const ModelParams& p, const std::string& prefix, const Matrix& x, Ctx& ctx,
                    HeadCache& c) {
  c.x = x;
  Matrix z1 = linear(x, p.at(prefix + ".fc1.weight"), p.at(prefix + ".fc1.bias"));
  c.n1 = batch_norm(z1, p, prefix + ".bn1", ctx, c.bn1);
  c.h1 = c.n1;
  relu_inplace(c.h1, ctx);
  dropout_inplace(c.h1, ctx, c.mask1);
  Matrix z2 = linear(c.h1, p.at(prefix + ".fc2.weight"), p.at(prefix + ".fc2.bias"));
  c.n2 = batch_norm(z2, p, prefix + ".bn2", ctx, c.bn2);
  c.h2 = c.n2;
  relu_inplace(c.h2, ctx);
  dropout_inplace(c.h2, ctx, c.mask2);
  return linear(c.h2, p.at(prefix + ".fc3.weight"), p.at(prefix + ".fc3.bias"));
}

// Returns d(head input) when `need_dx`, else an empty matrix.
Matrix head_backward(const ModelParams& p, const std::string& prefix, const HeadCache& c,
                     const Matrix& dy, Gradients& g, bool want_params, bool need_dx) {
  auto G = [&](const std::string& n) -> Matrix* {
    return want_params ? &g.arrays[p.index_of(prefix + n)] : nullptr;
  };
  Matrix dh2;
  linear_backward(dy, c.h2, p.at(prefix + ".fc3.weight"), &dh2, G(".fc3.weight"), G(".fc3.bias"));
  dropout_backward(dh2, c.mask2);
  for (std::size_t t = 0; t < dh2.size(); ++t)
    if (!(c.n2.values()[t] > 0.0)) dh2.values()[t] = 0.0;
  Matrix dz2 = batch_norm_backward(dh2, p.at(prefix + ".bn2.gamma"), c.bn2, G(".bn2.gamma"),
                                   G(".bn2.beta"));
  Matrix dh1;
  linear_backward(dz2, c.h1, p.at(prefix + ".fc2.weight"), &dh1, G(".fc2.weight"), G(".fc2.bias"));
  dropout_backward(dh1, c.mask1);
  for (std::size_t t = 0; t < dh1.size(); ++t)
    if (!(c.n1.values()[t] > 0.0)) dh1.values()[t] = 0.0;
  Matrix dz1 = batch_norm_backward(dh1, p.at(prefix + ".bn1.gamma"), c.bn1, G(".bn1.gamma"),
                                   G(".bn1.beta"));
  Matrix dx;
  linear_backward(dz1, c.x, p.at(prefix + ".fc1.weight"), need_dx ? &dx : nullptr,
                  G(".fc1.weight"), G(".fc1.bias"));
  return dx;
}

Ctx make_ctx(const ModelParams& p, const ForwardOptions& opts, BatchNormUpdate* bn) {
  Ctx ctx{opts.mode, p.config.dropout, make_rng(opts.dropout_seed, 0xd20)};
  ctx.bn = bn;
  return ctx;
}

Matrix expand_pool_grad(const Matrix& d_pooled, std::size_t seq) {
  Matrix d(d_pooled.rows() * seq, d_pooled.cols());
  const double inv = 1.0 / static_cast<double>(seq);
  for (std::size_t b = 0; b < d_pooled.rows(); ++b)
    for (std::size_t i = 0; i < seq; ++i)
      for (std::size_t j = 0; j < d.cols(); ++j) d(b * seq + i, j) = d_pooled(b, j) * inv;
  return d;
}

double evaluate_loss(const OutputLoss& loss, const Matrix& out, Matrix& d_out) {
  d_out = Matrix(out.rows(), out.cols());
  const double l = loss(out, d_out);
  if (!std::isfinite(l)) throw NumericError("non-finite loss");
  return l;
}

}  // namespace

// ---------------------------------------------------------------- public

void ModelConfig::validate() const {
  if (d_model == 0 || num_heads == 0 || d_model % num_heads != 0)
    throw ConfigError("model.d_model must be a positive multiple of model.num_heads");
  if (d_model % 2 != 0) throw ConfigError("model.d_model must be even");
  if (num_blocks == 0 || ff_dim == 0 || head_hidden1 == 0 || head_hidden2 == 0)
    throw ConfigError("model widths and block count must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model.dropout must be in [0, 1)");
  if (!(bn_momentum >= 0.0 && bn_momentum < 1.0))
    throw ConfigError("model.bn_momentum must be in [0, 1)");
}

std::string to_string(Group g) {
  switch (g) {
    case Group::kEncoder: return "encoder";
    case Group::kReconstruction: return "reconstruction";
    case Group::kClassifier: return "classifier";
  }
  return "unknown";
}

void ModelParams::reindex() {
  index_.clear();
  for (std::size_t i = 0; i < arrays.size(); ++i) index_[arrays[i].name] = i;
}

std::size_t ModelParams::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter array named '" + name + "'");
  return it->second;
}

ModelParams init_params(const ModelConfig& cfg, std::size_t channels, int classes,
                        std::uint64_t seed) {
  cfg.validate();
  if (channels == 0) throw ConfigError("model needs at least one channel");
  if (classes < 1) throw ConfigError("model needs at least one class");
  ModelParams p;
  p.config = cfg;
  p.channels = channels;
  p.classes = classes;
  auto& a = p.arrays;
  const auto enc = Group::kEncoder;
  add_linear(a, "embed", channels, cfg.d_model, enc);
  for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
    add_norm(a, block_name(b, "ln1"), cfg.d_model, enc, false);
    for (const char* proj : {"attn.q", "attn.k", "attn.v", "attn.o"})
      add_linear(a, block_name(b, proj), cfg.d_model, cfg.d_model, enc);
    add_norm(a, block_name(b, "ln2"), cfg.d_model, enc, false);
    add_linear(a, block_name(b, "ff1"), cfg.d_model, cfg.ff_dim, enc);
    add_linear(a, block_name(b, "ff2"), cfg.ff_dim, cfg.d_model, enc);
  }
  add_norm(a, "final_ln", cfg.d_model, enc, false);
  add_head(a, "recon", cfg, cfg.d_model, channels, Group::kReconstruction);
  add_head(a, "cls", cfg, cfg.d_model, static_cast<std::size_t>(classes), Group::kClassifier);
  for (std::size_t i = 0; i < a.size(); ++i) init_array(a[i], seed, i);
  p.reindex();
  return p;
}

void reinit_group(ModelParams& params, Group group, std::uint64_t seed) {
  for (std::size_t i = 0; i < params.arrays.size(); ++i)
    if (params.arrays[i].group == group) init_array(params.arrays[i], seed, i);
}

std::uint64_t content_hash(const ModelParams& params, Group group) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix_bytes = [&](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& a : params.arrays) {
    if (a.group != group) continue;
    mix_bytes(a.name.data(), a.name.size());
    for (std::size_t s : a.shape) mix_bytes(&s, sizeof s);
    mix_bytes(a.value.data(), a.value.size() * sizeof(double));
  }
  return h;
}

Matrix positional_encoding(std::size_t seq, std::size_t d_model) {
  Matrix pe(seq, d_model);
  for (std::size_t i = 0; i < seq; ++i)
    for (std::size_t m = 0; 2 * m < d_model; ++m) {
      const double angle = static_cast<double>(i) /
                           std::pow(10000.0, static_cast<double>(2 * m) / static_cast<double>(d_model));
      pe(i, 2 * m) = std::sin(angle);
      if (2 * m + 1 < d_model) pe(i, 2 * m + 1) = std::cos(angle);
    }
  return pe;
}

Matrix stack_windows(std::span<const data::SensorWindow> windows) {
  if (windows.empty()) return {};
  const std::size_t n = windows.front().length(), k = windows.front().channels();
  Matrix out(windows.size() * n, k);
  for (std::size_t b = 0; b < windows.size(); ++b) {
    if (windows[b].length() != n || windows[b].channels() != k)
      throw std::invalid_argument("stack_windows: heterogeneous window shapes");
    std::copy_n(windows[b].values.data(), n * k, out.data() + b * n * k);
  }
  return out;
}

Matrix embed(const ModelParams& p, const Matrix& input, std::size_t batch) {
  const std::size_t seq = check_input(p, input, batch);
  Matrix h = linear(input, p.at("embed.weight"), p.at("embed.bias"));
  const Matrix pe = positional_encoding(seq, p.config.d_model);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < seq; ++i)
      for (std::size_t j = 0; j < p.config.d_model; ++j) h(b * seq + i, j) += pe(i, j);
  return h;
}

Matrix encode(const ModelParams& params, const Matrix& input, std::size_t batch,
              const ForwardOptions& opts) {
  Ctx ctx = make_ctx(params, opts, nullptr);
  return encoder_forward(params, input, batch, ctx, nullptr);
}

Matrix reconstruct(const ModelParams& params, const Matrix& features, const ForwardOptions& opts) {
  if (features.cols() != params.config.d_model)
    throw std::invalid_argument("reconstruct: feature width does not match d_model");
  Ctx ctx = make_ctx(params, opts, nullptr);
  HeadCache c;
  return head_forward(params, "recon", features, ctx, c);
}

Matrix pool_time(const Matrix& features, std::size_t batch) {
  if (batch == 0 || features.rows() % batch != 0)
    throw std::invalid_argument("pool_time: rows not divisible by batch size");
  const std::size_t seq = features.rows() / batch;
  Matrix out(batch, features.cols());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < seq; ++i)
      for (std::size_t j = 0; j < features.cols(); ++j) out(b, j) += features(b * seq + i, j);
    for (std::size_t j = 0; j < features.cols(); ++j) out(b, j) /= static_cast<double>(seq);
  }
  return out;
}

Matrix classify_pooled(const ModelParams& params, const Matrix& pooled, const ForwardOptions& opts) {
  if (pooled.cols() != params.config.d_model)
    throw std::invalid_argument("classify: feature width does not match d_model");
  Ctx ctx = make_ctx(params, opts, nullptr);
  HeadCache c;
  return head_forward(params, "cls", pooled, ctx, c);
}

Matrix classify(const ModelParams& params, const Matrix& features, std::size_t batch,
                const ForwardOptions& opts) {
  return classify_pooled(params, pool_time(features, batch), opts);
}

void apply_batchnorm_update(ModelParams& params, const BatchNormUpdate& update) {
  const double m = params.config.bn_momentum;
  for (const auto& e : update.entries) {
    auto rm = params.arrays[e.mean_index].value.row(0);
    auto rv = params.arrays[e.var_index].value.row(0);
    for (std::size_t j = 0; j < rm.size(); ++j) {
      rm[j] = m * rm[j] + (1.0 - m) * e.batch_mean[j];
      rv[j] = m * rv[j] + (1.0 - m) * e.batch_var[j];
    }
  }
}

Gradients Gradients::zeros_like(const ModelParams& params) {
  Gradients g;
  g.arrays.reserve(params.arrays.size());
  for (const auto& a : params.arrays) g.arrays.emplace_back(a.value.rows(), a.value.cols());
  return g;
}

GradientResult gradients(const ModelParams& params, const Matrix& input, std::size_t batch,
                         Head head, const OutputLoss& loss, const ForwardOptions& opts) {
  GradientResult r;
  Ctx ctx = make_ctx(params, opts, &r.batchnorm);
  EncoderCache ec;
  Matrix features = encoder_forward(params, input, batch, ctx, &ec);
  HeadCache hc;
  const bool cls = head == Head::kClassifier;
  const std::string prefix = cls ? "cls" : "recon";
  const Group head_group = cls ? Group::kClassifier : Group::kReconstruction;
  Matrix out = cls ? head_forward(params, prefix, pool_time(features, batch), ctx, hc)
                   : head_forward(params, prefix, features, ctx, hc);
  r.relu_pattern = ctx.relu_hash;
  Matrix d_out;
  r.loss = evaluate_loss(loss, out, d_out);
  r.grads = Gradients::zeros_like(params);
  const bool train_encoder = !params.is_frozen(Group::kEncoder);
  Matrix d_feat = head_backward(params, prefix, hc, d_out, r.grads,
                                !params.is_frozen(head_group), train_encoder);
  if (train_encoder) {
    if (cls) d_feat = expand_pool_grad(d_feat, ec.seq);
    encoder_backward(params, ec, d_feat, r.grads);
  }
  return r;
}

GradientResult classifier_gradients(const ModelParams& params, const Matrix& pooled,
                                    const OutputLoss& loss, const ForwardOptions& opts) {
  GradientResult r;
  Ctx ctx = make_ctx(params, opts, &r.batchnorm);
  HeadCache hc;
  Matrix out = head_forward(params, "cls", pooled, ctx, hc);
  r.relu_pattern = ctx.relu_hash;
  Matrix d_out;
  r.loss = evaluate_loss(loss, out, d_out);
  r.grads = Gradients::zeros_like(params);
  if (!params.is_frozen(Group::kClassifier))
    head_backward(params, "cls", hc, d_out, r.grads, true, false);
  return r;
}

LossProbe probe_loss(const ModelParams& params, const Matrix& input, std::size_t batch, Head head,
                     const OutputLoss& loss, const ForwardOptions& opts) {
  Ctx ctx = make_ctx(params, opts, nullptr);
  Matrix features = encoder_forward(params, input, batch, ctx, nullptr);
  HeadCache hc;
  Matrix out = head == Head::kClassifier
                   ? head_forward(params, "cls", pool_time(features, batch), ctx, hc)
                   : head_forward(params, "recon", features, ctx, hc);
  Matrix d_out;
  LossProbe p;
  p.loss = evaluate_loss(loss, out, d_out);
  p.relu_pattern = ctx.relu_hash;
  return p;
}

}  // namespace maskrec::model

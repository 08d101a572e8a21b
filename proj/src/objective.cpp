#include "maskrec/objective.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "maskrec/error.hpp"

namespace maskrec::objective {

namespace {

std::size_t window_seq(const Matrix& raw, std::size_t windows) {
  if (windows == 0 || raw.rows() % windows != 0)
    throw std::invalid_argument("loss: rows not divisible by the number of mask specs");
  return raw.rows() / windows;
}

}  // namespace

std::size_t selected_cells(std::size_t seq, std::size_t channels,
                           std::span<const masking::MaskSpec> specs, Axis axis) {
  std::size_t n = 0;
  for (const auto& s : specs)
    n += axis == Axis::kTime ? s.time_indices.size() * channels : s.channel_indices.size() * seq;
  return n;
}

double masked_mse(const Matrix& raw, const Matrix& rec, std::span<const masking::MaskSpec> specs,
                  Axis axis, Matrix* grad, double grad_scale) {
  if (raw.rows() != rec.rows() || raw.cols() != rec.cols())
    throw std::invalid_argument("masked_mse: raw and reconstruction shapes differ");
  const std::size_t seq = window_seq(raw, specs.size()), k = raw.cols();
  const std::size_t count = selected_cells(seq, k, specs, axis);
  if (count == 0) throw UndefinedLossError("masked_mse: no masked cells on this axis");
  if (grad && (grad->rows() != raw.rows() || grad->cols() != k))
    throw std::invalid_argument("masked_mse: gradient buffer shape");
  const double inv = 1.0 / static_cast<double>(count);
  double sum = 0.0;
  auto visit = [&](std::size_t r, std::size_t j) {
    const double d = rec(r, j) - raw(r, j);
    sum += d * d;
    if (grad) (*grad)(r, j) += grad_scale * 2.0 * d * inv;
  };
  for (std::size_t b = 0; b < specs.size(); ++b) {
    const auto& s = specs[b];
    if (axis == Axis::kTime) {
      for (std::size_t i : s.time_indices) {
        if (i >= seq) throw std::invalid_argument("masked_mse: time index out of range");
        for (std::size_t j = 0; j < k; ++j) visit(b * seq + i, j);
      }
    } else {
      for (std::size_t j : s.channel_indices) {
        if (j >= k) throw std::invalid_argument("masked_mse: channel index out of range");
        for (std::size_t i = 0; i < seq; ++i) visit(b * seq + i, j);
      }
    }
  }
  return sum * inv;
}

LossBreakdown combined_loss(const Matrix& raw, const Matrix& rec,
                            std::span<const masking::MaskSpec> specs, double alpha, Matrix* grad) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must be in [0, 1]");
  LossBreakdown out;
  out.has_time = std::any_of(specs.begin(), specs.end(),
                             [](const auto& s) { return !s.time_indices.empty(); });
  out.has_channel = std::any_of(specs.begin(), specs.end(),
                                [](const auto& s) { return !s.channel_indices.empty(); });
  if (!out.has_time && !out.has_channel)
    throw UndefinedLossError("combined_loss: mask selects no cells on either axis");
  out.alpha = out.has_time && out.has_channel ? alpha : (out.has_time ? 1.0 : 0.0);
  if (out.has_time) out.loss_time = masked_mse(raw, rec, specs, Axis::kTime, grad, out.alpha);
  if (out.has_channel)
    out.loss_channel = masked_mse(raw, rec, specs, Axis::kChannel, grad, 1.0 - out.alpha);
  out.combined = out.alpha * out.loss_time + (1.0 - out.alpha) * out.loss_channel;
  return out;
}

double cross_entropy(const Matrix& logits, std::span<const int> labels, Matrix* grad) {
  const std::size_t b = logits.rows(), a = logits.cols();
  if (labels.size() != b) throw std::invalid_argument("cross_entropy: label count mismatch");
  if (b == 0) throw UndefinedLossError("cross_entropy: empty batch");
  if (grad) *grad = Matrix(b, a);
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= a)
      throw std::invalid_argument("cross_entropy: label " + std::to_string(y) + " out of range");
    const auto row = logits.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    const double log_z = std::log(z) + mx;
    total += log_z - row[static_cast<std::size_t>(y)];
    if (grad) {
      for (std::size_t j = 0; j < a; ++j) (*grad)(i, j) = std::exp(row[j] - log_z) / static_cast<double>(b);
      (*grad)(i, static_cast<std::size_t>(y)) -= 1.0 / static_cast<double>(b);
    }
  }
  return total / static_cast<double>(b);
}

}  // namespace maskrec::objective

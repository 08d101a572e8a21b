#pragma once

// Masked reconstruction losses and downstream cross-entropy.
//
// Reconstruction tensors are stacked (batch * seq) x channels with one MaskSpec
// per window. A loss is the mean of squared errors over its selected cells,
// pooled across the batch:
//   time axis    -> cells (i, j) with i in T (all channels of masked steps)
//   channel axis -> cells (i, j) with j in C (all steps of masked channels)
// Cells in both T and C count towards both terms.

#include <cstddef>
#include <span>

#include "maskrec/masking.hpp"
#include "maskrec/tensor.hpp"

namespace maskrec::objective {

enum class Axis { kTime, kChannel };

struct LossBreakdown {
  double loss_time = 0.0;
  double loss_channel = 0.0;
  double combined = 0.0;
  /// Weight actually applied to loss_time: the requested alpha when both
  /// axes are masked, 1 when only T is non-empty, 0 when only C is.
  double alpha = 0.5;
  bool has_time = false;
  bool has_channel = false;
};

/// Number of cells the given axis selects.
std::size_t selected_cells(std::size_t seq, std::size_t channels,
                           std::span<const masking::MaskSpec> specs, Axis axis);

/// Pooled MSE over the selected cells. If `grad` is non-null, adds
/// grad_scale * d(loss)/d(rec) into it. Throws UndefinedLossError when no
/// cell is selected and std::invalid_argument on shape mismatch.
double masked_mse(const Matrix& raw, const Matrix& rec, std::span<const masking::MaskSpec> specs,
                  Axis axis, Matrix* grad = nullptr, double grad_scale = 1.0);

/// alpha * loss_time + (1 - alpha) * loss_channel, reducing to the single
/// defined term when one axis has no masked cells. Throws UndefinedLossError
/// if neither axis is masked and ConfigError if alpha is outside [0, 1].
LossBreakdown combined_loss(const Matrix& raw, const Matrix& rec,
                            std::span<const masking::MaskSpec> specs, double alpha,
                            Matrix* grad = nullptr);

/// Mean negative log-softmax of the true class (max-subtracted). If `grad` is
/// non-null it is overwritten with d(loss)/d(logits). Throws
/// std::invalid_argument for labels outside [0, classes).
double cross_entropy(const Matrix& logits, std::span<const int> labels, Matrix* grad = nullptr);

}  // namespace maskrec::objective

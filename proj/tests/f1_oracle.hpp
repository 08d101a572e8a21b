#pragma once

// Brute-force macro F1 from an explicit A x A confusion matrix.

#include <vector>

namespace maskrec::testing {

struct F1Oracle {
  double mean = 0.0;
  std::vector<double> per_class;
};

inline F1Oracle brute_force_f1(const std::vector<int>& preds, const std::vector<int>& labels, int a) {
  const auto n = static_cast<std::size_t>(a);
  std::vector<std::vector<long>> cm(n, std::vector<long>(n, 0));  // [label][pred]
  for (std::size_t i = 0; i < preds.size(); ++i) ++cm[labels[i]][preds[i]];
  F1Oracle out;
  out.per_class.assign(n, 0.0);
  double sum = 0;
  int scored = 0;
  for (std::size_t c = 0; c < n; ++c) {
    long row = 0, col = 0;
    for (std::size_t k = 0; k < n; ++k) row += cm[c][k], col += cm[k][c];
    if (row == 0 && col == 0) continue;
    const long tp = cm[c][c], fn = row - tp, fp = col - tp;
    out.per_class[c] = tp == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
    sum += out.per_class[c];
    ++scored;
  }
  out.mean = scored == 0 ? 0.0 : sum / scored;
  return out;
}

}  // namespace maskrec::testing

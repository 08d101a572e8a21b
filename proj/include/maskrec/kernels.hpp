#pragma once

// Dense kernels used by the model. Two implementations share one signature
// set: `kernels::` is the OpenMP version the model calls, `kernels::serial::`
// is a plain triple-loop reference kept for tests and the benchmark.
//
// Every parallel kernel assigns each output element to exactly one thread and
// accumulates it in a fixed index order, so results do not depend on the
// thread count.

#include <cstddef>
#include <span>

#include "maskrec/tensor.hpp"

namespace maskrec::kernels {

/// C = A * B^T.  A: m x k, B: n x k, C: m x n.
void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c);
/// C = A * B.  A: m x k, B: k x n.
void matmul_nn(const Matrix& a, const Matrix& b, Matrix& c);
/// C = A^T * B.  A: m x k, B: m x n, C: k x n.
void matmul_tn(const Matrix& a, const Matrix& b, Matrix& c);

/// Adds `bias` to every row of `m`.
void add_row_bias(Matrix& m, std::span<const double> bias);
/// out[j] = sum_i m(i, j).
void column_sums(const Matrix& m, std::span<double> out);

/// Multi-head scaled dot-product self-attention over `batch` sequences of
/// length `seq`. q, k, v, out: (batch*seq) x d_model; head h owns columns
/// [h*dh, (h+1)*dh). `probs` receives softmax weights, laid out
/// [batch][head][query][key], and must hold batch*heads*seq*seq values.
void attention_forward(const Matrix& q, const Matrix& k, const Matrix& v,
                       std::size_t batch, std::size_t seq, std::size_t heads,
                       std::span<double> probs, Matrix& out);

/// Backward of attention_forward given d(out). Writes dq, dk, dv.
void attention_backward(const Matrix& q, const Matrix& k, const Matrix& v,
                        std::span<const double> probs, const Matrix& d_out,
                        std::size_t batch, std::size_t seq, std::size_t heads,
                        Matrix& dq, Matrix& dk, Matrix& dv);

namespace serial {

void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c);
void matmul_nn(const Matrix& a, const Matrix& b, Matrix& c);
void matmul_tn(const Matrix& a, const Matrix& b, Matrix& c);
void attention_forward(const Matrix& q, const Matrix& k, const Matrix& v,
                       std::size_t batch, std::size_t seq, std::size_t heads,
                       std::span<double> probs, Matrix& out);
void attention_backward(const Matrix& q, const Matrix& k, const Matrix& v,
                        std::span<const double> probs, const Matrix& d_out,
                        std::size_t batch, std::size_t seq, std::size_t heads,
                        Matrix& dq, Matrix& dk, Matrix& dv);

}  // namespace serial

}  // namespace maskrec::kernels

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include <omp.h>

#include "maskrec/kernels.hpp"
#include "test_util.hpp"

namespace maskrec {
namespace {

using testing::random_matrix;

Matrix transpose(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
  return t;
}

void expect_near(const Matrix& a, const Matrix& b, double tol) {
  ASSERT_EQ(a.rows(), b.rows());
  ASSERT_EQ(a.cols(), b.cols());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.values()[i], b.values()[i], tol) << i;
}

TEST(Matmul, HandExample) {
  Matrix a(2, 2), b(2, 2), c;
  a(0, 0) = 1, a(0, 1) = 2, a(1, 0) = 3, a(1, 1) = 4;
  b(0, 0) = 5, b(0, 1) = 6, b(1, 0) = 7, b(1, 1) = 8;
  kernels::matmul_nn(a, b, c);
  EXPECT_EQ(c(0, 0), 19);
  EXPECT_EQ(c(0, 1), 22);
  EXPECT_EQ(c(1, 0), 43);
  EXPECT_EQ(c(1, 1), 50);
}

TEST(Matmul, ParallelMatchesSerial) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const std::size_t m = 3 + s * 7, k = 5 + s * 3, n = 4 + s * 5;
    const auto a = random_matrix(m, k, s), b = random_matrix(k, n, s + 100);
    Matrix p, q;
    kernels::matmul_nn(a, b, p);
    kernels::serial::matmul_nn(a, b, q);
    expect_near(p, q, 1e-12);

    const auto bt = transpose(b);
    kernels::matmul_nt(a, bt, p);
    expect_near(p, q, 1e-12);
    kernels::serial::matmul_nt(a, bt, p);
    expect_near(p, q, 1e-12);

    const auto at = transpose(a);
    kernels::matmul_tn(at, b, p);
    expect_near(p, q, 1e-12);
    kernels::serial::matmul_tn(at, b, p);
    expect_near(p, q, 1e-12);
  }
}

TEST(Matmul, ThreadCountDoesNotChangeBits) {
  const auto a = random_matrix(64, 48, 1), b = random_matrix(40, 48, 2);
  Matrix one, many;
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  kernels::matmul_nt(a, b, one);
  omp_set_num_threads(4);
  kernels::matmul_nt(a, b, many);
  omp_set_num_threads(saved);
  EXPECT_EQ(one, many);
}

TEST(Kernels, BiasAndColumnSums) {
  Matrix m(3, 2, 1.0);
  const std::vector<double> bias{0.5, -1.0};
  kernels::add_row_bias(m, bias);
  EXPECT_EQ(m(2, 0), 1.5);
  EXPECT_EQ(m(1, 1), 0.0);
  std::vector<double> sums(2);
  kernels::column_sums(m, sums);
  EXPECT_EQ(sums[0], 4.5);
  EXPECT_EQ(sums[1], 0.0);
}

// Direct single-head oracle written from the attention definition.
Matrix attention_oracle(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t batch,
                        std::size_t seq, std::size_t heads) {
  const std::size_t d = q.cols(), dh = d / heads;
  Matrix out(q.rows(), d);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < seq; ++i) {
        std::vector<long double> w(seq);
        long double total = 0;
        for (std::size_t j = 0; j < seq; ++j) {
          long double dot = 0;
          for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) dot += q(b * seq + i, c) * k(b * seq + j, c);
          w[j] = std::exp(dot / std::sqrt(static_cast<long double>(dh)));
          total += w[j];
        }
        for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) {
          long double acc = 0;
          for (std::size_t j = 0; j < seq; ++j) acc += w[j] / total * v(b * seq + j, c);
          out(b * seq + i, c) = static_cast<double>(acc);
        }
      }
  return out;
}

TEST(Attention, MatchesOracleAndSerial) {
  const std::size_t batch = 2, seq = 5, heads = 2, d = 6;
  const auto q = random_matrix(batch * seq, d, 1), k = random_matrix(batch * seq, d, 2),
             v = random_matrix(batch * seq, d, 3);
  std::vector<double> pp(batch * heads * seq * seq), ps(pp.size());
  Matrix op, os;
  kernels::attention_forward(q, k, v, batch, seq, heads, pp, op);
  kernels::serial::attention_forward(q, k, v, batch, seq, heads, ps, os);
  expect_near(op, attention_oracle(q, k, v, batch, seq, heads), 1e-12);
  expect_near(op, os, 1e-12);
  for (std::size_t r = 0; r < batch * heads * seq; ++r) {
    double s = 0;
    for (std::size_t j = 0; j < seq; ++j) s += pp[r * seq + j];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Attention, BackwardMatchesFiniteDifferences) {
  const std::size_t batch = 2, seq = 4, heads = 2, d = 4;
  auto q = random_matrix(batch * seq, d, 4), k = random_matrix(batch * seq, d, 5),
       v = random_matrix(batch * seq, d, 6);
  const auto g = random_matrix(batch * seq, d, 7);
  std::vector<double> probs(batch * heads * seq * seq);
  auto objective = [&](const Matrix& qq, const Matrix& kk, const Matrix& vv) {
    Matrix out;
    std::vector<double> p(probs.size());
    kernels::serial::attention_forward(qq, kk, vv, batch, seq, heads, p, out);
    double s = 0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out.values()[i] * g.values()[i];
    return s;
  };
  Matrix out, dq, dk, dv, sq, sk, sv;
  kernels::attention_forward(q, k, v, batch, seq, heads, probs, out);
  kernels::attention_backward(q, k, v, probs, g, batch, seq, heads, dq, dk, dv);
  kernels::serial::attention_backward(q, k, v, probs, g, batch, seq, heads, sq, sk, sv);
  expect_near(dq, sq, 1e-12);
  expect_near(dk, sk, 1e-12);
  expect_near(dv, sv, 1e-12);

  const double eps = 1e-6;
  for (Matrix* which : {&q, &k, &v}) {
    const Matrix& grad = which == &q ? dq : which == &k ? dk : dv;
    for (std::size_t i = 0; i < which->size(); i += 3) {
      const double saved = which->values()[i];
      which->values()[i] = saved + eps;
      const double up = objective(q, k, v);
      which->values()[i] = saved - eps;
      const double down = objective(q, k, v);
      which->values()[i] = saved;
      EXPECT_NEAR(grad.values()[i], (up - down) / (2 * eps), 1e-7);
    }
  }
}

}  // namespace
}  // namespace maskrec

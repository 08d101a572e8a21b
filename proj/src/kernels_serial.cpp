#include <cmath>
#include <stdexcept>
#include <vector>

#include "maskrec/kernels.hpp"

namespace maskrec::kernels::serial {

void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c) {
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt: inner dimension mismatch");
  c = Matrix(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) s += a(i, p) * b(j, p);
      c(i, j) = s;
    }
}

void matmul_nn(const Matrix& a, const Matrix& b, Matrix& c) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul_nn: inner dimension mismatch");
  c = Matrix(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) s += a(i, p) * b(p, j);
      c(i, j) = s;
    }
}

void matmul_tn(const Matrix& a, const Matrix& b, Matrix& c) {
  if (a.rows() != b.rows()) throw std::invalid_argument("matmul_tn: row count mismatch");
  c = Matrix(a.cols(), b.cols());
  for (std::size_t i = 0; i < a.cols(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < a.rows(); ++r) s += a(r, i) * b(r, j);
      c(i, j) = s;
    }
}

void attention_forward(const Matrix& q, const Matrix& k, const Matrix& v,
                       std::size_t batch, std::size_t seq, std::size_t heads,
                       std::span<double> probs, Matrix& out) {
  const std::size_t d = q.cols(), dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  out = Matrix(q.rows(), d);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h) {
      double* p = probs.data() + (b * heads + h) * seq * seq;
      for (std::size_t i = 0; i < seq; ++i) {
        std::vector<double> s(seq);
        for (std::size_t j = 0; j < seq; ++j) {
          double acc = 0.0;
          for (std::size_t t = 0; t < dh; ++t)
            acc += q(b * seq + i, h * dh + t) * k(b * seq + j, h * dh + t);
          s[j] = acc * scale;
        }
        double mx = s[0];
        for (double x : s) mx = std::max(mx, x);
        double z = 0.0;
        for (double x : s) z += std::exp(x - mx);
        for (std::size_t j = 0; j < seq; ++j) p[i * seq + j] = std::exp(s[j] - mx) / z;
        for (std::size_t t = 0; t < dh; ++t) {
          double acc = 0.0;
          for (std::size_t j = 0; j < seq; ++j) acc += p[i * seq + j] * v(b * seq + j, h * dh + t);
          out(b * seq + i, h * dh + t) = acc;
        }
      }
    }
}

void attention_backward(const Matrix& q, const Matrix& k, const Matrix& v,
                        std::span<const double> probs, const Matrix& d_out,
                        std::size_t batch, std::size_t seq, std::size_t heads,
                        Matrix& dq, Matrix& dk, Matrix& dv) {
  const std::size_t d = q.cols(), dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  dq = Matrix(q.rows(), d);
  dk = Matrix(q.rows(), d);
  dv = Matrix(q.rows(), d);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h) {
      const double* p = probs.data() + (b * heads + h) * seq * seq;
      auto P = [&](std::size_t i, std::size_t j) { return p[i * seq + j]; };
      // dP = dO V^T
      std::vector<double> dp(seq * seq, 0.0);
      for (std::size_t i = 0; i < seq; ++i)
        for (std::size_t j = 0; j < seq; ++j)
          for (std::size_t t = 0; t < dh; ++t)
            dp[i * seq + j] += d_out(b * seq + i, h * dh + t) * v(b * seq + j, h * dh + t);
      // dS = P * (dP - rowsum(P * dP))
      std::vector<double> ds(seq * seq);
      for (std::size_t i = 0; i < seq; ++i) {
        double rs = 0.0;
        for (std::size_t j = 0; j < seq; ++j) rs += P(i, j) * dp[i * seq + j];
        for (std::size_t j = 0; j < seq; ++j) ds[i * seq + j] = P(i, j) * (dp[i * seq + j] - rs);
      }
      for (std::size_t i = 0; i < seq; ++i)
        for (std::size_t t = 0; t < dh; ++t) {
          double gq = 0.0, gk = 0.0, gv = 0.0;
          for (std::size_t j = 0; j < seq; ++j) {
            gq += ds[i * seq + j] * k(b * seq + j, h * dh + t);
            gk += ds[j * seq + i] * q(b * seq + j, h * dh + t);
            gv += P(j, i) * d_out(b * seq + j, h * dh + t);
          }
          dq(b * seq + i, h * dh + t) = gq * scale;
          dk(b * seq + i, h * dh + t) = gk * scale;
          dv(b * seq + i, h * dh + t) = gv;
        }
    }
}

}  // namespace maskrec::kernels::serial

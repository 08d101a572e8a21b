#include "maskrec/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace maskrec::kernels {

namespace {

using Index = std::ptrdiff_t;

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

}  // namespace

void matmul_nn(const Matrix& a, const Matrix& b, Matrix& c) {
  require(a.cols() == b.rows(), "matmul_nn: inner dimension mismatch");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (c.rows() != m || c.cols() != n) c = Matrix(m, n);
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < static_cast<Index>(m); ++i) {
    double* crow = pc + i * n;
    std::fill(crow, crow + n, 0.0);
    const double* arow = pa + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c) {
  require(a.cols() == b.cols(), "matmul_nt: inner dimension mismatch");
  const std::size_t k = b.cols(), n = b.rows();
  Matrix bt(k, n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt(p, j) = b(j, p);
  matmul_nn(a, bt, c);
}

void matmul_tn(const Matrix& a, const Matrix& b, Matrix& c) {
  require(a.rows() == b.rows(), "matmul_tn: row count mismatch");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (c.rows() != k || c.cols() != n) c = Matrix(k, n);
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < static_cast<Index>(k); ++i) {
    double* crow = pc + i * n;
    std::fill(crow, crow + n, 0.0);
    for (std::size_t r = 0; r < m; ++r) {
      const double av = pa[r * k + i];
      if (av == 0.0) continue;
      const double* brow = pb + r * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void add_row_bias(Matrix& m, std::span<const double> bias) {
  require(bias.size() == m.cols(), "add_row_bias: width mismatch");
  const std::size_t n = m.cols();
  double* p = m.data();
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < static_cast<Index>(m.rows()); ++i)
    for (std::size_t j = 0; j < n; ++j) p[i * n + j] += bias[j];
}

void column_sums(const Matrix& m, std::span<double> out) {
  require(out.size() == m.cols(), "column_sums: width mismatch");
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto r = m.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) out[j] += r[j];
  }
}

void attention_forward(const Matrix& q, const Matrix& k, const Matrix& v,
                       std::size_t batch, std::size_t seq, std::size_t heads,
                       std::span<double> probs, Matrix& out) {
  const std::size_t d = q.cols();
  require(heads > 0 && d % heads == 0, "attention: d_model not divisible by heads");
  require(q.rows() == batch * seq && k.rows() == q.rows() && v.rows() == q.rows(),
          "attention: row count mismatch");
  require(probs.size() == batch * heads * seq * seq, "attention: probs size");
  if (out.rows() != q.rows() || out.cols() != d) out = Matrix(q.rows(), d);
  const std::size_t dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

#pragma omp parallel for schedule(static)
  for (Index pair = 0; pair < static_cast<Index>(batch * heads); ++pair) {
    const std::size_t b = static_cast<std::size_t>(pair) / heads;
    const std::size_t h = static_cast<std::size_t>(pair) % heads;
    const std::size_t row0 = b * seq, col0 = h * dh;
    double* p = probs.data() + static_cast<std::size_t>(pair) * seq * seq;
    for (std::size_t i = 0; i < seq; ++i) {
      const double* qi = q.data() + (row0 + i) * d + col0;
      double* pi = p + i * seq;
      double mx = -INFINITY;
      for (std::size_t j = 0; j < seq; ++j) {
        const double* kj = k.data() + (row0 + j) * d + col0;
        double s = 0.0;
        for (std::size_t t = 0; t < dh; ++t) s += qi[t] * kj[t];
        pi[j] = s * scale;
        mx = std::max(mx, pi[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < seq; ++j) {
        pi[j] = std::exp(pi[j] - mx);
        z += pi[j];
      }
      const double inv = 1.0 / z;
      double* oi = out.data() + (row0 + i) * d + col0;
      std::fill(oi, oi + dh, 0.0);
      for (std::size_t j = 0; j < seq; ++j) {
        pi[j] *= inv;
        const double* vj = v.data() + (row0 + j) * d + col0;
        for (std::size_t t = 0; t < dh; ++t) oi[t] += pi[j] * vj[t];
      }
    }
  }
}

void attention_backward(const Matrix& q, const Matrix& k, const Matrix& v,
                        std::span<const double> probs, const Matrix& d_out,
                        std::size_t batch, std::size_t seq, std::size_t heads,
                        Matrix& dq, Matrix& dk, Matrix& dv) {
  const std::size_t d = q.cols();
  require(heads > 0 && d % heads == 0, "attention: d_model not divisible by heads");
  require(d_out.rows() == q.rows() && d_out.cols() == d, "attention: d_out shape");
  const std::size_t dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  dq = Matrix(q.rows(), d);
  dk = Matrix(q.rows(), d);
  dv = Matrix(q.rows(), d);

#pragma omp parallel for schedule(static)
  for (Index pair = 0; pair < static_cast<Index>(batch * heads); ++pair) {
    const std::size_t b = static_cast<std::size_t>(pair) / heads;
    const std::size_t h = static_cast<std::size_t>(pair) % heads;
    const std::size_t row0 = b * seq, col0 = h * dh;
    const double* p = probs.data() + static_cast<std::size_t>(pair) * seq * seq;
    std::vector<double> ds(seq);
    for (std::size_t i = 0; i < seq; ++i) {
      const double* pi = p + i * seq;
      const double* doi = d_out.data() + (row0 + i) * d + col0;
      double dot = 0.0;
      for (std::size_t j = 0; j < seq; ++j) {
        const double* vj = v.data() + (row0 + j) * d + col0;
        double dp = 0.0;
        for (std::size_t t = 0; t < dh; ++t) dp += doi[t] * vj[t];
        ds[j] = dp;
        dot += pi[j] * dp;
      }
      const double* qi = q.data() + (row0 + i) * d + col0;
      double* dqi = dq.data() + (row0 + i) * d + col0;
      for (std::size_t j = 0; j < seq; ++j) {
        const double g = pi[j] * (ds[j] - dot) * scale;
        const double* kj = k.data() + (row0 + j) * d + col0;
        double* dkj = dk.data() + (row0 + j) * d + col0;
        double* dvj = dv.data() + (row0 + j) * d + col0;
        for (std::size_t t = 0; t < dh; ++t) {
          dqi[t] += g * kj[t];
          dkj[t] += g * qi[t];
          dvj[t] += pi[j] * doi[t];
        }
      }
    }
  }
}

}  // namespace maskrec::kernels

#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "maskrec/error.hpp"
#include "maskrec/masking.hpp"
#include "maskrec/model.hpp"
#include "maskrec/objective.hpp"
#include "test_util.hpp"

namespace maskrec::model {
namespace {

using testing::random_matrix;

ModelConfig small_config() {
  ModelConfig c;
  c.d_model = 16;
  c.num_heads = 2;
  c.ff_dim = 32;
  c.head_hidden1 = 32;
  c.head_hidden2 = 16;
  return c;
}

TEST(Init, ShapesFromConfig) {
  const auto p = init_params(ModelConfig{}, 6, 12, 0);
  EXPECT_EQ(p.at("embed.weight").shape, (std::vector<std::size_t>{128, 6}));
  EXPECT_EQ(p.at("cls.fc3.weight").shape, (std::vector<std::size_t>{12, 128}));
  EXPECT_EQ(p.at("recon.fc1.weight").shape, (std::vector<std::size_t>{256, 128}));
  EXPECT_EQ(p.at("recon.fc2.weight").shape, (std::vector<std::size_t>{128, 256}));
  EXPECT_EQ(p.at("recon.fc3.weight").shape, (std::vector<std::size_t>{6, 128}));
  EXPECT_TRUE(p.contains("block2.attn.q.weight"));
  EXPECT_FALSE(p.contains("block3.attn.q.weight"));
  EXPECT_FALSE(p.at("recon.bn1.running_mean").trainable);
}

TEST(Init, DeterministicAndBounded) {
  const auto a = init_params(small_config(), 3, 4, 7), b = init_params(small_config(), 3, 4, 7);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, init_params(small_config(), 3, 4, 8));
  const auto& w = a.at("block0.ff1.weight").value;
  const double bound = std::sqrt(3.0 / 16.0);
  for (double v : w.values()) EXPECT_LE(std::abs(v), bound);
  for (double v : a.at("block0.ff1.bias").value.values()) EXPECT_EQ(v, 0.0);
  for (double v : a.at("recon.bn1.gamma").value.values()) EXPECT_EQ(v, 1.0);
  for (double v : a.at("recon.bn1.running_var").value.values()) EXPECT_EQ(v, 1.0);
}

TEST(Init, RejectsBadConfig) {
  ModelConfig c = small_config();
  c.num_heads = 3;
  EXPECT_THROW(init_params(c, 3, 4, 0), ConfigError);
}

TEST(PositionalEncoding, Definition) {
  const auto pe = positional_encoding(50, 128);
  for (std::size_t m = 0; m < 64; ++m) {
    EXPECT_EQ(pe(0, 2 * m), 0.0);
    EXPECT_EQ(pe(0, 2 * m + 1), 1.0);
  }
  for (std::size_t i = 0; i < 50; ++i)
    for (std::size_t m = 0; m < 64; ++m) {
      const double angle = i / std::pow(10000.0, 2.0 * m / 128.0);
      EXPECT_NEAR(pe(i, 2 * m), std::sin(angle), 1e-12);
      EXPECT_NEAR(pe(i, 2 * m + 1), std::cos(angle), 1e-12);
      EXPECT_LE(std::abs(pe(i, 2 * m)), 1.0);
    }
}

TEST(Encode, Shape) {
  const auto p = init_params(ModelConfig{}, 2, 3, 0);
  const auto out = encode(p, random_matrix(4, 2, 1), 1);
  EXPECT_EQ(out.rows(), 4u);
  EXPECT_EQ(out.cols(), 128u);
  EXPECT_THROW(encode(p, random_matrix(4, 3, 1), 1), std::invalid_argument);
}

TEST(Encode, BatchPermutationEquivariant) {
  const auto p = init_params(small_config(), 3, 4, 1);
  const std::size_t n = 5;
  const auto x = random_matrix(3 * n, 3, 2);
  Matrix perm(3 * n, 3);
  const std::size_t order[3] = {2, 0, 1};
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < 3; ++j) perm(b * n + i, j) = x(order[b] * n + i, j);
  const auto y = encode(p, x, 3), yp = encode(p, perm, 3);
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < 16; ++j) EXPECT_NEAR(yp(b * n + i, j), y(order[b] * n + i, j), 1e-12);
}

TEST(Encode, ZeroInputSeesOnlyPositions) {
  const auto p = init_params(small_config(), 3, 4, 2);
  const auto emb = embed(p, Matrix(6, 3), 1);
  const auto pe = positional_encoding(6, 16);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 16; ++j) EXPECT_EQ(emb(i, j), pe(i, j));  // biases are 0
  // Two zero windows encode identically regardless of batch position.
  const auto y = encode(p, Matrix(12, 3), 2);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 16; ++j) EXPECT_EQ(y(i, j), y(6 + i, j));
}

TEST(Reconstruct, ShapeAndDeterminism) {
  const auto p = init_params(small_config(), 3, 4, 3);
  const auto feat = encode(p, random_matrix(8, 3, 4), 2);
  const auto r1 = reconstruct(p, feat), r2 = reconstruct(p, feat);
  EXPECT_EQ(r1.rows(), 8u);
  EXPECT_EQ(r1.cols(), 3u);
  EXPECT_EQ(r1, r2);
  const ForwardOptions train{Mode::kTrain, 99};
  EXPECT_EQ(reconstruct(p, feat, train), reconstruct(p, feat, train));
  EXPECT_NE(reconstruct(p, feat, train), reconstruct(p, feat, ForwardOptions{Mode::kTrain, 100}));
  EXPECT_NE(reconstruct(p, feat, train), r1);
}

TEST(Classify, ShapeDuplicationAndPooling) {
  const auto p = init_params(small_config(), 3, 5, 4);
  const std::size_t n = 4;
  auto x = random_matrix(2 * n, 3, 5);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < 3; ++j) x(n + i, j) = x(i, j);
  const auto logits = classify(p, encode(p, x, 2), 2);
  EXPECT_EQ(logits.rows(), 2u);
  EXPECT_EQ(logits.cols(), 5u);
  for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(logits(0, c), logits(1, c));

  Matrix constant(3 * n, 2);
  for (std::size_t r = 0; r < 3 * n; ++r) constant(r, 0) = 1.5, constant(r, 1) = static_cast<double>(r / n);
  const auto pooled = pool_time(constant, 3);
  for (std::size_t b = 0; b < 3; ++b) {
    EXPECT_EQ(pooled(b, 0), 1.5);
    EXPECT_EQ(pooled(b, 1), static_cast<double>(b));
  }
}

TEST(BatchNorm, UpdateMovesRunningStats) {
  auto p = init_params(small_config(), 3, 4, 5);
  const auto x = random_matrix(8, 3, 6);
  OutputLoss l2 = [](const Matrix& out, Matrix& d) {
    double s = 0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out.values()[i] * out.values()[i], d.values()[i] = 2 * out.values()[i];
    return s;
  };
  const auto r = gradients(p, x, 2, Head::kReconstruction, l2, ForwardOptions{Mode::kTrain, 1});
  ASSERT_FALSE(r.batchnorm.entries.empty());
  const auto before = p.at("recon.bn1.running_mean").value;
  apply_batchnorm_update(p, r.batchnorm);
  const auto& e = r.batchnorm.entries.front();
  const auto& after = p.arrays[e.mean_index].value;
  EXPECT_NE(after, before);
  EXPECT_NEAR(after(0, 0), 0.1 * e.batch_mean[0], 1e-15);
  // Eval-mode gradients collect no statistics.
  EXPECT_TRUE(gradients(p, x, 2, Head::kReconstruction, l2, {}).batchnorm.entries.empty());
}

struct GradFixture {
  ModelParams params = init_params(small_config(), 3, 4, 11);
  std::size_t batch = 2, seq = 8;
  Matrix raw = random_matrix(16, 3, 12);
  std::vector<masking::MaskSpec> specs{{{1, 5}, {0}}, {{2}, {2}}};
  Matrix masked = raw;
  std::vector<int> labels{1, 3};

  GradFixture() {
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < seq; ++i)
        for (std::size_t j = 0; j < 3; ++j)
          if (specs[b].masks_time(i) || specs[b].masks_channel(j)) masked(b * seq + i, j) = 0.0;
  }
  OutputLoss recon_loss(double alpha) const {
    return [this, alpha](const Matrix& out, Matrix& d) {
      return objective::combined_loss(raw, out, specs, alpha, &d).combined;
    };
  }
  OutputLoss ce_loss() const {
    return [this](const Matrix& out, Matrix& d) { return objective::cross_entropy(out, labels, &d); };
  }
};

TEST(Gradients, FiniteDifferenceReconstruction) {
  GradFixture f;
  const ForwardOptions opts{Mode::kTrain, 21};
  const auto r = testing::check_gradients(f.params, f.masked, f.batch, Head::kReconstruction,
                                          f.recon_loss(0.5), opts,
                                          {Group::kEncoder, Group::kReconstruction}, 120, 1);
  EXPECT_GE(r.checked, 50u);
  EXPECT_LT(r.max_rel_error, 1e-3) << r.worst;
}

TEST(Gradients, FiniteDifferenceClassifier) {
  GradFixture f;
  const ForwardOptions opts{Mode::kTrain, 22};
  const auto r = testing::check_gradients(f.params, f.raw, f.batch, Head::kClassifier, f.ce_loss(),
                                          opts, {Group::kEncoder, Group::kClassifier}, 120, 2);
  EXPECT_GE(r.checked, 50u);
  EXPECT_LT(r.max_rel_error, 1e-3) << r.worst;
}

TEST(Gradients, FiniteDifferenceEvalMode) {
  GradFixture f;
  const auto r = testing::check_gradients(f.params, f.masked, f.batch, Head::kReconstruction,
                                          f.recon_loss(0.2), {}, {Group::kEncoder, Group::kReconstruction},
                                          80, 3);
  EXPECT_GE(r.checked, 50u);
  EXPECT_LT(r.max_rel_error, 1e-3) << r.worst;
}

TEST(Gradients, FrozenAndUnusedAreExactlyZero) {
  GradFixture f;
  auto p = f.params;
  p.set_frozen(Group::kEncoder, true);
  const auto r = gradients(p, f.masked, f.batch, Head::kReconstruction, f.recon_loss(0.5),
                           ForwardOptions{Mode::kTrain, 1});
  for (std::size_t a = 0; a < p.arrays.size(); ++a) {
    const auto group = p.arrays[a].group;
    if (group == Group::kReconstruction && p.arrays[a].trainable) continue;
    for (double v : r.grads.arrays[a].values()) ASSERT_EQ(v, 0.0) << p.arrays[a].name;
  }
  double norm = 0;
  for (double v : r.grads.at(p, "recon.fc3.weight").values()) norm += std::abs(v);
  EXPECT_GT(norm, 0.0);
}

TEST(Gradients, NonFiniteLossThrows) {
  GradFixture f;
  OutputLoss bad = [](const Matrix&, Matrix&) { return std::nan(""); };
  EXPECT_THROW(gradients(f.params, f.raw, 2, Head::kReconstruction, bad, {}), NumericError);
}

TEST(ContentHash, TracksGroupContents) {
  auto p = init_params(small_config(), 3, 4, 1);
  const auto enc = content_hash(p, Group::kEncoder), cls = content_hash(p, Group::kClassifier);
  p.at("cls.fc1.weight").value(0, 0) += 1.0;
  EXPECT_EQ(content_hash(p, Group::kEncoder), enc);
  EXPECT_NE(content_hash(p, Group::kClassifier), cls);
  reinit_group(p, Group::kClassifier, 1);
  EXPECT_EQ(content_hash(p, Group::kClassifier), cls);
}

}  // namespace
}  // namespace maskrec::model

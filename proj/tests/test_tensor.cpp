#include "grad_cases.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

#include "nbids/errors.hpp"
#include "nbids/ops.hpp"
#include "nbids/rng.hpp"
#include "nbids/tensor.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

using namespace nbids;
using testing_util::random_tensor;

namespace {

Tensor row(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({1, n}, std::move(v));
}

} // namespace

TEST(Tensor, RejectsMismatchedDataAndZeroExtents) {
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  EXPECT_THROW(Tensor({0, 3}), ShapeError);
  EXPECT_THROW(Tensor({2, 3}).reshaped({4, 2}), ShapeError);
  EXPECT_EQ(Tensor({2, 3}).reshaped({3, 2}).shape(), (Shape{3, 2}));
}

TEST(Tensor, GradBufferLifecycle) {
  Tensor t({3});
  EXPECT_FALSE(t.has_grad());
  EXPECT_THROW(t.grad(), UsageError);
  t.zero_grad();
  ASSERT_TRUE(t.has_grad());
  EXPECT_EQ(t.grad().size(), 3u);
  t.drop_grad();
  EXPECT_FALSE(t.has_grad());
}

TEST(Rng, StreamsAreKeyedAndReproducible) {
  Rng a(7, "init"), b(7, "init"), c(7, "shuffle"), d(8, "init");
  const auto x = a.next_u64();
  EXPECT_EQ(x, b.next_u64());
  EXPECT_NE(x, c.next_u64());
  EXPECT_NE(x, d.next_u64());
  EXPECT_NE(Rng(7, "init").child(0).next_u64(), Rng(7, "init").child(1).next_u64());
  Rng u(1, "u");
  for (int i = 0; i < 1000; ++i) {
    const double v = u.uniform();
    EXPECT_GE(v, 0.0);
    EXPECT_LT(v, 1.0);
    EXPECT_LT(u.below(7), 7u);
  }
}

TEST(Matmul, Examples) {
  const Tensor eye({2, 2}, {1, 0, 0, 1});
  const Tensor m({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(matmul(eye, m), m);
  const Tensor r = matmul(row({1, 2}), Tensor({2, 1}, {3, 4}));
  EXPECT_EQ(r.shape(), (Shape{1, 1}));
  EXPECT_DOUBLE_EQ(r[0], 11.0);
  EXPECT_THROW(matmul(Tensor({2, 3}), Tensor({2, 3})), ShapeError);
}

TEST(Matmul, MatchesTripleLoop) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(s, "test.matmul");
    const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
    EXPECT_LT(testing_util::max_abs_diff(testing_util::to_mat(matmul(a, b)),
                                         oracle::matmul(testing_util::to_mat(a), testing_util::to_mat(b))),
              1e-12);
  }
}

TEST(Matmul, BackwardAdjoints) {
  Rng rng(3, "test.matmul.back");
  const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng), dc = random_tensor({3, 2}, rng);
  const auto g = matmul_backward(a, b, dc);
  const auto A = testing_util::to_mat(a), B = testing_util::to_mat(b), D = testing_util::to_mat(dc);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 4; ++k) {
      double s = 0;
      for (std::size_t j = 0; j < 2; ++j) s += D[i][j] * B[k][j];
      EXPECT_NEAR(g.da(i, k), s, 1e-12);
    }
  for (std::size_t k = 0; k < 4; ++k)
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0;
      for (std::size_t i = 0; i < 3; ++i) s += A[i][k] * D[i][j];
      EXPECT_NEAR(g.db(k, j), s, 1e-12);
    }
}

TEST(GradCheck, LinearAndQuadratic) {
  auto sum = [](std::vector<Tensor>& x, bool grad) {
    double s = 0;
    for (std::size_t i = 0; i < x[0].size(); ++i) {
      s += x[0][i];
      if (grad) x[0].grad()[i] = 1.0;
    }
    return s;
  };
  Rng rng(1, "test.gc");
  EXPECT_LT(grad_check(sum, {random_tensor({5}, rng)}).max_rel_error, 1e-10);

  auto sq = [](std::vector<Tensor>& x, bool grad) {
    double s = 0;
    for (std::size_t i = 0; i < x[0].size(); ++i) {
      s += x[0][i] * x[0][i];
      if (grad) x[0].grad()[i] = 2 * x[0][i];
    }
    return s;
  };
  const auto r = grad_check(sq, {Tensor({2}, {1, 2})});
  EXPECT_EQ(r.checked, 2u);
  EXPECT_LT(r.max_rel_error, 1e-8);
}

TEST(GradCheck, DetectsWrongGradient) {
  auto bad = [](std::vector<Tensor>& x, bool grad) {
    if (grad) x[0].grad()[0] = 3.0;
    return 2.0 * x[0][0];
  };
  EXPECT_GT(grad_check(bad, {Tensor({1}, {0.5})}).max_rel_error, 0.1);
}

TEST(GradCheck, SubsampleChecksRequestedCount) {
  auto sum = [](std::vector<Tensor>& x, bool grad) {
    double s = 0;
    for (auto& t : x)
      for (std::size_t i = 0; i < t.size(); ++i) {
        s += t[i];
        if (grad) t.grad()[i] = 1.0;
      }
    return s;
  };
  GradCheckOptions o;
  o.max_coords = 7;
  o.seed = 9;
  EXPECT_EQ(grad_check(sum, {Tensor({4}), Tensor({3, 3})}, o).checked, 7u);
}

TEST(GradCheck, RegionFingerprintSkipsKinks) {
  // |x| at x = 0 straddles the kink for any eps.
  auto absf = [](std::vector<Tensor>& x, bool grad) {
    if (grad) x[0].grad()[0] = x[0][0] > 0 ? 1.0 : -1.0;
    if (grad) x[0].grad()[1] = 1.0;
    return std::abs(x[0][0]) + x[0][1];
  };
  GradCheckOptions o;
  o.max_coords = 2;
  o.region = [](const std::vector<Tensor>& x) -> std::uint64_t { return x[0][0] > 0; };
  const auto r = grad_check(absf, {Tensor({2}, {0.0, 1.0})}, o);
  EXPECT_EQ(r.skipped_kinks, 1u);
  EXPECT_EQ(r.checked, 1u);
  EXPECT_LT(r.max_rel_error, 1e-8);
}

TEST(Conv1d, Examples) {
  const Tensor x({1, 4}, {1, 2, 3, 4});
  ConvParams id{Tensor({1, 1, 1}, {1.0}), Tensor({1}, {0.0}), 1, Padding::valid};
  EXPECT_EQ(conv1d_forward(x, id).values(), (std::vector<double>{1, 2, 3, 4}));

  ConvParams pair{Tensor({1, 1, 2}, {1.0, 1.0}), Tensor({1}, {0.0}), 1, Padding::valid};
  EXPECT_EQ(conv1d_forward(x, pair).values(), (std::vector<double>{3, 5, 7}));

  Rng rng(2, "test.conv.bias");
  ConvParams bias{random_tensor({1, 1, 3}, rng), Tensor({1}, {0.7}), 1, Padding::same};
  const Tensor y = conv1d_forward(Tensor({1, 5}), bias);
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 0.7);
}

TEST(Conv1d, Errors) {
  ConvParams p{Tensor({1, 1, 5}), Tensor({1}), 1, Padding::valid};
  EXPECT_THROW(conv1d_forward(Tensor({1, 3}), p), ShapeError);
  EXPECT_THROW(conv1d_forward(Tensor({2, 8}), p), ShapeError);
  EXPECT_THROW(conv1d_backward(Conv1dCtx{}, p, Tensor({1, 4})), UsageError);
}

TEST(Conv1d, SamePaddingPreservesLength) {
  Rng rng(4, "test.conv.same");
  for (std::size_t k : {1u, 3u, 5u}) {
    ConvParams p{random_tensor({2, 1, k}, rng), random_tensor({2}, rng), 1, Padding::same};
    for (std::size_t L = k; L <= 256; ++L) {
      ASSERT_EQ(conv_output_length(L, k, 1, Padding::same), L);
      ASSERT_EQ(conv1d_forward(Tensor({1, L}, 1.0), p).dim(1), L) << "k=" << k << " L=" << L;
    }
  }
}

TEST(Conv1d, MatchesSlidingWindowOracle) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(s, "test.conv.oracle");
    const std::size_t C = 1 + s % 3, L = 6 + s % 7, O = 2, K = 1 + s % 5, stride = 1 + s % 2;
    const bool same = s % 2 == 0;
    const Tensor x = random_tensor({C, L}, rng);
    ConvParams p{random_tensor({O, C, K}, rng), random_tensor({O}, rng), stride,
                 same ? Padding::same : Padding::valid};
    std::vector<oracle::Mat> w(O, oracle::Mat(C, std::vector<double>(K)));
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t k = 0; k < K; ++k) w[o][c][k] = p.kernels(o, c, k);
    const auto want = oracle::conv1d(testing_util::to_mat(x), w, p.bias.values(), stride, same);
    EXPECT_LT(testing_util::max_abs_diff(testing_util::to_mat(conv1d_forward(x, p)), want), 1e-12);
  }
}

TEST(Conv1d, BackwardSimpleCases) {
  Rng rng(5, "test.conv.back");
  ConvParams p{random_tensor({2, 3, 3}, rng), random_tensor({2}, rng), 1, Padding::same};
  Conv1dCtx ctx;
  conv1d_forward(random_tensor({2, 3, 6}, rng), p, &ctx);
  const auto g = conv1d_backward(ctx, p, Tensor({2, 2, 6}));
  for (const Tensor* t : {&g.dx, &g.dw, &g.db})
    for (double v : t->data()) EXPECT_EQ(v, 0.0);

  ConvParams one{Tensor({1, 1, 1}, {0.3}), Tensor({1}, {0.0}), 1, Padding::valid};
  Conv1dCtx c1;
  conv1d_forward(Tensor({1, 1}, {2.5}), one, &c1);
  const auto g1 = conv1d_backward(c1, one, Tensor({1, 1}, {-1.5}));
  EXPECT_DOUBLE_EQ(g1.dw[0], -1.5 * 2.5);
  EXPECT_DOUBLE_EQ(g1.db[0], -1.5);
  EXPECT_DOUBLE_EQ(g1.dx[0], -1.5 * 0.3);
}

TEST(Maxpool, Examples) {
  auto r = maxpool1d(Tensor({1, 4}, {1, 3, 2, 5}), 2, 2);
  EXPECT_EQ(r.y.values(), (std::vector<double>{3, 5}));
  EXPECT_EQ(r.argmax, (std::vector<std::size_t>{1, 3}));
  r = maxpool1d(Tensor({1, 4}, {7, 7, 7, 7}), 2, 2);
  EXPECT_EQ(r.y.values(), (std::vector<double>{7, 7}));
  EXPECT_EQ(r.argmax, (std::vector<std::size_t>{0, 2}));
  EXPECT_THROW(maxpool1d(Tensor({1, 1}), 2, 2), ShapeError);
}

TEST(Maxpool, CeilLengthsMatchModelSchedule) {
  EXPECT_EQ(pool_output_length(115, 2, 2), 58u);
  EXPECT_EQ(pool_output_length(58, 2, 2), 29u);
  EXPECT_EQ(pool_output_length(29, 2, 2), 15u);
  const auto r = maxpool1d(Tensor({1, 5}, {1, 2, 3, 4, 9}), 2, 2);
  EXPECT_EQ(r.y.values(), (std::vector<double>{2, 4, 9}));
}

TEST(Maxpool, MatchesScanOracleAndRoutesOnlyToArgmax) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(s, "test.pool");
    const std::size_t L = 16 + s % 3;
    const Tensor x = random_tensor({1, L}, rng);
    const auto r = maxpool1d(x, 2, 2);
    const auto [want, idx] = oracle::maxpool(x.values(), 2, 2);
    EXPECT_EQ(r.y.values(), want);
    EXPECT_EQ(r.argmax, idx);

    const Tensor dy = random_tensor(r.y.shape(), rng);
    const Tensor dx = maxpool1d_backward(r, dy);
    std::vector<double> scatter(L, 0.0);
    for (std::size_t w = 0; w < idx.size(); ++w) scatter[idx[w]] += dy[w];
    EXPECT_EQ(dx.values(), scatter);
  }
}

TEST(Maxpool, BackwardNeedsForward) { EXPECT_THROW(maxpool1d_backward(PoolResult{}, Tensor({1})), UsageError); }

TEST(BatchNorm, TrainModeStandardizes) {
  Rng rng(6, "test.bn");
  const Tensor x = random_tensor({4, 3, 5}, rng, -3.0, 5.0);
  auto p = BatchNormParams::identity(3);
  const auto r = batchnorm1d(x, p, Mode::train);
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0, v = 0;
    for (std::size_t b = 0; b < 4; ++b)
      for (std::size_t t = 0; t < 5; ++t) m += r.y(b, c, t);
    m /= 20;
    for (std::size_t b = 0; b < 4; ++b)
      for (std::size_t t = 0; t < 5; ++t) v += (r.y(b, c, t) - m) * (r.y(b, c, t) - m);
    v /= 20;
    EXPECT_NEAR(m, 0.0, 1e-10);
    // Biased batch variance with epsilon in the denominator.
    EXPECT_NEAR(v, 1.0, 1e-4);
  }
}

TEST(BatchNorm, AffineOnStandardizedInput) {
  Rng rng(7, "test.bn.affine");
  Tensor x = random_tensor({8, 1, 10}, rng);
  double m = std::accumulate(x.data().begin(), x.data().end(), 0.0) / 80;
  double v = 0;
  for (double& e : x.data()) e -= m;
  for (double e : x.data()) v += e * e;
  for (double& e : x.data()) e /= std::sqrt(v / 80);
  auto p = BatchNormParams::identity(1);
  p.gamma[0] = 2;
  p.beta[0] = 3;
  p.epsilon = 1e-12;
  const auto r = batchnorm1d(x, p, Mode::train);
  m = std::accumulate(r.y.data().begin(), r.y.data().end(), 0.0) / 80;
  v = 0;
  for (double e : r.y.data()) v += (e - m) * (e - m);
  EXPECT_NEAR(m, 3.0, 1e-10);
  EXPECT_NEAR(std::sqrt(v / 80), 2.0, 1e-10);
}

TEST(BatchNorm, RunningStatsMomentum) {
  const Tensor x({2, 1, 2}, {1, 2, 3, 4});
  auto p = BatchNormParams::identity(1);
  const auto r = batchnorm1d(x, p, Mode::train);
  EXPECT_DOUBLE_EQ(r.batch_mean[0], 2.5);
  EXPECT_NEAR(r.batch_var[0], 5.0 / 3.0, 1e-15);
  EXPECT_NEAR(r.running_mean[0], 0.99 * 0 + 0.01 * 2.5, 1e-15);
  EXPECT_NEAR(r.running_var[0], 0.99 * 1 + 0.01 * (5.0 / 3.0), 1e-15);
}

TEST(BatchNorm, InferModeIsFixedAffineMap) {
  Rng rng(8, "test.bn.infer");
  const Tensor x = random_tensor({3, 2, 4}, rng);
  const auto p = BatchNormParams::identity(2);
  const auto once = batchnorm1d(x, p, Mode::infer);
  EXPECT_EQ(once.y, batchnorm1d(x, p, Mode::infer).y);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(once.y[i], x[i] / std::sqrt(1.0 + p.epsilon));
  EXPECT_EQ(once.running_mean, p.running_mean);
}

TEST(BatchNorm, DegenerateBatch) {
  EXPECT_THROW(batchnorm1d(Tensor({1, 2, 1}), BatchNormParams::identity(2), Mode::train), ShapeError);
  EXPECT_NO_THROW(batchnorm1d(Tensor({1, 2, 1}), BatchNormParams::identity(2), Mode::infer));
}

TEST(Activation, Examples) {
  EXPECT_EQ(activate(Activation::relu, Tensor({3}, {-1, 0, 2})).values(), (std::vector<double>{0, 0, 2}));
  EXPECT_EQ(activate(Activation::tanh, Tensor({1}, {0.0}))[0], 0.0);
  EXPECT_EQ(activate(Activation::sigmoid, Tensor({1}, {0.0}))[0], 0.5);
  EXPECT_EQ(activation_backward(Activation::relu, Tensor({1}, {0.0}), Tensor({1}, {1.0}))[0], 0.0);
}

TEST(Softmax, Examples) {
  auto y = softmax(row({0, 0}));
  EXPECT_DOUBLE_EQ(y[0], 0.5);
  y = softmax(row({std::log(2.0), 0}));
  EXPECT_NEAR(y[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(y[1], 1.0 / 3.0, 1e-15);
  y = softmax(row({1000, 1000}));
  EXPECT_DOUBLE_EQ(y[0], 0.5);
  EXPECT_DOUBLE_EQ(y[1], 0.5);
}

TEST(Softmax, SlicesArePositiveAndSumToOne) {
  Rng rng(9, "test.softmax");
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor y = softmax(random_tensor({4, 7}, rng, -30, 30));
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 7; ++c) {
        EXPECT_GT(y(r, c), 0.0);
        s += y(r, c);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Dropout, IdentityCases) {
  Rng rng(10, "test.dropout");
  const Tensor x = random_tensor({5, 6}, rng);
  DropoutState zero{0.0, 1, {}};
  EXPECT_EQ(dropout(x, zero, Mode::train), x);
  EXPECT_EQ(dropout(x, zero, Mode::infer), x);
  DropoutState s{0.4, 1, {}};
  EXPECT_EQ(dropout(x, s, Mode::infer), x);
  DropoutState bad{1.0, 1, {}};
  EXPECT_THROW(dropout(x, bad, Mode::train), ConfigError);
}

TEST(Dropout, InvertedScalingPreservesMean) {
  const Tensor ones({1000000}, 1.0);
  DropoutState s{0.3, 12345, {}};
  const Tensor y = dropout(ones, s, Mode::train);
  const double mean = std::accumulate(y.data().begin(), y.data().end(), 0.0) / 1e6;
  EXPECT_GE(mean, 0.99);
  EXPECT_LE(mean, 1.01);
  for (double v : y.data()) ASSERT_TRUE(v == 0.0 || std::abs(v - 1.0 / 0.7) < 1e-15);
  const Tensor g = dropout_backward(s, ones);
  EXPECT_EQ(g, *s.mask);
}

TEST(Dense, Examples) {
  DenseParams id{Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2})};
  const Tensor x({1, 2}, {3, -4});
  EXPECT_EQ(dense(x, id), x);
  DenseParams p{Tensor({2, 1}, {1, 1}), Tensor({1}, {0.5})};
  EXPECT_DOUBLE_EQ(dense(Tensor({1, 2}, {1, 1}), p)[0], 2.5);
  EXPECT_THROW(dense(Tensor({1, 3}), p), ShapeError);
}

TEST(SparseCe, Examples) {
  const auto confident = sparse_ce_loss(Tensor({1, 3}, {100, 0, 0}), std::vector<int>{0});
  EXPECT_LT(confident.loss, 1e-6);
  const auto uniform = sparse_ce_loss(Tensor({2, 10}), std::vector<int>{3, 7});
  EXPECT_NEAR(uniform.loss, std::log(10.0), 1e-12);
  EXPECT_NEAR(uniform.dlogits(0, 3), (0.1 - 1.0) / 2, 1e-15);
  EXPECT_NEAR(uniform.dlogits(0, 4), 0.1 / 2, 1e-15);
}

TEST(SparseCe, LabelOutOfRangeNamesRow) {
  try {
    sparse_ce_loss(Tensor({2, 3}), std::vector<int>{0, 3});
    FAIL();
  } catch (const LabelError& e) {
    EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos) << e.what();
  }
  EXPECT_THROW(sparse_ce_loss(Tensor({2, 3}), std::vector<int>{-1, 0}), LabelError);
}

TEST(FiniteDifference, EveryPrimitiveAtTenSeeds) {
  for (const auto& c : grad_cases::primitive_cases())
    for (std::uint64_t s = 1; s <= 10; ++s) {
      const auto r = c.run(s);
      EXPECT_LT(r.max_rel_error, 1e-4) << c.name << " seed " << s;
      EXPECT_GT(r.checked, 0u);
    }
}

#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "gcml/ops.hpp"
#include "gcml/optim.hpp"
#include "gcml/prng.hpp"
#include "gcml/verify.hpp"
#include "oracles.hpp"

using namespace gcml;
using D = Tensor<double>;

namespace {

constexpr double kTol = 1e-10;

}  // namespace

TEST(Prng, SplitMixReferenceSequence) {
  // First outputs of SplitMix64 seeded with 0 and 1234567.
  Prng a(0);
  EXPECT_EQ(a.next(), 0xE220A8397B1DCDAFull);
  EXPECT_EQ(a.next(), 0x6E789E6AA1B965F4ull);
  EXPECT_EQ(a.next(), 0x06C45D188009454Full);
  Prng b(1234567);
  EXPECT_EQ(b.next(), 6457827717110365317ull);
  EXPECT_EQ(b.next(), 3203168211198807973ull);
}

TEST(Prng, UniformAndBelowRanges) {
  Prng rng(5);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    ASSERT_LT(rng.below(7), 7u);
  }
}

TEST(Prng, ShuffleIsAPermutation) {
  Prng rng(9);
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[i] = i;
  rng.shuffle(v.begin(), v.end());
  EXPECT_EQ(std::set<int>(v.begin(), v.end()).size(), 50u);
}

TEST(Tensor, ShapeAndValues) {
  D t({2, 3}, 1.5);
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.ndim(), 2u);
  EXPECT_EQ(t.dim(1), 3u);
  EXPECT_THROW(D({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  EXPECT_THROW(t.reshape({4}), ShapeError);
  EXPECT_EQ(t.reshape({3, 2}).dim(0), 3u);
}

TEST(Tensor, BackwardAccumulatesThroughSharedUse) {
  D x({3}, std::vector<double>{1, 2, 3});
  x.set_requires_grad(true);
  // y = sum(x * x + x) -> dy/dx = 2x + 1
  auto y = sum(add(mul(x, x), x));
  y.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 3);
  EXPECT_DOUBLE_EQ(x.grad()[1], 5);
  EXPECT_DOUBLE_EQ(x.grad()[2], 7);
}

TEST(Tensor, NoGradGuardRecordsNothing) {
  D x({2}, std::vector<double>{1, 2});
  x.set_requires_grad(true);
  NoGradGuard guard;
  auto y = sum(mul(x, x));
  EXPECT_FALSE(y.requires_grad());
}

TEST(Ops, Conv2dMatchesLoopOracle) {
  Prng rng(1);
  for (auto [stride, pad, k] : std::vector<std::tuple<int, int, int>>{{1, 1, 3}, {2, 0, 3}, {1, 2, 5}, {1, 0, 1}, {2, 1, 3}}) {
    const int n = 2, c = 3, h = 7, w = 7, o = 4;
    auto x = oracle::random({2, 3, 7, 7}, rng);
    auto wt = oracle::random({4, 3, static_cast<std::size_t>(k), static_cast<std::size_t>(k)}, rng);
    auto b = oracle::random({4}, rng);
    const auto got = conv2d(x, wt, std::optional<D>(b), stride, pad);
    const auto bias = oracle::values(b);
    const auto want = oracle::conv2d(oracle::values(x), oracle::values(wt), &bias, n, c, h, w, o, k, stride, pad);
    ASSERT_EQ(got.numel(), want.size());
    EXPECT_LT(oracle::max_rel(oracle::values(got), want), kTol) << "stride " << stride << " pad " << pad;
  }
}

TEST(Ops, Conv2dIsThreadCountIndependent) {
  Prng rng(2);
  Tensor<float> x({5, 3, 8, 8}), w({4, 3, 3, 3});
  for (auto& v : x.data()) v = static_cast<float>(rng.uniform(-1, 1));
  for (auto& v : w.data()) v = static_cast<float>(rng.uniform(-1, 1));
  x.set_requires_grad(true);
  w.set_requires_grad(true);
  auto run = [&](int threads) {
    set_num_threads(threads);
    x.zero_grad();
    w.zero_grad();
    auto y = conv2d(x, w, std::optional<Tensor<float>>(), 1, 1);
    sum(mul(y, y)).backward();
    auto out = y.values();
    out.insert(out.end(), w.grad().begin(), w.grad().end());
    out.insert(out.end(), x.grad().begin(), x.grad().end());
    return out;
  };
  const auto one = run(1);
  const auto three = run(3);
  set_num_threads(1);
  EXPECT_EQ(one, three);
}

TEST(Ops, Conv2dRejectsBadShapes) {
  D x({1, 2, 4, 4}), w({3, 3, 3, 3});
  EXPECT_THROW(conv2d(x, w, std::optional<D>(), 1, 1), ShapeError);
  D even({1, 3, 4, 4}), w3({3, 3, 3, 3});
  EXPECT_THROW(conv2d(even, w3, std::optional<D>(), 2, 0), ShapeError);
}

TEST(Ops, MaxPoolMatchesOracle) {
  Prng rng(3);
  auto x = oracle::random({2, 3, 6, 8}, rng);
  const auto got = maxpool2d(x, 2, 2);
  EXPECT_EQ(oracle::values(got), oracle::maxpool(oracle::values(x), 6, 6, 8, 2));
  auto x5 = oracle::random({2, 2, 4, 4, 4}, rng);
  EXPECT_EQ(oracle::values(maxpool2d(x5, 2, 2)), oracle::maxpool(oracle::values(x5), 16, 4, 4, 2));
}

TEST(Ops, MaxPoolTieGoesToFirstElement) {
  D x({1, 1, 2, 2}, std::vector<double>{1, 1, 1, 1});
  x.set_requires_grad(true);
  sum(maxpool2d(x, 2, 2)).backward();
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{1, 0, 0, 0}));
}

TEST(Ops, GlobalAvgPoolMatchesOracle) {
  Prng rng(4);
  auto x = oracle::random({2, 3, 4, 5}, rng);
  EXPECT_LT(oracle::max_rel(oracle::values(global_avgpool(x)), oracle::avgpool(oracle::values(x), 6, 20)), kTol);
}

TEST(Ops, LinearMatchesOracle) {
  Prng rng(5);
  auto x = oracle::random({4, 6}, rng), w = oracle::random({3, 6}, rng), b = oracle::random({3}, rng);
  const auto want = oracle::linear(oracle::values(x), oracle::values(w), oracle::values(b), 4, 6, 3);
  EXPECT_LT(oracle::max_rel(oracle::values(linear(x, w, b)), want), kTol);
}

TEST(Ops, BatchNormTrainMatchesOracleAndTracksStats) {
  Prng rng(6);
  auto x = oracle::random({4, 3, 2, 5}, rng, -2, 3);
  auto gamma = oracle::random({3}, rng, 0.5, 1.5), beta = oracle::random({3}, rng);
  BatchNormStats<double> stats;
  const auto got = batchnorm(x, gamma, beta, stats, 1e-5, 0.1, Mode::train);
  oracle::Vec mean, var;
  const auto want = oracle::batchnorm_train(oracle::values(x), oracle::values(gamma), oracle::values(beta), 4, 3, 10,
                                            1e-5, &mean, &var);
  EXPECT_LT(oracle::max_rel(oracle::values(got), want), kTol);
  // First call seeds the running statistics; variance is the unbiased one.
  ASSERT_TRUE(stats.initialized);
  for (int c = 0; c < 3; ++c) {
    EXPECT_NEAR(stats.running_mean[c], mean[c], 1e-12);
    EXPECT_NEAR(stats.running_var[c], var[c] * 40.0 / 39.0, 1e-12);
  }
  // Second call blends with momentum 0.1.
  auto x2 = oracle::random({4, 3, 2, 5}, rng);
  oracle::Vec mean2, var2;
  oracle::batchnorm_train(oracle::values(x2), oracle::values(gamma), oracle::values(beta), 4, 3, 10, 1e-5, &mean2,
                          &var2);
  batchnorm(x2, gamma, beta, stats, 1e-5, 0.1, Mode::train);
  for (int c = 0; c < 3; ++c) {
    EXPECT_NEAR(stats.running_mean[c], 0.9 * mean[c] + 0.1 * mean2[c], 1e-12);
    EXPECT_NEAR(stats.running_var[c], 0.9 * var[c] * 40 / 39 + 0.1 * var2[c] * 40 / 39, 1e-12);
  }
}

TEST(Ops, BatchNormEvalUsesRunningStats) {
  D x({2, 2, 1, 1}, std::vector<double>{1, 2, 3, 4});
  D gamma({2}, std::vector<double>{2, 1}), beta({2}, std::vector<double>{0, 1});
  BatchNormStats<double> stats{{1, 2}, {4, 1}, true};
  const auto y = batchnorm(x, gamma, beta, stats, 0.0, 0.1, Mode::eval);
  // channel 0: 2 * (v - 1) / 2; channel 1: (v - 2) / 1 + 1
  EXPECT_EQ(oracle::values(y), (oracle::Vec{0, 1, 2, 3}));
  BatchNormStats<double> fresh;
  EXPECT_THROW(batchnorm(x, gamma, beta, fresh, 1e-5, 0.1, Mode::eval), std::logic_error);
}

TEST(Ops, CrossEntropyMatchesOracle) {
  Prng rng(7);
  auto logits = oracle::random({5, 4}, rng, -30, 30);
  const std::vector<int> labels{0, 3, 2, 2, 1};
  const double got = cross_entropy(logits, std::span<const int>(labels)).item();
  EXPECT_NEAR(got, oracle::cross_entropy(oracle::values(logits), labels, 4), 1e-10 * std::abs(got));
  const std::vector<int> bad{0, 4, 0, 0, 0};
  EXPECT_THROW(cross_entropy(logits, std::span<const int>(bad)), std::out_of_range);
}

TEST(Ops, CrossEntropyIsStableForHugeLogits) {
  D logits({1, 2}, std::vector<double>{1000, 0});
  const std::vector<int> label{1};
  EXPECT_NEAR(cross_entropy(logits, std::span<const int>(label)).item(), 1000.0, 1e-9);
}

TEST(Ops, L2NormalizeKeepsZeroRows) {
  D x({2, 3}, std::vector<double>{3, 0, 4, 0, 0, 0});
  EXPECT_EQ(oracle::values(l2_normalize_rows(x)), (oracle::Vec{0.6, 0, 0.8, 0, 0, 0}));
}

TEST(Ops, ReluGradientIsZeroAtZero) {
  D x({3}, std::vector<double>{-1, 0, 2});
  x.set_requires_grad(true);
  sum(relu(x)).backward();
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{0, 0, 1}));
}

TEST(Ops, GradientsMatchFiniteDifferences) {
  for (const auto& r : verify_gradients()) EXPECT_TRUE(r.passed) << r.name << " error " << r.value;
}

TEST(Sgd, MomentumUpdateRule) {
  D p({2}, std::vector<double>{1, -1});
  p.set_requires_grad(true);
  Sgd<double> sgd({p}, 0.1, 0.9);
  for (int step = 0; step < 2; ++step) {
    sum(mul(p, p)).backward();  // grad 2p
    sgd.step();
  }
  // v1 = 2, p1 = 0.8; v2 = 0.9*2 + 1.6 = 3.4, p2 = 0.8 - 0.34
  EXPECT_NEAR(p.data()[0], 0.46, 1e-12);
  EXPECT_NEAR(p.data()[1], -0.46, 1e-12);
  EXPECT_FALSE(p.has_grad());
}

TEST(Sgd, ZeroLearningRateLeavesParameters) {
  D p({2}, std::vector<double>{1, 2});
  p.set_requires_grad(true);
  Sgd<double> sgd({p}, 0.0, 0.9);
  sum(mul(p, p)).backward();
  sgd.step();
  EXPECT_EQ(oracle::values(p), (oracle::Vec{1, 2}));
}

TEST(Sgd, MissingGradientIsAnError) {
  D p({1}, 1.0);
  p.set_requires_grad(true);
  Sgd<double> sgd({p}, 0.1, 0.0);
  EXPECT_THROW(sgd.step(), std::logic_error);
}

#include <gtest/gtest.h>

#include "gcml/gconv.hpp"
#include "gcml/verify.hpp"
#include "oracles.hpp"

using namespace gcml;
using D = Tensor<double>;

namespace {

constexpr double kTol = 1e-10;

void fill(D& t, Prng& rng) {
  for (auto& v : t.data()) v = rng.uniform(-1, 1);
}

double rl2(const D& a, const D& b) { return relative_l2(a.values(), b.values()); }

struct ConvCase {
  GroupKind kind;
  int kernel;
};

void PrintTo(const ConvCase& c, std::ostream* os) { *os << to_string(c.kind) << " k=" << c.kernel; }

class GroupConvOracle : public ::testing::TestWithParam<ConvCase> {};

}  // namespace

TEST_P(GroupConvOracle, LiftingMatchesDirectDefinition) {
  const GroupSpec spec(GetParam().kind);
  const int k = GetParam().kernel;
  Prng rng(11 + k);
  LiftingConv<double> conv(spec, 2, 3, k);
  fill(conv.weight(), rng);
  fill(conv.bias(), rng);
  const auto x = oracle::random({2, 2, 6, 6}, rng);
  const auto got = conv.forward(x);
  ASSERT_EQ(got.shape(), (Shape{2, 3, static_cast<std::size_t>(spec.order()), 6, 6}));
  const auto want = oracle::group_correlation(spec, oracle::values(x), oracle::values(conv.weight()),
                                              oracle::values(conv.bias()), 2, 2, true, 3, k, 6, 6);
  EXPECT_LE(oracle::max_rel(oracle::values(got), want), kTol);
}

TEST_P(GroupConvOracle, GroupConvMatchesDirectDefinition) {
  const GroupSpec spec(GetParam().kind);
  const int k = GetParam().kernel;
  const auto g = static_cast<std::size_t>(spec.order());
  Prng rng(23 + k);
  GroupConv<double> conv(spec, 2, 2, k);
  fill(conv.weight(), rng);
  fill(conv.bias(), rng);
  const auto x = oracle::random({2, 2, g, 5, 5}, rng);
  const auto got = conv.forward(x);
  const auto want = oracle::group_correlation(spec, oracle::values(x), oracle::values(conv.weight()),
                                              oracle::values(conv.bias()), 2, 2, false, 2, k, 5, 5);
  EXPECT_LE(oracle::max_rel(oracle::values(got), want), kTol);
}

TEST_P(GroupConvOracle, LayersAreEquivariantForEveryElement) {
  const GroupSpec spec(GetParam().kind);
  const int k = GetParam().kernel;
  Prng rng(37 + k);
  LiftingConv<double> lift(spec, 1, 2, k);
  GroupConv<double> conv(spec, 2, 2, k);
  lift.init_he_uniform(rng);
  conv.init_he_uniform(rng);
  const auto x = oracle::random({1, 1, 7, 7}, rng);
  const auto f = oracle::random({1, 2, static_cast<std::size_t>(spec.order()), 7, 7}, rng);
  for (int g = 0; g < spec.order(); ++g) {
    EXPECT_LE(rl2(lift.forward(rotate_feature_map(x, spec, g)),
                  rotate_feature_map(lift.forward(x), spec, g)),
              1e-12);
    EXPECT_LE(rl2(conv.forward(rotate_feature_map(f, spec, g)),
                  rotate_feature_map(conv.forward(f), spec, g)),
              1e-12);
  }
}

INSTANTIATE_TEST_SUITE_P(Kernels, GroupConvOracle,
                         ::testing::Values(ConvCase{GroupKind::p4, 1}, ConvCase{GroupKind::p4, 3},
                                           ConvCase{GroupKind::p4, 5}, ConvCase{GroupKind::p4m, 1},
                                           ConvCase{GroupKind::p4m, 3}, ConvCase{GroupKind::p4m, 5}),
                         [](const auto& info) {
                           return to_string(info.param.kind) + "_k" + std::to_string(info.param.kernel);
                         });

TEST(GroupConv, TrivialGroupReducesToPlainConvolution) {
  const GroupSpec spec(GroupKind::trivial);
  Prng rng(2);
  LiftingConv<double> conv(spec, 3, 4, 3);
  fill(conv.weight(), rng);
  fill(conv.bias(), rng);
  const auto x = oracle::random({2, 3, 6, 6}, rng);
  const auto bias = oracle::values(conv.bias());
  const auto want = oracle::conv2d(oracle::values(x), oracle::values(conv.weight()), &bias, 2, 3, 6, 6, 4, 3, 1, 1);
  EXPECT_LE(oracle::max_rel(oracle::values(conv.forward(x)), want), kTol);
}

TEST(GroupConv, GradientsReachTheCanonicalFilters) {
  const GroupSpec spec(GroupKind::p4m);
  Prng rng(8);
  GroupConv<double> conv(spec, 1, 1, 3);
  conv.init_he_uniform(rng);
  conv.weight().set_requires_grad(true);
  const auto x = oracle::random({1, 1, 8, 4, 4}, rng);
  auto y = sum(conv.forward(x));
  y.backward();
  ASSERT_TRUE(conv.weight().has_grad());
  // Every canonical tap feeds some output, so no gradient entry is left untouched.
  for (double gv : conv.weight().grad()) EXPECT_NE(gv, 0.0);
}

TEST(GroupConv, RejectsBadShapes) {
  const GroupSpec spec(GroupKind::p4);
  GroupConv<double> conv(spec, 2, 2, 3);
  EXPECT_THROW(conv.forward(D({1, 2, 8, 5, 5})), ShapeError);
  EXPECT_THROW(conv.forward(D({1, 3, 4, 5, 5})), ShapeError);
  LiftingConv<double> lift(spec, 1, 2, 3);
  EXPECT_THROW(lift.forward(D({1, 2, 5, 5})), ShapeError);
}

TEST(GroupPool, MaxOverGroupAxisIsInvariant) {
  const GroupSpec spec(GroupKind::p4m);
  Prng rng(5);
  const auto f = oracle::random({2, 3, 8, 4, 4}, rng);
  const auto pooled = group_pool(f);
  ASSERT_EQ(pooled.shape(), (Shape{2, 3, 4, 4}));
  const auto v = oracle::values(f);
  for (std::size_t nc = 0; nc < 6; ++nc)
    for (std::size_t i = 0; i < 16; ++i) {
      double best = -1e300;
      for (std::size_t g = 0; g < 8; ++g) best = std::max(best, v[(nc * 8 + g) * 16 + i]);
      EXPECT_EQ(pooled.values()[nc * 16 + i], best);
    }
  for (int g = 0; g < 8; ++g)
    EXPECT_EQ(oracle::values(group_pool(rotate_feature_map(f, spec, g))),
              oracle::values(transform_spatial(pooled, spec, g)));
}

TEST(GroupPool, SpatialMaxPoolMatchesOracleAndCommutes) {
  const GroupSpec spec(GroupKind::p4m);
  Prng rng(6);
  const auto f = oracle::random({1, 2, 8, 6, 6}, rng);
  const auto pooled = gspatial_maxpool(f);
  ASSERT_EQ(pooled.shape(), (Shape{1, 2, 8, 3, 3}));
  EXPECT_EQ(oracle::values(pooled), oracle::maxpool(oracle::values(f), 16, 6, 6, 2));
  for (int g = 0; g < 8; ++g)
    EXPECT_EQ(oracle::values(gspatial_maxpool(rotate_feature_map(f, spec, g))),
              oracle::values(rotate_feature_map(pooled, spec, g)));
}

TEST(GroupBatchNorm, StatisticsAreSharedAcrossTheGroupAxis) {
  Prng rng(12);
  GroupBatchNorm<double> bn(3);
  fill(bn.gamma(), rng);
  fill(bn.beta(), rng);
  const auto x = oracle::random({4, 3, 4, 3, 3}, rng);
  oracle::Vec mean, var;
  const auto want = oracle::batchnorm_train(oracle::values(x), oracle::values(bn.gamma()), oracle::values(bn.beta()),
                                            4, 3, 36, 1e-5, &mean, &var);
  EXPECT_LE(oracle::max_rel(oracle::values(bn.forward(x, Mode::train)), want), kTol);
  const double count = 4 * 36;
  for (int c = 0; c < 3; ++c) {
    EXPECT_NEAR(bn.stats().running_mean[c], mean[c], 1e-12);
    EXPECT_NEAR(bn.stats().running_var[c], var[c] * count / (count - 1), 1e-12);
  }
  const GroupSpec spec(GroupKind::p4);
  for (int g = 0; g < 4; ++g)
    EXPECT_LE(rl2(bn.forward(rotate_feature_map(x, spec, g), Mode::eval),
                  rotate_feature_map(bn.forward(x, Mode::eval), spec, g)),
              1e-14);
}

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "gcml/cam.hpp"
#include "gcml/verify.hpp"

using namespace gcml;

namespace {

ModelConfig desk(Variant v) {
  ModelConfig c;
  c.variant = v;
  c.stages = {{2, 8}, {2, 16}, {2, 32}};
  c.input_size = 32;
  return c;
}

Image random_image(int size, Prng& rng) {
  Image img{1, size, size, {}};
  for (int i = 0; i < size * size; ++i) img.pixels.push_back(static_cast<float>(rng.uniform()));
  return img;
}

void seed_statistics(Model<float>& model, Prng& rng) {
  Tensor<float> batch({8, 1, 32, 32});
  for (auto& v : batch.data()) v = static_cast<float>(rng.uniform());
  model.forward_embed(batch);
  model.set_mode(Mode::eval);
}

}  // namespace

TEST(Colormap, EndpointsAndMidpoint) {
  const Heatmap h{1, 3, {0.0f, 1.0f, 0.5f}};
  const auto rgb = colorize_heatmap(h);
  ASSERT_EQ(rgb.channels, 3);
  EXPECT_EQ(rgb.at(0, 0, 0), 0.0f);
  EXPECT_EQ(rgb.at(1, 0, 0), 0.0f);
  EXPECT_EQ(rgb.at(2, 0, 0), 1.0f);
  EXPECT_EQ(rgb.at(0, 0, 1), 1.0f);
  EXPECT_EQ(rgb.at(1, 0, 1), 0.0f);
  EXPECT_EQ(rgb.at(2, 0, 1), 0.0f);
  for (int c = 0; c < 3; ++c) EXPECT_EQ(rgb.at(c, 0, 2), 0.5f);
  EXPECT_THROW(colorize_heatmap(Heatmap{1, 1, {1.5f}}), std::invalid_argument);
  EXPECT_THROW(colorize_heatmap(Heatmap{1, 1, {-0.1f}}), std::invalid_argument);
}

TEST(WeightedMap, ConstantMapNormalizesToZeros) {
  const std::vector<float> acts(2 * 9, 0.7f);
  const std::vector<float> w{0.5f, 0.5f};
  const auto h = weighted_activation_map(acts, 2, 3, 3, w);
  for (float v : h.values) EXPECT_EQ(v, 0.0f);
}

TEST(WeightedMap, SingleChannelIsItsNormalizedActivation) {
  Prng rng(3);
  std::vector<float> acts(12);
  for (auto& v : acts) v = static_cast<float>(rng.uniform(-2, 2));
  const auto [lo, hi] = std::minmax_element(acts.begin(), acts.end());
  for (float w : {0.3f, 2.0f}) {
    const std::vector<float> weights{w};
    const auto h = weighted_activation_map(acts, 1, 3, 4, weights);
    for (std::size_t i = 0; i < acts.size(); ++i) EXPECT_NEAR(h.values[i], (acts[i] - *lo) / (*hi - *lo), 1e-6);
  }
}

TEST(WeightedMap, MatchesDirectSum) {
  Prng rng(4);
  const std::size_t c = 5;
  std::vector<float> acts(c * 16), w(c);
  for (auto& v : acts) v = static_cast<float>(rng.uniform());
  for (auto& v : w) v = static_cast<float>(rng.uniform(-1, 1));
  std::vector<double> raw(16, 0.0);
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = 0; i < 16; ++i) raw[i] += static_cast<double>(w[k]) * acts[k * 16 + i];
  const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
  const auto h = weighted_activation_map(acts, c, 4, 4, w);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(h.values[i], (raw[i] - *lo) / (*hi - *lo), 1e-5);
  EXPECT_THROW(weighted_activation_map(acts, c, 4, 4, std::vector<float>(c - 1)), std::invalid_argument);
}

TEST(CamWeights, ClassifierRowAndBackProjectedEmbedding) {
  Model<float> model(desk(Variant::p4));
  const auto width = model.widths().back();
  const auto cls = cam_weights(model, {CamMode::classification, 3, {}});
  ASSERT_EQ(cls.size(), width);
  for (std::size_t j = 0; j < width; ++j) EXPECT_EQ(cls[j], model.classifier_weight().values()[3 * width + j]);

  Prng rng(5);
  std::vector<float> e(64);
  for (auto& v : e) v = static_cast<float>(rng.normal());
  const auto ret = cam_weights(model, {CamMode::retrieval, 0, e});
  const auto& w = model.embedding_weight().values();
  for (std::size_t j = 0; j < width; ++j) {
    double s = 0;
    for (std::size_t d = 0; d < 64; ++d) s += static_cast<double>(w[d * width + j]) * e[d];
    EXPECT_NEAR(ret[j], s, 1e-5 * std::max(1.0, std::abs(s)));
  }
  EXPECT_THROW(cam_weights(model, {CamMode::classification, 10, {}}), std::invalid_argument);
  EXPECT_THROW(cam_weights(model, {CamMode::retrieval, 0, std::vector<float>(3)}), std::invalid_argument);
}

TEST(Cam, P4mHeatmapsFollowTheInputRotation) {
  Model<float> model(desk(Variant::p4m));
  Prng rng(6);
  seed_statistics(model, rng);
  for (int trial = 0; trial < 3; ++trial) {
    const auto img = random_image(32, rng);
    for (const CamTarget& target : {CamTarget{CamMode::classification, trial, {}},
                                    CamTarget{CamMode::retrieval, 0, std::vector<float>(64, 0.125f)}}) {
      const auto base = compute_cam(model, img, target);
      ASSERT_EQ(base.height, 8);
      for (int k = 1; k < 4; ++k) {
        const auto turned = compute_cam(model, rotate_image(img, k), target);
        EXPECT_LE(relative_l2(turned.values, rotate_heatmap(base, k).values), 1e-3) << "turns " << k;
      }
    }
  }
  EXPECT_EQ(model.mode(), Mode::eval);
}

TEST(Cam, OverlayHasImageResolution) {
  Prng rng(7);
  const auto img = random_image(32, rng);
  Heatmap h{8, 8, std::vector<float>(64)};
  for (int i = 0; i < 64; ++i) h.values[i] = static_cast<float>(i) / 63.0f;
  const auto over = overlay_heatmap(img, h);
  ASSERT_EQ(over.channels, 3);
  ASSERT_EQ(over.height, 32);
  ASSERT_EQ(over.width, 32);
  // Pixel (5, 6) falls in heatmap cell (1, 1) with value 9/63.
  const float x = 9.0f / 63.0f;
  EXPECT_NEAR(over.at(0, 5, 6), 0.5f * img.at(0, 5, 6) + 0.5f * x, 1e-6);
  EXPECT_NEAR(over.at(2, 5, 6), 0.5f * img.at(0, 5, 6) + 0.5f * (1 - x), 1e-6);
  EXPECT_EQ(rotate_heatmap(rotate_heatmap(h, 1), 3).values, h.values);
}

TEST(Cam, RejectsMismatchedImages) {
  Model<float> model(desk(Variant::plain));
  Prng rng(8);
  seed_statistics(model, rng);
  EXPECT_THROW(compute_cam(model, random_image(16, rng), {}), std::invalid_argument);
}

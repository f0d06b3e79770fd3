#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>

#include <unistd.h>

#include "gcml/checkpoint.hpp"
#include "gcml/model.hpp"
#include "gcml/verify.hpp"
#include "oracles.hpp"

using namespace gcml;
namespace fs = std::filesystem;

namespace {

ModelConfig desk(Variant v, bool attention = false) {
  ModelConfig c;
  c.variant = v;
  c.attention = attention;
  c.stages = {{2, 8}, {2, 16}, {2, 32}};
  c.input_size = 32;
  return c;
}

ModelConfig tiny(Variant v) {
  ModelConfig c;
  c.variant = v;
  c.stages = {{1, 4}, {1, 6}};
  c.input_size = 8;
  c.num_classes = 3;
  c.embed_dim = 5;
  return c;
}

template <typename T>
Tensor<T> random_images(std::size_t n, int size, Prng& rng) {
  Tensor<T> t({n, 1, static_cast<std::size_t>(size), static_cast<std::size_t>(size)});
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform());
  return t;
}

// Plain ResNet written directly against the brute-force oracles.
struct Reference {
  std::map<std::string, oracle::Vec> p;
  int n;

  oracle::Vec conv(const oracle::Vec& x, const std::string& name, int c, int o, int k, int h) const {
    const auto& b = p.at(name + ".bias");
    return oracle::conv2d(x, p.at(name + ".weight"), &b, n, c, h, h, o, k, 1, (k - 1) / 2);
  }
  oracle::Vec bn(const oracle::Vec& x, const std::string& name, int c, int h) const {
    return oracle::batchnorm_train(x, p.at(name + ".gamma"), p.at(name + ".beta"), n, c, h * h, 1e-5);
  }
  static oracle::Vec relu(oracle::Vec x) {
    for (auto& v : x) v = std::max(0.0, v);
    return x;
  }

  std::pair<oracle::Vec, oracle::Vec> forward(const oracle::Vec& img, const ModelConfig& cfg,
                                              const std::vector<std::size_t>& widths) const {
    int h = cfg.input_size, c = static_cast<int>(widths[0]);
    auto x = relu(bn(conv(img, "stem.conv", cfg.input_channels, c, 3, h), "stem.bn", c, h));
    for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
      if (s > 0) {
        x = oracle::maxpool(x, n * c, h, h, 2);
        h /= 2;
      }
      const int o = static_cast<int>(widths[s]);
      for (int b = 0; b < cfg.stages[s].blocks; ++b) {
        const std::string bp = "stage" + std::to_string(s) + ".block" + std::to_string(b);
        auto y = relu(bn(conv(x, bp + ".conv1", c, o, 3, h), bp + ".bn1", o, h));
        y = bn(conv(y, bp + ".conv2", o, o, 3, h), bp + ".bn2", o, h);
        const auto skip = p.count(bp + ".projection.weight") ? conv(x, bp + ".projection", c, o, 1, h) : x;
        for (std::size_t i = 0; i < y.size(); ++i) y[i] += skip[i];
        x = relu(y);
        c = o;
      }
    }
    const auto pooled = oracle::avgpool(x, n * c, h * h);
    auto logits = oracle::linear(pooled, p.at("head.classify.weight"), p.at("head.classify.bias"), n, c,
                                 cfg.num_classes);
    auto emb = oracle::linear(pooled, p.at("head.embed.weight"), p.at("head.embed.bias"), n, c, cfg.embed_dim);
    for (int i = 0; i < n; ++i) {
      double norm = 0;
      for (int d = 0; d < cfg.embed_dim; ++d) norm += emb[i * cfg.embed_dim + d] * emb[i * cfg.embed_dim + d];
      norm = std::sqrt(norm);
      for (int d = 0; d < cfg.embed_dim; ++d) emb[i * cfg.embed_dim + d] /= norm;
    }
    return {logits, emb};
  }
};

fs::path temp_file(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("gcml_model_test_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(Model, ScaledWidthsKeepParameterCountsSimilar) {
  EXPECT_EQ(scaled_width(32, Variant::plain), 32u);
  EXPECT_EQ(scaled_width(32, Variant::p4), 16u);
  EXPECT_EQ(scaled_width(32, Variant::p4m), 11u);
  for (bool att : {false, true}) {
    const double plain = static_cast<double>(Model<float>(desk(Variant::plain, att)).param_count());
    for (Variant v : {Variant::p4, Variant::p4m}) {
      const double count = static_cast<double>(Model<float>(desk(v, att)).param_count());
      EXPECT_LE(std::abs(count / plain - 1), 0.10) << to_string(v) << " attention=" << att;
    }
  }
}

TEST(Model, PlainVariantMatchesReferenceNetwork) {
  auto cfg = tiny(Variant::plain);
  cfg.stages = {{1, 4}, {2, 6}};
  Model<double> model(cfg);
  Reference ref;
  ref.n = 3;
  for (auto& [name, t] : model.named_parameters()) ref.p[name] = oracle::values(t);
  Prng rng(4);
  const auto images = random_images<double>(3, cfg.input_size, rng);
  const auto [logits, emb] = ref.forward(oracle::values(images), cfg, model.widths());
  EXPECT_LE(oracle::max_rel(oracle::values(model.forward_classify(images)), logits), 1e-9);
  EXPECT_LE(oracle::max_rel(oracle::values(model.forward_embed(images)), emb), 1e-9);
}

TEST(Model, EmbeddingsAreUnitLength) {
  Model<double> model(tiny(Variant::p4));
  Prng rng(1);
  const auto e = model.forward_embed(random_images<double>(4, 8, rng));
  for (std::size_t i = 0; i < 4; ++i) {
    double n = 0;
    for (std::size_t d = 0; d < 5; ++d) n += e.values()[i * 5 + d] * e.values()[i * 5 + d];
    EXPECT_NEAR(n, 1.0, 1e-12);
  }
}

TEST(Model, GroupVariantsAreInvariantEndToEnd) {
  for (Variant v : {Variant::p4, Variant::p4m}) {
    for (bool att : {false, true}) {
      Model<float> model(desk(v, att));
      Prng rng(17);
      model.forward_embed(random_images<float>(8, 32, rng));  // seeds the running statistics
      model.set_mode(Mode::eval);
      const auto images = random_images<float>(6, 32, rng);
      const auto base = model.forward_embed(images);
      const auto base_logits = model.forward_classify(images);
      for (int g = 1; g < model.spec().order(); ++g) {
        const auto moved = transform_spatial(images, model.spec(), g);
        EXPECT_LE(relative_l2(model.forward_embed(moved).values(), base.values()), 1e-3) << to_string(v) << " g=" << g;
        EXPECT_LE(relative_l2(model.forward_classify(moved).values(), base_logits.values()), 1e-3);
      }
    }
  }
}

TEST(Model, PlainVariantIsNotInvariant) {
  Model<float> model(desk(Variant::plain));
  Prng rng(18);
  model.forward_embed(random_images<float>(8, 32, rng));
  model.set_mode(Mode::eval);
  const auto images = random_images<float>(4, 32, rng);
  const GroupSpec p4(GroupKind::p4);
  EXPECT_GT(relative_l2(model.forward_embed(transform_spatial(images, p4, 1)).values(),
                        model.forward_embed(images).values()),
            1e-3);
}

TEST(Model, EvalBeforeAnyTrainingStepIsRejected) {
  Model<float> model(tiny(Variant::p4));
  model.set_mode(Mode::eval);
  Prng rng(2);
  EXPECT_THROW(model.forward_embed(random_images<float>(2, 8, rng)), std::logic_error);
}

TEST(Model, RejectsInconsistentConfigsAndInputs) {
  auto cfg = tiny(Variant::p4m);
  cfg.input_size = 6;  // 6 -> 3 cannot be pooled again for a third stage
  cfg.stages = {{1, 4}, {1, 4}, {1, 4}};
  EXPECT_THROW(Model<float>{cfg}, std::invalid_argument);
  Model<float> model(tiny(Variant::p4m));
  EXPECT_THROW(model.forward_embed(Tensor<float>({1, 1, 9, 9})), ShapeError);
}

TEST(Model, SameSeedGivesIdenticalWeights) {
  Model<float> a(tiny(Variant::p4m)), b(tiny(Variant::p4m));
  auto pa = a.named_parameters(), pb = b.named_parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i].tensor.values(), pb[i].tensor.values());
}

TEST(Checkpoint, RoundTripReproducesOutputs) {
  const auto cfg = tiny(Variant::p4m);
  Model<float> model(cfg);
  Prng rng(3);
  const auto images = random_images<float>(4, 8, rng);
  model.forward_embed(images);
  model.set_mode(Mode::eval);
  const auto path = temp_file("roundtrip.ckpt");
  save_checkpoint(model, path);
  auto loaded = load_checkpoint(path, cfg);
  EXPECT_EQ(loaded.mode(), Mode::eval);
  EXPECT_EQ(loaded.forward_embed(images).values(), model.forward_embed(images).values());
  EXPECT_EQ(encode_checkpoint(model_entries(loaded)), read_file_bytes(path));
}

TEST(Checkpoint, Crc32MatchesKnownValue) {
  const std::string s = "123456789";
  EXPECT_EQ(crc32_ieee(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()), 0xCBF43926u);
}

TEST(Checkpoint, CorruptionIsDetected) {
  Model<float> model(tiny(Variant::p4));
  auto bytes = encode_checkpoint(model_entries(model));
  ASSERT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "GCML0001");
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x01;
  EXPECT_THROW(decode_checkpoint(flipped), CheckpointError);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 10);
  EXPECT_THROW(decode_checkpoint(truncated), CheckpointError);
  EXPECT_THROW(decode_checkpoint(std::vector<std::uint8_t>(3, 0)), CheckpointError);
}

TEST(Checkpoint, MissingExtraAndMisshapenTensorsAreRejected) {
  Model<float> model(tiny(Variant::p4));
  const auto entries = model_entries(model);
  auto missing = entries;
  missing.erase(missing.begin() + 2);
  EXPECT_THROW(apply_entries(model, missing), CheckpointError);
  auto extra = entries;
  extra.push_back({"bogus", {1}, {0.f}});
  EXPECT_THROW(apply_entries(model, extra), CheckpointError);
  auto reshaped = entries;
  reshaped[0].dims.push_back(1);
  EXPECT_THROW(apply_entries(model, reshaped), CheckpointError);
  auto duplicated = entries;
  duplicated.push_back(entries[0]);
  EXPECT_THROW(apply_entries(model, duplicated), CheckpointError);
  // A checkpoint for another variant does not fit.
  Model<float> other(tiny(Variant::p4m));
  EXPECT_THROW(apply_entries(other, entries), CheckpointError);
  EXPECT_NO_THROW(apply_entries(model, entries));
}

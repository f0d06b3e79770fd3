// Residual backbone in three variants (plain, p4, p4m) with a
// classification head and an L2-normalized embedding head that share the
// trunk.
//
// Layer sequence: lifting conv stem + BN + ReLU; per stage, residual blocks
// of two 3x3 group convs with BN (1x1 group-conv projection on the skip when
// widths differ); optional channel attention after the last block of each
// stage; 2x2 spatial max pooling between stages; max over the group axis;
// global average pooling; two linear heads. The plain variant is the same
// network over the trivial group.
#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gcml/attention.hpp"
#include "gcml/gconv.hpp"
#include "gcml/group.hpp"
#include "gcml/ops.hpp"
#include "gcml/tensor.hpp"

namespace gcml {

enum class Variant { plain, p4, p4m };

std::string to_string(Variant v);
Variant parse_variant(const std::string& name);
GroupKind group_kind(Variant v);

struct StageConfig {
  int blocks = 2;
  int base_width = 32;
  bool operator==(const StageConfig&) const = default;
};

struct ModelConfig {
  Variant variant = Variant::p4m;
  bool attention = false;
  std::vector<StageConfig> stages{{2, 32}, {2, 64}, {2, 128}};
  int input_channels = 1;
  int input_size = 64;
  int num_classes = 10;
  int embed_dim = 64;
  int attention_reduction = 4;
  std::uint64_t seed = 1;

  /// Throws std::invalid_argument on inconsistent sizes.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Filter count after compensating for the |G|-fold channel growth:
/// plain keeps base, p4 halves, p4m divides by sqrt(8); rounded half-up,
/// at least 1.
std::size_t scaled_width(std::size_t base_width, Variant variant);

/// Largest divisor of `channels` not exceeding `reduction`.
std::size_t effective_reduction(std::size_t channels, std::size_t reduction);

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
class ResidualBlock {
 public:
  ResidualBlock(const GroupSpec& spec, std::size_t in_channels, std::size_t out_channels);

  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  void init(Prng& rng);

  GroupConv<T> conv1, conv2;
  GroupBatchNorm<T> bn1, bn2;
  std::unique_ptr<GroupConv<T>> projection;
};

template <typename T>
struct Stage {
  std::vector<ResidualBlock<T>> blocks;
  std::unique_ptr<ChannelAttention<T>> attention;
};

template <typename T>
class Model {
 public:
  /// Builds the network and draws He-uniform weights from Prng(config.seed).
  explicit Model(const ModelConfig& config);

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return config_; }
  const GroupSpec& spec() const { return spec_; }
  Mode mode() const { return mode_; }
  void set_mode(Mode mode) { mode_ = mode; }

  /// Output of the last stage (after attention): N x C x |G| x H' x W'.
  Tensor<T> features(const Tensor<T>& images);
  /// Group pool + global average pool of `features`: N x C.
  Tensor<T> pool(const Tensor<T>& features) const;
  Tensor<T> classify_head(const Tensor<T>& pooled) const;
  Tensor<T> embed_head(const Tensor<T>& pooled) const;

  Tensor<T> forward_classify(const Tensor<T>& images);
  Tensor<T> forward_embed(const Tensor<T>& images);

  /// Parameters in a fixed order: trunk, classification head, embedding head.
  std::vector<NamedTensor<T>> named_parameters();
  /// BatchNorm running statistics, as tensors sharing no storage with the model.
  std::vector<NamedTensor<T>> named_buffers();
  /// Copies values into the running statistics of the named buffer.
  void set_buffer(const std::string& name, std::span<const T> values);
  /// Replaces every running statistic by the batch-size weighted average of
  /// the train-mode batch statistics over `batches` (no gradients, weights untouched). The mode
  /// is restored afterwards.
  void recalibrate_batchnorm(std::span<const Tensor<T>> batches);

  std::vector<Tensor<T>> trunk_parameters();
  std::vector<Tensor<T>> classifier_parameters();
  std::vector<Tensor<T>> embedding_parameters();

  std::size_t param_count();

  Tensor<T>& classifier_weight() { return cls_w_; }
  Tensor<T>& classifier_bias() { return cls_b_; }
  Tensor<T>& embedding_weight() { return emb_w_; }
  Tensor<T>& embedding_bias() { return emb_b_; }
  const std::vector<std::size_t>& widths() const { return widths_; }

 private:
  void collect(std::vector<NamedTensor<T>>* params, std::vector<NamedTensor<T>>* buffers,
               std::vector<std::pair<std::string, BatchNormStats<T>*>>* stats);

  ModelConfig config_;
  GroupSpec spec_;
  Mode mode_ = Mode::train;
  std::vector<std::size_t> widths_;
  std::unique_ptr<LiftingConv<T>> stem_;
  std::unique_ptr<GroupBatchNorm<T>> stem_bn_;
  std::vector<Stage<T>> stages_;
  Tensor<T> cls_w_, cls_b_, emb_w_, emb_b_;
};

template <typename T>
Model<T> build_model(const ModelConfig& config) {
  return Model<T>(config);
}

extern template class Model<float>;
extern template class Model<double>;

}  // namespace gcml

// Group-equivariant layers.
//
// Feature maps on the group are rank-5 tensors N x C x |G| x H x W. Both
// convolutions keep a single canonical filter bank as their learned
// parameters; the |G| transformed copies are produced by a precomputed
// gather, so gradients of every copy scatter-add into the canonical weights.
#pragma once

#include <cstddef>
#include <vector>

#include "gcml/group.hpp"
#include "gcml/ops.hpp"
#include "gcml/prng.hpp"
#include "gcml/tensor.hpp"

namespace gcml {

/// Z^2 -> G convolution. weight O x C x k x k, bias O.
/// Output slice g is the correlation of the input with the filters
/// transformed by g; the bias is shared across g.
template <typename T>
class LiftingConv {
 public:
  LiftingConv(GroupSpec spec, std::size_t in_channels, std::size_t out_channels, int kernel);

  Tensor<T> forward(const Tensor<T>& input) const;
  /// (O*|G|) x C x k x k bank of transformed filters.
  Tensor<T> expanded_weight() const;

  void init_he_uniform(Prng& rng);

  const GroupSpec& spec() const { return spec_; }
  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }
  int kernel() const { return k_; }
  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }
  const Tensor<T>& weight() const { return weight_; }
  const Tensor<T>& bias() const { return bias_; }

 private:
  GroupSpec spec_;
  std::size_t in_, out_;
  int k_;
  Tensor<T> weight_, bias_;
  std::vector<std::size_t> weight_index_, bias_index_;
};

/// G -> G convolution. weight O x C x |G| x k x k, bias O.
/// Output slice g sums, over input slices h, the correlation with filter
/// slice g^-1 h spatially transformed by g.
template <typename T>
class GroupConv {
 public:
  GroupConv(GroupSpec spec, std::size_t in_channels, std::size_t out_channels, int kernel);

  Tensor<T> forward(const Tensor<T>& input) const;
  /// (O*|G|) x (C*|G|) x k x k bank of transformed filters.
  Tensor<T> expanded_weight() const;

  void init_he_uniform(Prng& rng);

  const GroupSpec& spec() const { return spec_; }
  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }
  int kernel() const { return k_; }
  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }
  const Tensor<T>& weight() const { return weight_; }
  const Tensor<T>& bias() const { return bias_; }

 private:
  GroupSpec spec_;
  std::size_t in_, out_;
  int k_;
  Tensor<T> weight_, bias_;
  std::vector<std::size_t> weight_index_, bias_index_;
};

/// Batch norm whose statistics are shared across the group axis:
/// per channel, reduced over N, |G|, H and W.
template <typename T>
class GroupBatchNorm {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  explicit GroupBatchNorm(std::size_t channels);

  Tensor<T> forward(const Tensor<T>& input, Mode mode);

  std::size_t channels() const { return gamma_.numel(); }
  Tensor<T>& gamma() { return gamma_; }
  Tensor<T>& beta() { return beta_; }
  const Tensor<T>& gamma() const { return gamma_; }
  const Tensor<T>& beta() const { return beta_; }
  BatchNormStats<T>& stats() { return stats_; }
  const BatchNormStats<T>& stats() const { return stats_; }

 private:
  Tensor<T> gamma_, beta_;
  BatchNormStats<T> stats_;
};

/// Max over the group axis: N x C x |G| x H x W -> N x C x H x W.
template <typename T> Tensor<T> group_pool(const Tensor<T>& input);

/// 2x2 max pooling applied to every (n, c, g) slice.
template <typename T> Tensor<T> gspatial_maxpool(const Tensor<T>& input);

}  // namespace gcml

#pragma once

#include <cstddef>

#include "gcml/prng.hpp"
#include "gcml/tensor.hpp"

namespace gcml {

/// Squeeze-and-excitation style channel gate for group feature maps.
///
/// The descriptor of channel c is the mean over the group and spatial
/// axes, so the gate is unchanged by any group action on the input and
/// the gated map stays equivariant.
template <typename T>
class ChannelAttention {
 public:
  ChannelAttention(std::size_t channels, std::size_t reduction);

  /// f_g: N x C x |G| x H x W (or N x C x H x W) -> gate N x C in (0, 1).
  Tensor<T> gate(const Tensor<T>& features) const;
  /// gate followed by apply_attention.
  Tensor<T> forward(const Tensor<T>& features) const;

  void init_he_uniform(Prng& rng);

  std::size_t channels() const { return channels_; }
  std::size_t hidden() const { return hidden_; }
  Tensor<T>& w1() { return w1_; }
  Tensor<T>& b1() { return b1_; }
  Tensor<T>& w2() { return w2_; }
  Tensor<T>& b2() { return b2_; }
  const Tensor<T>& w1() const { return w1_; }
  const Tensor<T>& b1() const { return b1_; }
  const Tensor<T>& w2() const { return w2_; }
  const Tensor<T>& b2() const { return b2_; }

 private:
  std::size_t channels_, hidden_;
  Tensor<T> w1_, b1_, w2_, b2_;
};

/// f_r[n,c,...] = gate[n,c] * f_g[n,c,...].
template <typename T>
Tensor<T> apply_attention(const Tensor<T>& gate, const Tensor<T>& features);

}  // namespace gcml

#include "gcml/attention.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "gcml/ops.hpp"

namespace gcml {

template <typename T>
ChannelAttention<T>::ChannelAttention(std::size_t channels, std::size_t reduction)
    : channels_(channels) {
  if (reduction == 0 || channels % reduction != 0) {
    throw std::invalid_argument("channel attention: reduction " + std::to_string(reduction) +
                                " does not divide " + std::to_string(channels) + " channels");
  }
  hidden_ = channels / reduction;
  w1_ = Tensor<T>::zeros({hidden_, channels_});
  b1_ = Tensor<T>::zeros({hidden_});
  w2_ = Tensor<T>::zeros({channels_, hidden_});
  b2_ = Tensor<T>::zeros({channels_});
  for (auto* t : {&w1_, &b1_, &w2_, &b2_}) t->set_requires_grad(true);
}

template <typename T>
Tensor<T> ChannelAttention<T>::gate(const Tensor<T>& features) const {
  if (features.ndim() < 3 || features.dim(1) != channels_) {
    throw ShapeError("channel attention: expected N x " + std::to_string(channels_) +
                     " x ... features, got " + shape_to_string(features.shape()));
  }
  auto descriptor = global_avgpool(features);
  auto hidden = relu(linear(descriptor, w1_, b1_));
  return sigmoid(linear(hidden, w2_, b2_));
}

template <typename T>
Tensor<T> ChannelAttention<T>::forward(const Tensor<T>& features) const {
  return apply_attention(gate(features), features);
}

template <typename T>
void ChannelAttention<T>::init_he_uniform(Prng& rng) {
  const double bound1 = std::sqrt(6.0 / static_cast<double>(channels_));
  const double bound2 = std::sqrt(6.0 / static_cast<double>(hidden_));
  for (auto& v : w1_.data()) v = static_cast<T>(rng.uniform(-bound1, bound1));
  for (auto& v : w2_.data()) v = static_cast<T>(rng.uniform(-bound2, bound2));
  for (auto& v : b1_.data()) v = T(0);
  for (auto& v : b2_.data()) v = T(0);
}

template <typename T>
Tensor<T> apply_attention(const Tensor<T>& gate, const Tensor<T>& features) {
  return scale_channels(features, gate);
}

template class ChannelAttention<float>;
template class ChannelAttention<double>;
template Tensor<float> apply_attention(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> apply_attention(const Tensor<double>&, const Tensor<double>&);

}  // namespace gcml

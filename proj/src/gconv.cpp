#include "gcml/gconv.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace gcml {

namespace {

void check_kernel(int k) {
  if (k < 1 || k % 2 == 0) {
    throw std::invalid_argument("group convolution kernel must be odd, got " + std::to_string(k));
  }
}

template <typename T>
void fill_uniform(Tensor<T>& t, Prng& rng, double bound) {
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
}

}  // namespace

// ---------------------------------------------------------------------------

template <typename T>
LiftingConv<T>::LiftingConv(GroupSpec spec, std::size_t in_channels, std::size_t out_channels,
                            int kernel)
    : spec_(spec), in_(in_channels), out_(out_channels), k_(kernel) {
  check_kernel(kernel);
  const auto kk = static_cast<std::size_t>(k_ * k_);
  const auto order = static_cast<std::size_t>(spec_.order());
  weight_ = Tensor<T>::zeros({out_, in_, static_cast<std::size_t>(k_), static_cast<std::size_t>(k_)});
  weight_.set_requires_grad(true);
  bias_ = Tensor<T>::zeros({out_});
  bias_.set_requires_grad(true);

  weight_index_.resize(out_ * order * in_ * kk);
  for (std::size_t g = 0; g < order; ++g) {
    const auto act = act_on_grid(spec_, static_cast<int>(g), k_);
    for (std::size_t o = 0; o < out_; ++o)
      for (std::size_t c = 0; c < in_; ++c)
        for (std::size_t s = 0; s < kk; ++s)
          weight_index_[((o * order + g) * in_ + c) * kk + act.index_map[s]] = (o * in_ + c) * kk + s;
  }
  bias_index_.resize(out_ * order);
  for (std::size_t o = 0; o < out_; ++o)
    for (std::size_t g = 0; g < order; ++g) bias_index_[o * order + g] = o;
}

template <typename T>
Tensor<T> LiftingConv<T>::expanded_weight() const {
  const auto order = static_cast<std::size_t>(spec_.order());
  const auto k = static_cast<std::size_t>(k_);
  return gather(weight_, weight_index_, Shape{out_ * order, in_, k, k});
}

template <typename T>
Tensor<T> LiftingConv<T>::forward(const Tensor<T>& input) const {
  if (input.ndim() != 4 || input.dim(1) != in_) {
    throw ShapeError("lift_conv: expected N x " + std::to_string(in_) + " x H x W input, got " +
                     shape_to_string(input.shape()));
  }
  const auto order = static_cast<std::size_t>(spec_.order());
  auto b = gather(bias_, bias_index_, Shape{out_ * order});
  auto y = conv2d(input, expanded_weight(), std::optional<Tensor<T>>(b), 1, (k_ - 1) / 2);
  return y.reshape({y.dim(0), out_, order, y.dim(2), y.dim(3)});
}

template <typename T>
void LiftingConv<T>::init_he_uniform(Prng& rng) {
  fill_uniform(weight_, rng, std::sqrt(6.0 / static_cast<double>(in_ * k_ * k_)));
  for (auto& v : bias_.data()) v = T(0);
}

// ---------------------------------------------------------------------------

template <typename T>
GroupConv<T>::GroupConv(GroupSpec spec, std::size_t in_channels, std::size_t out_channels,
                        int kernel)
    : spec_(spec), in_(in_channels), out_(out_channels), k_(kernel) {
  check_kernel(kernel);
  const auto kk = static_cast<std::size_t>(k_ * k_);
  const auto order = static_cast<std::size_t>(spec_.order());
  const auto k = static_cast<std::size_t>(k_);
  weight_ = Tensor<T>::zeros({out_, in_, order, k, k});
  weight_.set_requires_grad(true);
  bias_ = Tensor<T>::zeros({out_});
  bias_.set_requires_grad(true);

  weight_index_.resize(out_ * order * in_ * order * kk);
  for (std::size_t g = 0; g < order; ++g) {
    const auto act = act_on_grid(spec_, static_cast<int>(g), k_);
    const int ginv = spec_.inverse(static_cast<int>(g));
    for (std::size_t h = 0; h < order; ++h) {
      const auto src_h = static_cast<std::size_t>(spec_.compose(ginv, static_cast<int>(h)));
      for (std::size_t o = 0; o < out_; ++o)
        for (std::size_t c = 0; c < in_; ++c)
          for (std::size_t s = 0; s < kk; ++s) {
            const std::size_t dst = ((((o * order + g) * in_ + c) * order + h) * kk) + act.index_map[s];
            weight_index_[dst] = ((o * in_ + c) * order + src_h) * kk + s;
          }
    }
  }
  bias_index_.resize(out_ * order);
  for (std::size_t o = 0; o < out_; ++o)
    for (std::size_t g = 0; g < order; ++g) bias_index_[o * order + g] = o;
}

template <typename T>
Tensor<T> GroupConv<T>::expanded_weight() const {
  const auto order = static_cast<std::size_t>(spec_.order());
  const auto k = static_cast<std::size_t>(k_);
  return gather(weight_, weight_index_, Shape{out_ * order, in_ * order, k, k});
}

template <typename T>
Tensor<T> GroupConv<T>::forward(const Tensor<T>& input) const {
  const auto order = static_cast<std::size_t>(spec_.order());
  if (input.ndim() != 5 || input.dim(1) != in_ || input.dim(2) != order) {
    throw ShapeError("gconv: expected N x " + std::to_string(in_) + " x " + std::to_string(order) +
                     " x H x W input for " + to_string(spec_.kind()) + ", got " +
                     shape_to_string(input.shape()));
  }
  const std::size_t n = input.dim(0), h = input.dim(3), w = input.dim(4);
  auto flat = input.reshape({n, in_ * order, h, w});
  auto b = gather(bias_, bias_index_, Shape{out_ * order});
  auto y = conv2d(flat, expanded_weight(), std::optional<Tensor<T>>(b), 1, (k_ - 1) / 2);
  return y.reshape({n, out_, order, h, w});
}

template <typename T>
void GroupConv<T>::init_he_uniform(Prng& rng) {
  const double fan_in = static_cast<double>(in_ * static_cast<std::size_t>(spec_.order() * k_ * k_));
  fill_uniform(weight_, rng, std::sqrt(6.0 / fan_in));
  for (auto& v : bias_.data()) v = T(0);
}

// ---------------------------------------------------------------------------

template <typename T>
GroupBatchNorm<T>::GroupBatchNorm(std::size_t channels)
    : gamma_(Tensor<T>::ones({channels})), beta_(Tensor<T>::zeros({channels})) {
  gamma_.set_requires_grad(true);
  beta_.set_requires_grad(true);
}

template <typename T>
Tensor<T> GroupBatchNorm<T>::forward(const Tensor<T>& input, Mode mode) {
  return batchnorm(input, gamma_, beta_, stats_, static_cast<T>(kEps), static_cast<T>(kMomentum),
                   mode);
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> group_pool(const Tensor<T>& input) {
  if (input.ndim() != 5) {
    throw ShapeError("group_pool: expected N x C x |G| x H x W, got " + shape_to_string(input.shape()));
  }
  const std::size_t nc = input.dim(0) * input.dim(1);
  const std::size_t order = input.dim(2);
  const std::size_t plane = input.dim(3) * input.dim(4);
  std::vector<T> out(nc * plane);
  std::vector<std::size_t> arg(out.size());
  const T* x = input.data().data();
  for (std::size_t b = 0; b < nc; ++b)
    for (std::size_t p = 0; p < plane; ++p) {
      std::size_t best = b * order * plane + p;
      for (std::size_t g = 1; g < order; ++g) {
        const std::size_t idx = (b * order + g) * plane + p;
        if (x[idx] > x[best]) best = idx;
      }
      out[b * plane + p] = x[best];
      arg[b * plane + p] = best;
    }
  return make_result<T>(Shape{input.dim(0), input.dim(1), input.dim(3), input.dim(4)},
                        std::move(out), {input}, [arg = std::move(arg)](detail::Node<T>& o) {
    auto& p = *o.parents[0];
    for (std::size_t i = 0; i < arg.size(); ++i) p.grad[arg[i]] += o.grad[i];
  });
}

template <typename T>
Tensor<T> gspatial_maxpool(const Tensor<T>& input) {
  if (input.ndim() != 5) {
    throw ShapeError("gspatial_maxpool: expected N x C x |G| x H x W, got " +
                     shape_to_string(input.shape()));
  }
  if (input.dim(3) % 2 != 0 || input.dim(4) % 2 != 0) {
    throw ShapeError("gspatial_maxpool: spatial dims must be even, got " +
                     shape_to_string(input.shape()));
  }
  return maxpool2d(input, 2, 2);
}

template class LiftingConv<float>;
template class LiftingConv<double>;
template class GroupConv<float>;
template class GroupConv<double>;
template class GroupBatchNorm<float>;
template class GroupBatchNorm<double>;
template Tensor<float> group_pool(const Tensor<float>&);
template Tensor<double> group_pool(const Tensor<double>&);
template Tensor<float> gspatial_maxpool(const Tensor<float>&);
template Tensor<double> gspatial_maxpool(const Tensor<double>&);

}  // namespace gcml

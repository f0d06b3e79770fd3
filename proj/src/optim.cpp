#include "gcml/optim.hpp"

#include <stdexcept>
#include <string>

namespace gcml {

template <typename T>
Sgd<T>::Sgd(std::vector<Tensor<T>> params, double learning_rate, double momentum)
    : params_(std::move(params)), lr_(learning_rate), momentum_(momentum) {
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("sgd: learning rate must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("sgd: momentum must be in [0, 1)");
  velocity_.reserve(params_.size());
  for (const auto& p : params_) velocity_.emplace_back(p.numel(), T(0));
}

template <typename T>
void Sgd<T>::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].has_grad()) {
      throw std::logic_error("sgd: parameter " + std::to_string(i) + " of shape " +
                             shape_to_string(params_[i].shape()) + " has no gradient");
    }
  }
  const T lr = static_cast<T>(lr_), mom = static_cast<T>(momentum_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto data = params_[i].data();
    auto grad = params_[i].grad();
    auto& v = velocity_[i];
    for (std::size_t k = 0; k < data.size(); ++k) {
      v[k] = mom * v[k] + grad[k];
      data[k] -= lr * v[k];
    }
  }
  zero_grad();
}

template <typename T>
void Sgd<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template class Sgd<float>;
template class Sgd<double>;

}  // namespace gcml

#pragma once

#include <vector>

#include "gcml/tensor.hpp"

namespace gcml {

/// SGD with heavy-ball momentum:
///   v <- momentum * v + grad;  p <- p - lr * v
/// Velocities are created lazily, zero-initialized, one per parameter.
template <typename T>
class Sgd {
 public:
  Sgd(std::vector<Tensor<T>> params, double learning_rate, double momentum);

  /// Applies one update and clears the gradients.
  /// Throws std::logic_error if any parameter has no gradient.
  void step();
  void zero_grad();

  double learning_rate() const { return lr_; }
  double momentum() const { return momentum_; }
  const std::vector<std::vector<T>>& velocity() const { return velocity_; }
  const std::vector<Tensor<T>>& params() const { return params_; }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<T>> velocity_;
  double lr_, momentum_;
};

}  // namespace gcml

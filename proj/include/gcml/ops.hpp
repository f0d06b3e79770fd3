// Differentiable tensor operations used by the backbone.
//
// All operations are pure functions of their inputs (batchnorm additionally
// updates the running statistics it is handed). Results are deterministic:
// the summation order of every output element is fixed and independent of
// the thread count.
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "gcml/tensor.hpp"

namespace gcml {

enum class Mode { train, eval };

/// Worker threads used by the batch-parallel kernels (conv2d). Default 1.
void set_num_threads(int threads);
int num_threads();

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T s);
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);

template <typename T> Tensor<T> relu(const Tensor<T>& x);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);

/// Cross-correlation with symmetric zero padding.
/// input N x C x H x W, weight O x C x k x k (k odd), bias O.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight,
                 const std::optional<Tensor<T>>& bias, int stride, int pad);

/// Non-overlapping max pooling over the last two axes (window == stride).
/// Ties go to the first maximum in row-major order.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& input, int window, int stride);

/// N x C x ... -> N x C, mean over every trailing axis.
template <typename T> Tensor<T> global_avgpool(const Tensor<T>& input);

/// input N x Din, weight Dout x Din, bias Dout.
template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
struct BatchNormStats {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  bool initialized = false;
};

/// Batch normalization with axis 1 as the channel axis; statistics are
/// reduced over every other axis. The first train-mode call seeds the
/// running statistics with the batch statistics, later calls blend with
/// factor `momentum`. Running variance uses the unbiased estimate.
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                    BatchNormStats<T>& stats, T eps, T momentum, Mode mode);

/// Mean over the batch of -log softmax(logits)[label].
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

/// out.flat[i] = input.flat[index[i]]; the backward pass scatter-adds.
template <typename T>
Tensor<T> gather(const Tensor<T>& input, std::span<const std::size_t> index, Shape out_shape);

/// Rows of an N x D tensor, in the given order (repeats allowed).
template <typename T>
Tensor<T> select_rows(const Tensor<T>& input, std::span<const std::size_t> rows);

/// Each row divided by its Euclidean norm; all-zero rows stay zero.
template <typename T> Tensor<T> l2_normalize_rows(const Tensor<T>& input);

/// x N x C x ..., s N x C: out = s[n,c] * x[n,c,...].
template <typename T>
Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& s);

}  // namespace gcml

// Metric-learning losses and in-batch triplet mining.
#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "gcml/tensor.hpp"

namespace gcml {

struct Triplet {
  std::size_t anchor;
  std::size_t positive;
  std::size_t negative;
  bool operator==(const Triplet&) const = default;
};

struct TripletBatch {
  std::vector<Triplet> triples;
  double margin = 0.2;
  std::size_t candidates = 0;  // valid (a, p, n) combinations inspected

  std::vector<std::size_t> anchors() const;
  std::vector<std::size_t> positives() const;
  std::vector<std::size_t> negatives() const;
};

class MiningError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// mean_i max(0, |a_i - p_i|^2 - |a_i - n_i|^2 + margin). The hinge has
/// zero gradient at the kink.
template <typename T>
Tensor<T> triplet_loss(const Tensor<T>& anchor, const Tensor<T>& positive,
                       const Tensor<T>& negative, T margin);

/// mean_i (same_i ? d_i^2 : max(0, margin - d_i)^2), d_i = |e1_i - e2_i|.
template <typename T>
Tensor<T> contrastive_loss(const Tensor<T>& e1, const Tensor<T>& e2,
                           const std::vector<bool>& same, T margin);

/// Batch-all mining restricted to violating triplets: every (a, p, n) with
/// label(a) == label(p), a != p, label(n) != label(a) whose hinge value is
/// strictly positive, enumerated in ascending (a, p, n).
/// Throws MiningError when the batch admits no valid triplet at all.
template <typename T>
TripletBatch dense_triplet_mine(const Tensor<T>& embeddings, std::span<const int> labels, T margin);

}  // namespace gcml

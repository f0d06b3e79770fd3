#include "gcml/metric.hpp"

#include <cmath>
#include <string>

#include "gcml/ops.hpp"

namespace gcml {

namespace {

template <typename T>
T sq_dist(const T* a, const T* b, std::size_t d) {
  T acc = 0;
  for (std::size_t k = 0; k < d; ++k) {
    const T diff = a[k] - b[k];
    acc += diff * diff;
  }
  return acc;
}

void check_pair(const Shape& a, const Shape& b, const char* op) {
  if (a.size() != 2 || a != b) {
    throw ShapeError(std::string(op) + ": expected equal N x D shapes, got " + shape_to_string(a) +
                     " and " + shape_to_string(b));
  }
}

}  // namespace

std::vector<std::size_t> TripletBatch::anchors() const {
  std::vector<std::size_t> v;
  v.reserve(triples.size());
  for (const auto& t : triples) v.push_back(t.anchor);
  return v;
}

std::vector<std::size_t> TripletBatch::positives() const {
  std::vector<std::size_t> v;
  v.reserve(triples.size());
  for (const auto& t : triples) v.push_back(t.positive);
  return v;
}

std::vector<std::size_t> TripletBatch::negatives() const {
  std::vector<std::size_t> v;
  v.reserve(triples.size());
  for (const auto& t : triples) v.push_back(t.negative);
  return v;
}

template <typename T>
Tensor<T> triplet_loss(const Tensor<T>& anchor, const Tensor<T>& positive,
                       const Tensor<T>& negative, T margin) {
  check_pair(anchor.shape(), positive.shape(), "triplet_loss");
  check_pair(anchor.shape(), negative.shape(), "triplet_loss");
  if (!(margin >= T(0))) throw std::invalid_argument("triplet_loss: margin must be >= 0");
  const std::size_t n = anchor.dim(0), d = anchor.dim(1);
  if (n == 0) throw ShapeError("triplet_loss: empty batch");
  std::vector<char> active(n, 0);
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T* a = anchor.data().data() + i * d;
    const T h = sq_dist(a, positive.data().data() + i * d, d) -
                sq_dist(a, negative.data().data() + i * d, d) + margin;
    if (h > T(0)) {
      total += h;
      active[i] = 1;
    }
  }
  return make_result<T>(Shape{}, {total / static_cast<T>(n)}, {anchor, positive, negative},
                        [n, d, active = std::move(active)](detail::Node<T>& o) {
    auto& pa = *o.parents[0];
    auto& pp = *o.parents[1];
    auto& pn = *o.parents[2];
    const T g = T(2) * o.grad[0] / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (!active[i]) continue;
      for (std::size_t k = 0; k < d; ++k) {
        const std::size_t j = i * d + k;
        const T a = pa.value[j], p = pp.value[j], q = pn.value[j];
        // d/da = 2(a-p) - 2(a-n) = 2(n-p); d/dp = -2(a-p); d/dn = 2(a-n)
        if (pa.requires_grad) pa.grad[j] += g * (q - p);
        if (pp.requires_grad) pp.grad[j] += g * (p - a);
        if (pn.requires_grad) pn.grad[j] += g * (a - q);
      }
    }
  });
}

template <typename T>
Tensor<T> contrastive_loss(const Tensor<T>& e1, const Tensor<T>& e2, const std::vector<bool>& same,
                           T margin) {
  check_pair(e1.shape(), e2.shape(), "contrastive_loss");
  if (!(margin > T(0))) throw std::invalid_argument("contrastive_loss: margin must be > 0");
  const std::size_t n = e1.dim(0), d = e1.dim(1);
  if (same.size() != n) throw ShapeError("contrastive_loss: need one same/different flag per row");
  if (n == 0) throw ShapeError("contrastive_loss: empty batch");
  // coef[i] multiplies (e1 - e2) in the gradient of term i.
  std::vector<T> coef(n, T(0));
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T d2 = sq_dist(e1.data().data() + i * d, e2.data().data() + i * d, d);
    if (same[i]) {
      total += d2;
      coef[i] = T(2);
    } else {
      const T dist = std::sqrt(d2);
      const T gap = margin - dist;
      if (gap > T(0)) {
        total += gap * gap;
        coef[i] = dist > T(0) ? -T(2) * gap / dist : T(0);
      }
    }
  }
  return make_result<T>(Shape{}, {total / static_cast<T>(n)}, {e1, e2},
                        [n, d, coef = std::move(coef)](detail::Node<T>& o) {
    auto& p1 = *o.parents[0];
    auto& p2 = *o.parents[1];
    const T g = o.grad[0] / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (coef[i] == T(0)) continue;
      for (std::size_t k = 0; k < d; ++k) {
        const std::size_t j = i * d + k;
        const T diff = g * coef[i] * (p1.value[j] - p2.value[j]);
        if (p1.requires_grad) p1.grad[j] += diff;
        if (p2.requires_grad) p2.grad[j] -= diff;
      }
    }
  });
}

template <typename T>
TripletBatch dense_triplet_mine(const Tensor<T>& embeddings, std::span<const int> labels, T margin) {
  if (embeddings.ndim() != 2) throw ShapeError("dense_triplet_mine: embeddings must be B x D");
  const std::size_t b = embeddings.dim(0), d = embeddings.dim(1);
  if (labels.size() != b) throw ShapeError("dense_triplet_mine: need one label per embedding");
  const T* e = embeddings.data().data();

  std::vector<T> dist(b * b);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) dist[i * b + j] = sq_dist(e + i * d, e + j * d, d);

  TripletBatch batch;
  batch.margin = static_cast<double>(margin);
  for (std::size_t a = 0; a < b; ++a)
    for (std::size_t p = 0; p < b; ++p) {
      if (p == a || labels[p] != labels[a]) continue;
      for (std::size_t n = 0; n < b; ++n) {
        if (labels[n] == labels[a]) continue;
        ++batch.candidates;
        // Same expression as triplet_loss so both agree on the kink.
        if (dist[a * b + p] - dist[a * b + n] + margin > T(0)) batch.triples.push_back({a, p, n});
      }
    }
  if (batch.candidates == 0) {
    throw MiningError("dense_triplet_mine: batch of " + std::to_string(b) +
                      " samples admits no (anchor, positive, negative) triplet");
  }
  return batch;
}

template Tensor<float> triplet_loss(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&, float);
template Tensor<double> triplet_loss(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&, double);
template Tensor<float> contrastive_loss(const Tensor<float>&, const Tensor<float>&, const std::vector<bool>&, float);
template Tensor<double> contrastive_loss(const Tensor<double>&, const Tensor<double>&, const std::vector<bool>&, double);
template TripletBatch dense_triplet_mine(const Tensor<float>&, std::span<const int>, float);
template TripletBatch dense_triplet_mine(const Tensor<double>&, std::span<const int>, double);

}  // namespace gcml

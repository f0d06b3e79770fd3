#include "gcml/group.hpp"

#include <stdexcept>

namespace gcml {

std::string to_string(GroupKind kind) {
  switch (kind) {
    case GroupKind::trivial: return "trivial";
    case GroupKind::p4: return "p4";
    case GroupKind::p4m: return "p4m";
  }
  return "?";
}

GroupKind parse_group_kind(const std::string& name) {
  if (name == "trivial") return GroupKind::trivial;
  if (name == "p4") return GroupKind::p4;
  if (name == "p4m") return GroupKind::p4m;
  throw std::invalid_argument("unknown group kind '" + name + "'");
}

GroupSpec::GroupSpec(GroupKind kind) : kind_(kind) {
  order_ = kind == GroupKind::trivial ? 1 : kind == GroupKind::p4 ? 4 : 8;
  compose_.resize(static_cast<std::size_t>(order_ * order_));
  inverse_.resize(static_cast<std::size_t>(order_));
  // m^s1 r^k1 m^s2 r^k2 = m^(s1+s2) r^((-1)^s2 k1 + k2), using r m = m r^-1.
  for (int g = 0; g < order_; ++g) {
    for (int h = 0; h < order_; ++h) {
      const int s1 = g / 4, k1 = g % 4, s2 = h / 4, k2 = h % 4;
      const int s = (s1 + s2) % 2;
      const int k = (((s2 ? -k1 : k1) + k2) % 4 + 4) % 4;
      compose_[static_cast<std::size_t>(g * order_ + h)] = 4 * s + k;
    }
  }
  if (kind == GroupKind::trivial) compose_[0] = 0;
  for (int g = 0; g < order_; ++g)
    for (int h = 0; h < order_; ++h)
      if (compose(g, h) == 0) inverse_[static_cast<std::size_t>(g)] = h;
}

void GroupSpec::check(int g) const {
  if (g < 0 || g >= order_) {
    throw std::out_of_range("group element " + std::to_string(g) + " outside " +
                            to_string(kind_) + " of order " + std::to_string(order_));
  }
}

int GroupSpec::compose(int g, int h) const {
  check(g);
  check(h);
  return compose_[static_cast<std::size_t>(g * order_ + h)];
}

int GroupSpec::inverse(int g) const {
  check(g);
  return inverse_[static_cast<std::size_t>(g)];
}

int GroupSpec::rotation(int g) const {
  check(g);
  return g % 4;
}

bool GroupSpec::mirrored(int g) const {
  check(g);
  return g >= 4;
}

std::string GroupSpec::element_name(int g) const {
  check(g);
  static const char* names[] = {"e", "r", "r2", "r3", "m", "mr", "mr2", "mr3"};
  return names[g];
}

Mat2 GroupSpec::matrix(int g) const {
  check(g);
  Mat2 m{1, 0, 0, 1};
  const Mat2 r{0, -1, 1, 0};
  for (int i = 0; i < g % 4; ++i) {
    m = Mat2{r[0] * m[0] + r[1] * m[2], r[0] * m[1] + r[1] * m[3],
             r[2] * m[0] + r[3] * m[2], r[2] * m[1] + r[3] * m[3]};
  }
  if (g >= 4) m = Mat2{m[0], m[1], -m[2], -m[3]};
  return m;
}

int group_order(const GroupSpec& spec) { return spec.order(); }

GridAction act_on_grid(const GroupSpec& spec, int g, int k) {
  if (k < 1) throw std::invalid_argument("act_on_grid: grid size must be >= 1");
  const Mat2 m = spec.matrix(g);
  GridAction a;
  a.element = g;
  a.size = k;
  a.index_map.resize(static_cast<std::size_t>(k * k));
  // Doubled, centered coordinates keep even grids on integers.
  for (int u = 0; u < k; ++u) {
    for (int v = 0; v < k; ++v) {
      const int x = 2 * v - (k - 1);
      const int y = (k - 1) - 2 * u;
      const int x2 = m[0] * x + m[1] * y;
      const int y2 = m[2] * x + m[3] * y;
      const int v2 = (x2 + (k - 1)) / 2;
      const int u2 = ((k - 1) - y2) / 2;
      a.index_map[static_cast<std::size_t>(u * k + v)] = static_cast<std::size_t>(u2 * k + v2);
    }
  }
  return a;
}

std::vector<int> regular_perm(const GroupSpec& spec, int g) {
  std::vector<int> p(static_cast<std::size_t>(spec.order()));
  for (int h = 0; h < spec.order(); ++h) p[static_cast<std::size_t>(h)] = spec.compose(g, h);
  return p;
}

template <typename T>
Tensor<T> transform_spatial(const Tensor<T>& x, const GroupSpec& spec, int g) {
  if (x.ndim() < 2) throw ShapeError("transform_spatial: need at least 2 axes");
  const std::size_t h = x.dim(x.ndim() - 2), w = x.dim(x.ndim() - 1);
  if (h != w) {
    throw ShapeError("transform_spatial: spatial dims must be square, got " +
                     shape_to_string(x.shape()));
  }
  const auto act = act_on_grid(spec, g, static_cast<int>(h));
  const std::size_t plane = h * w;
  std::vector<T> out(x.numel());
  for (std::size_t b = 0; b < x.numel() / plane; ++b) {
    act.apply<T>(x.data().subspan(b * plane, plane), std::span<T>(out).subspan(b * plane, plane));
  }
  return Tensor<T>(x.shape(), std::move(out));
}

template <typename T>
Tensor<T> rotate_feature_map(const Tensor<T>& x, const GroupSpec& spec, int g) {
  if (x.ndim() == 4) return transform_spatial(x, spec, g);
  if (x.ndim() != 5) {
    throw ShapeError("rotate_feature_map: expected rank 4 or 5, got " + shape_to_string(x.shape()));
  }
  const auto order = static_cast<std::size_t>(spec.order());
  if (x.dim(2) != order) {
    throw ShapeError("rotate_feature_map: group axis has " + std::to_string(x.dim(2)) +
                     " slices, group order is " + std::to_string(order));
  }
  auto spatial = transform_spatial(x, spec, g);
  const auto perm = regular_perm(spec, g);
  const std::size_t plane = x.dim(3) * x.dim(4);
  const std::size_t nc = x.dim(0) * x.dim(1);
  std::vector<T> out(x.numel());
  for (std::size_t b = 0; b < nc; ++b)
    for (std::size_t h = 0; h < order; ++h) {
      const T* src = spatial.data().data() + (b * order + h) * plane;
      T* dst = out.data() + (b * order + static_cast<std::size_t>(perm[h])) * plane;
      std::copy(src, src + plane, dst);
    }
  return Tensor<T>(x.shape(), std::move(out));
}

template Tensor<float> transform_spatial(const Tensor<float>&, const GroupSpec&, int);
template Tensor<double> transform_spatial(const Tensor<double>&, const GroupSpec&, int);
template Tensor<float> rotate_feature_map(const Tensor<float>&, const GroupSpec&, int);
template Tensor<double> rotate_feature_map(const Tensor<double>&, const GroupSpec&, int);

}  // namespace gcml

// Finite point groups acting on square pixel grids: the cyclic group of
// 90 degree rotations (p4) and its extension by a mirror (p4m).
//
// Element g has index 4*s + k and stands for m^s r^k: first rotate k times
// by 90 degrees counter-clockwise, then mirror if s == 1. The mirror flips
// rows (reflection about the horizontal axis). The trivial group (order 1)
// is provided so that a plain CNN is the degenerate case of a group CNN.
#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "gcml/tensor.hpp"

namespace gcml {

enum class GroupKind { trivial, p4, p4m };

std::string to_string(GroupKind kind);
GroupKind parse_group_kind(const std::string& name);

/// Integer 2x2 matrix acting on (x, y) with y pointing up.
using Mat2 = std::array<int, 4>;

class GroupSpec {
 public:
  explicit GroupSpec(GroupKind kind);

  GroupKind kind() const { return kind_; }
  int order() const { return order_; }
  int compose(int g, int h) const;
  int inverse(int g) const;
  const std::vector<int>& compose_table() const { return compose_; }
  const std::vector<int>& inverse_table() const { return inverse_; }

  /// Number of quarter turns and mirror bit of element g.
  int rotation(int g) const;
  bool mirrored(int g) const;
  std::string element_name(int g) const;

  /// Signed-permutation matrix of g.
  Mat2 matrix(int g) const;

  bool operator==(const GroupSpec& other) const { return kind_ == other.kind_; }

 private:
  void check(int g) const;

  GroupKind kind_;
  int order_;
  std::vector<int> compose_;
  std::vector<int> inverse_;
};

int group_order(const GroupSpec& spec);

/// Permutation of a k x k grid realizing element g.
/// `index_map[u*k + v]` is the flat target index of source cell (u, v).
struct GridAction {
  int element = 0;
  int size = 0;
  std::vector<std::size_t> index_map;

  /// out[index_map[i]] = in[i]
  template <typename T>
  void apply(std::span<const T> in, std::span<T> out) const {
    for (std::size_t i = 0; i < index_map.size(); ++i) out[index_map[i]] = in[i];
  }
};

GridAction act_on_grid(const GroupSpec& spec, int g, int k);

/// Left-regular action on the group axis: result[h] = compose(g, h).
std::vector<int> regular_perm(const GroupSpec& spec, int g);

/// Applies g to a feature map. Rank 4 (N x C x H x W) maps are rotated
/// spatially; rank 5 (N x C x |G| x H x W) maps additionally have the group
/// axis permuted so that slice h moves to slot compose(g, h).
/// The result carries no gradient history.
template <typename T>
Tensor<T> rotate_feature_map(const Tensor<T>& x, const GroupSpec& spec, int g);

/// Spatial action only, on the last two axes of any tensor of rank >= 2.
template <typename T>
Tensor<T> transform_spatial(const Tensor<T>& x, const GroupSpec& spec, int g);

}  // namespace gcml

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "rwtree/environment.hpp"

namespace rwtree {

using NodeId = std::int32_t;
inline constexpr NodeId kRootParent = -1;
inline constexpr NodeId kRoot = 0;

struct ChildRange {
  NodeId first = 0;
  std::int32_t count = 0;
};

/// Lazily grown realization of the marked tree.
///
/// A node's (nu, marks) are drawn from a counter-based stream keyed by the
/// arena seed and a hash of the node's path from the root, so the realized
/// environment does not depend on the order in which nodes are expanded.
/// Dropping nodes with reset() and expanding them again reproduces them
/// exactly; this is how long quenched runs keep memory bounded.
class TreeArena {
 public:
  static constexpr std::size_t kDefaultCapacity = std::size_t{1} << 22;

  TreeArena(EnvironmentSpec spec, std::uint64_t seed,
            std::size_t capacity = kDefaultCapacity);

  const EnvironmentSpec& spec() const { return spec_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return parent_.size(); }

  /// Drops every node except the (unexpanded) root. Same environment.
  void reset();
  /// Drops every node and switches to another environment realization.
  void reseed(std::uint64_t seed);

  NodeId parent(NodeId x) const { return parent_[static_cast<std::size_t>(x)]; }
  std::int32_t depth(NodeId x) const { return depth_[static_cast<std::size_t>(x)]; }
  /// A(x) = omega(parent, x) / omega(parent, grandparent); 1 for the root.
  double mark(NodeId x) const { return mark_[static_cast<std::size_t>(x)]; }
  /// log of prod_{root < y <= x} A(y).
  double log_weight(NodeId x) const { return log_weight_[static_cast<std::size_t>(x)]; }
  std::uint64_t path_key(NodeId x) const { return key_[static_cast<std::size_t>(x)]; }
  bool expanded(NodeId x) const { return first_child_[static_cast<std::size_t>(x)] >= 0; }

  /// Materializes the children of x on first call; later calls return the
  /// same range. Throws ArenaCapacity past the node budget.
  ChildRange expand(NodeId x);
  ChildRange children(NodeId x) const {
    const auto i = static_cast<std::size_t>(x);
    return {first_child_[i], child_count_[i]};
  }

  /// omega(x, parent of x) = 1 / (1 + sum_i A(x^(i))). Requires x expanded.
  double up_probability(NodeId x) const { return up_[static_cast<std::size_t>(x)]; }
  /// Sum of the child marks of an expanded node.
  double child_mark_sum(NodeId x) const { return 1.0 / up_probability(x) - 1.0; }
  /// omega(root, parent-of-root), expanding the root if needed.
  double omega_root_parent();

  /// Transition probability omega(x, y) for y a neighbour of x. Requires x
  /// expanded; y = kRootParent is the parent of the root.
  double omega(NodeId x, NodeId y) const;

 private:
  NodeId add_node(NodeId parent, std::int32_t depth, double mark, double log_weight,
                  std::uint64_t key);

  EnvironmentSpec spec_;
  std::uint64_t seed_;
  std::size_t capacity_;
  std::vector<NodeId> parent_;
  std::vector<std::int32_t> depth_;
  std::vector<NodeId> first_child_;
  std::vector<std::int32_t> child_count_;
  std::vector<double> mark_;
  std::vector<double> log_weight_;
  std::vector<double> up_;
  std::vector<std::uint64_t> key_;
};

/// Path key of the i-th child of a node with key `parent_key`.
constexpr std::uint64_t child_path_key(std::uint64_t parent_key, std::size_t index) {
  return mix64(parent_key * 0x9E3779B97F4A7C15ULL + index + 1);
}

inline constexpr std::uint64_t kRootPathKey = 0x6A09E667F3BCC909ULL;

}  // namespace rwtree

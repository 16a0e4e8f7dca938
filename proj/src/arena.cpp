#include "rwtree/arena.hpp"

#include <cmath>
#include <string>

#include "rwtree/errors.hpp"

namespace rwtree {

TreeArena::TreeArena(EnvironmentSpec spec, std::uint64_t seed, std::size_t capacity)
    : spec_(std::move(spec)), seed_(seed), capacity_(capacity) {
  if (capacity_ < 1) throw ArenaCapacity("arena capacity must allow the root");
  reset();
}

void TreeArena::reset() {
  parent_.clear();
  depth_.clear();
  first_child_.clear();
  child_count_.clear();
  mark_.clear();
  log_weight_.clear();
  up_.clear();
  key_.clear();
  add_node(kRootParent, 0, 1.0, 0.0, kRootPathKey);
}

void TreeArena::reseed(std::uint64_t seed) {
  seed_ = seed;
  reset();
}

NodeId TreeArena::add_node(NodeId parent, std::int32_t depth, double mark, double log_weight,
                           std::uint64_t key) {
  if (parent_.size() >= capacity_) {
    throw ArenaCapacity("tree arena exceeded its budget of " + std::to_string(capacity_) +
                        " nodes");
  }
  parent_.push_back(parent);
  depth_.push_back(depth);
  first_child_.push_back(-1);
  child_count_.push_back(0);
  mark_.push_back(mark);
  log_weight_.push_back(log_weight);
  up_.push_back(0.0);
  key_.push_back(key);
  return static_cast<NodeId>(parent_.size() - 1);
}

ChildRange TreeArena::expand(NodeId x) {
  const auto i = static_cast<std::size_t>(x);
  if (first_child_[i] >= 0) return {first_child_[i], child_count_[i]};
  RngStream rng(seed_, key_[i]);
  const Atom& atom = spec_.atoms()[spec_.sample_atom(rng)];
  const auto count = static_cast<std::int32_t>(atom.nu());
  if (parent_.size() + atom.nu() > capacity_) {
    throw ArenaCapacity("tree arena exceeded its budget of " + std::to_string(capacity_) +
                        " nodes");
  }
  const auto first = static_cast<NodeId>(parent_.size());
  double sum = 0.0;
  for (std::size_t c = 0; c < atom.nu(); ++c) {
    const double m = atom.marks[c];
    sum += m;
    add_node(x, depth_[i] + 1, m, log_weight_[i] + std::log(m), child_path_key(key_[i], c));
  }
  first_child_[i] = first;
  child_count_[i] = count;
  up_[i] = 1.0 / (1.0 + sum);
  return {first, count};
}

double TreeArena::omega_root_parent() {
  expand(kRoot);
  return up_probability(kRoot);
}

double TreeArena::omega(NodeId x, NodeId y) const {
  if (x == kRootParent) return y == kRoot ? 1.0 : 0.0;
  const double up = up_probability(x);
  if (y == parent(x)) return up;
  if (y >= 0 && parent(y) == x) return mark(y) * up;
  return 0.0;
}

}  // namespace rwtree

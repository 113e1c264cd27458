#pragma once

#include <algorithm>
#include <cmath>
#include <queue>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "dmsgcn/errors.hpp"
#include "dmsgcn/ops.hpp"
#include "dmsgcn/tensor.hpp"

namespace dmsgcn {

using Edge = std::pair<std::size_t, std::size_t>;
using Groups = std::vector<std::vector<std::size_t>>;

/// Kinematic tree given by parent indices (-1 marks the root).
class Skeleton {
 public:
  Skeleton() = default;

  explicit Skeleton(std::vector<int> parents, std::vector<std::string> names = {})
      : parents_(std::move(parents)), names_(std::move(names)) {
    const std::size_t v = parents_.size();
    if (v == 0) throw ValidationError("skeleton needs at least one joint");
    if (names_.empty())
      for (std::size_t i = 0; i < v; ++i) names_.push_back("joint" + std::to_string(i));
    if (names_.size() != v) throw ValidationError("skeleton has " + std::to_string(v) + " parents but " +
                                                  std::to_string(names_.size()) + " names");
    std::size_t roots = 0;
    for (std::size_t i = 0; i < v; ++i) {
      const int p = parents_[i];
      if (p == -1) {
        ++roots;
        root_ = i;
        continue;
      }
      if (p < 0 || static_cast<std::size_t>(p) >= v || static_cast<std::size_t>(p) == i)
        throw ValidationError("joint " + std::to_string(i) + " has invalid parent " + std::to_string(p));
      edges_.emplace_back(static_cast<std::size_t>(p), i);
    }
    if (roots != 1) throw ValidationError("skeleton must have exactly one root, found " + std::to_string(roots));
    // every joint must reach the root without revisiting a joint
    for (std::size_t i = 0; i < v; ++i) {
      std::size_t cur = i, steps = 0;
      while (parents_[cur] != -1) {
        cur = static_cast<std::size_t>(parents_[cur]);
        if (++steps > v) throw ValidationError("skeleton parents contain a cycle through joint " + std::to_string(i));
      }
    }
  }

  std::size_t size() const { return parents_.size(); }
  std::size_t root() const { return root_; }
  const std::vector<int>& parents() const { return parents_; }
  const std::vector<std::string>& names() const { return names_; }
  /// Undirected (parent, child) pairs, V - 1 of them.
  const std::vector<Edge>& edges() const { return edges_; }

  std::vector<std::vector<std::size_t>> neighbors() const {
    std::vector<std::vector<std::size_t>> adj(size());
    for (auto [a, b] : edges_) {
      adj[a].push_back(b);
      adj[b].push_back(a);
    }
    return adj;
  }

  friend bool operator==(const Skeleton& a, const Skeleton& b) {
    return a.parents_ == b.parents_ && a.names_ == b.names_;
  }

 private:
  std::vector<int> parents_;
  std::vector<std::string> names_;
  std::vector<Edge> edges_;
  std::size_t root_ = 0;
};

/// Square integer matrix, row-major.
struct HopMatrix {
  std::size_t size = 0;
  std::vector<int> hops;
  int operator()(std::size_t i, std::size_t j) const { return hops[i * size + j]; }
  int max() const { return *std::max_element(hops.begin(), hops.end()); }
};

/// Breadth-first shortest path lengths along skeleton edges.
inline HopMatrix hop_distance(const Skeleton& skel) {
  const std::size_t v = skel.size();
  const auto adj = skel.neighbors();
  HopMatrix d{v, std::vector<int>(v * v, -1)};
  for (std::size_t s = 0; s < v; ++s) {
    std::queue<std::size_t> frontier;
    d.hops[s * v + s] = 0;
    frontier.push(s);
    while (!frontier.empty()) {
      const std::size_t u = frontier.front();
      frontier.pop();
      for (std::size_t w : adj[u]) {
        if (d.hops[s * v + w] >= 0) continue;
        d.hops[s * v + w] = d.hops[s * v + u] + 1;
        frontier.push(w);
      }
    }
  }
  if (std::find(d.hops.begin(), d.hops.end(), -1) != d.hops.end())
    throw ValidationError("skeleton is disconnected");
  return d;
}

/// Binary V x V matrix; 1 = connection allowed.
struct Mask {
  std::size_t size = 0;
  std::vector<unsigned char> bits;

  unsigned char operator()(std::size_t i, std::size_t j) const { return bits[i * size + j]; }
  std::size_t zero_count() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 0)); }

  template <typename S>
  Tensor<S> tensor() const {
    Tensor<S> t(Shape{size, size});
    for (std::size_t i = 0; i < bits.size(); ++i) t.data()[i] = bits[i] ? S(1) : S(0);
    return t;
  }
};

/// M[i][j] = 1 iff hop_distance(i, j) <= max_hop.
inline Mask build_mask(const Skeleton& skel, int max_hop) {
  if (max_hop < 0) throw ConfigError("max_hop must be non-negative, got " + std::to_string(max_hop));
  const HopMatrix d = hop_distance(skel);
  Mask m{d.size, std::vector<unsigned char>(d.hops.size())};
  for (std::size_t i = 0; i < d.hops.size(); ++i) m.bits[i] = d.hops[i] <= max_hop ? 1 : 0;
  return m;
}

inline Mask all_ones_mask(std::size_t v) { return Mask{v, std::vector<unsigned char>(v * v, 1)}; }

/// Fine-to-coarse chain of skeletons linked by groupings. Coarse skeleton edges
/// are the group pairs joined by at least one fine edge; that graph must be a tree.
class ScaleHierarchy {
 public:
  ScaleHierarchy() = default;

  ScaleHierarchy(Skeleton finest, std::vector<Groups> groupings, std::vector<std::vector<std::string>> level_names = {})
      : groupings_(std::move(groupings)) {
    skeletons_.push_back(std::move(finest));
    for (std::size_t step = 0; step < groupings_.size(); ++step) {
      const std::vector<std::string> names =
          step < level_names.size() ? level_names[step] : std::vector<std::string>{};
      skeletons_.push_back(coarsen(skeletons_.back(), groupings_[step], names));
    }
  }

  std::size_t levels() const { return skeletons_.size(); }
  const Skeleton& skeleton(std::size_t level) const { return skeletons_.at(level); }
  const Groups& grouping(std::size_t step) const { return groupings_.at(step); }

  /// Row-stochastic P[coarse x fine]; row r averages the members of group r.
  std::vector<double> pooling(std::size_t step) const {
    const Groups& g = grouping(step);
    const std::size_t fine = skeletons_[step].size();
    std::vector<double> p(g.size() * fine, 0.0);
    for (std::size_t r = 0; r < g.size(); ++r)
      for (std::size_t j : g[r]) p[r * fine + j] = 1.0 / static_cast<double>(g[r].size());
    return p;
  }

  template <typename S>
  Tensor<S> pooling_tensor(std::size_t step) const {
    const auto p = pooling(step);
    std::vector<S> v(p.begin(), p.end());
    return Tensor<S>(Shape{grouping(step).size(), skeletons_[step].size()}, std::move(v));
  }

  /// Membership matrix U[fine x coarse] (1 where the fine joint belongs to the group).
  std::vector<double> membership(std::size_t step) const {
    const Groups& g = grouping(step);
    const std::size_t fine = skeletons_[step].size();
    std::vector<double> u(fine * g.size(), 0.0);
    for (std::size_t r = 0; r < g.size(); ++r)
      for (std::size_t j : g[r]) u[j * g.size() + r] = 1.0;
    return u;
  }

 private:
  static Skeleton coarsen(const Skeleton& fine, const Groups& groups, const std::vector<std::string>& names) {
    const std::size_t v = fine.size();
    std::vector<int> owner(v, -1);
    for (std::size_t r = 0; r < groups.size(); ++r) {
      if (groups[r].empty()) throw ValidationError("empty joint group " + std::to_string(r));
      for (std::size_t j : groups[r]) {
        if (j >= v) throw ValidationError("group " + std::to_string(r) + " references joint " + std::to_string(j) +
                                          " outside [0," + std::to_string(v) + ")");
        if (owner[j] != -1) throw ValidationError("joint " + std::to_string(j) + " appears in two groups");
        owner[j] = static_cast<int>(r);
      }
    }
    for (std::size_t j = 0; j < v; ++j)
      if (owner[j] == -1) throw ValidationError("joint " + std::to_string(j) + " belongs to no group");

    const std::size_t c = groups.size();
    std::set<Edge> coarse_edges;
    for (auto [a, b] : fine.edges()) {
      const auto ga = static_cast<std::size_t>(owner[a]);
      const auto gb = static_cast<std::size_t>(owner[b]);
      if (ga != gb) coarse_edges.insert({std::min(ga, gb), std::max(ga, gb)});
    }
    if (coarse_edges.size() + 1 != c)
      throw ValidationError("grouping does not induce a tree: " + std::to_string(coarse_edges.size()) +
                            " edges between " + std::to_string(c) + " groups");
    std::vector<std::vector<std::size_t>> adj(c);
    for (auto [a, b] : coarse_edges) {
      adj[a].push_back(b);
      adj[b].push_back(a);
    }
    std::vector<int> parents(c, -2);
    const auto root = static_cast<std::size_t>(owner[fine.root()]);
    parents[root] = -1;
    std::queue<std::size_t> frontier;
    frontier.push(root);
    while (!frontier.empty()) {
      const std::size_t u = frontier.front();
      frontier.pop();
      for (std::size_t w : adj[u])
        if (parents[w] == -2) {
          parents[w] = static_cast<int>(u);
          frontier.push(w);
        }
    }
    if (std::find(parents.begin(), parents.end(), -2) != parents.end())
      throw ValidationError("grouping does not induce a connected coarse skeleton");
    return Skeleton(std::move(parents), names);
  }

  std::vector<Skeleton> skeletons_;
  std::vector<Groups> groupings_;
};

/// Mean-pools joints: [..., V_fine, 3] -> [..., V_coarse, 3] via P[coarse x fine].
template <typename S>
Tensor<S> downsample(const Tensor<S>& pose, const Tensor<S>& pooling) {
  if (pooling.rank() != 2) throw DimensionError("downsample: pooling matrix must be 2-D");
  const std::size_t cols = pooling.dim(1);
  for (std::size_t r = 0; r < pooling.dim(0); ++r) {
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j) total += static_cast<double>(pooling.data()[r * cols + j]);
    if (std::abs(total - 1.0) > 1e-5) throw ContractError("downsample: pooling row " + std::to_string(r) + " does not sum to 1");
  }
  if (pose.rank() < 2) throw DimensionError("downsample: pose must be [..., V, 3], got " + shape_str(pose.shape()));
  return mix_axis(pooling, pose, -2);
}

// ---------------------------------------------------------------------------
// Built-in definitions.

/// 32-joint Human3.6M convention.
inline Skeleton h36m_skeleton_32() {
  std::vector<int> parents{-1, 0,  1,  2,  3,  4,  0,  6,  7,  8,  9,  0,  11, 12, 13, 14,
                           12, 16, 17, 18, 19, 20, 19, 22, 12, 24, 25, 26, 27, 28, 27, 30};
  std::vector<std::string> names{
      "Hips",         "RightUpLeg",  "RightLeg",     "RightFoot",     "RightToeBase", "RightToeSite", "LeftUpLeg",
      "LeftLeg",      "LeftFoot",    "LeftToeBase",  "LeftToeSite",   "Spine",        "Spine1",       "Neck",
      "Head",         "HeadSite",    "LeftShoulder", "LeftArm",       "LeftForeArm",  "LeftHand",     "LeftHandThumb",
      "LeftThumbSite", "LeftWristEnd", "LeftWristSite", "RightShoulder", "RightArm",    "RightForeArm", "RightHand",
      "RightHandThumb", "RightThumbSite", "RightWristEnd", "RightWristSite"};
  return Skeleton(std::move(parents), std::move(names));
}

/// Columns of the 32-joint layout kept for the 22-joint model skeleton.
inline std::vector<std::size_t> h36m_joint_selection_22() {
  return {2, 3, 4, 5, 7, 8, 9, 10, 12, 13, 14, 15, 17, 18, 19, 21, 22, 25, 26, 27, 29, 30};
}

/// 22-joint skeleton; the removed pelvis and shoulder anchors are bridged to Spine1.
inline Skeleton joint22_skeleton() {
  std::vector<int> parents{8, 0, 1, 2, 8, 4, 5, 6, -1, 8, 9, 10, 8, 12, 13, 14, 14, 8, 17, 18, 19, 19};
  std::vector<std::string> names{"RightKnee",     "RightAnkle",    "RightToe",     "RightToeTip",  "LeftKnee",
                                 "LeftAnkle",     "LeftToe",       "LeftToeTip",   "Spine",        "Neck",
                                 "Head",          "HeadTop",       "LeftShoulder", "LeftElbow",    "LeftWrist",
                                 "LeftThumb",     "LeftHandTip",   "RightShoulder", "RightElbow",  "RightWrist",
                                 "RightThumb",    "RightHandTip"};
  return Skeleton(std::move(parents), std::move(names));
}

/// Joint (22) -> bone (10) -> part (5) grouped along limbs.
inline ScaleHierarchy default_hierarchy() {
  Groups bone{{0, 1}, {2, 3}, {4, 5}, {6, 7}, {8, 9}, {10, 11}, {12, 13}, {14, 15, 16}, {17, 18}, {19, 20, 21}};
  Groups part{{0, 1}, {2, 3}, {4, 5}, {6, 7}, {8, 9}};
  std::vector<std::string> bone_names{"right_shin", "right_foot", "left_shin",      "left_foot",  "torso",
                                      "head",        "left_arm",   "left_hand",      "right_arm",  "right_hand"};
  std::vector<std::string> part_names{"right_leg", "left_leg", "trunk", "left_limb", "right_limb"};
  return ScaleHierarchy(joint22_skeleton(), {std::move(bone), std::move(part)}, {std::move(bone_names), std::move(part_names)});
}

}  // namespace dmsgcn

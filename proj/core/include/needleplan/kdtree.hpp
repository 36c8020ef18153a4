#pragma once

#include <span>
#include <vector>

#include "needleplan/geometry.hpp"

namespace needleplan {

/// Static 3-d tree over a point set for nearest-neighbour queries.
class KdTree {
 public:
  KdTree() = default;
  explicit KdTree(std::span<const Vec3> points);

  bool empty() const noexcept { return points_.empty(); }
  std::size_t size() const noexcept { return points_.size(); }

  /// Index of the closest point (lowest index on exact ties) and its squared distance.
  std::pair<std::size_t, double> nearest(const Vec3& q) const;

 private:
  struct Node {
    int axis = -1;  // -1 for leaves
    double split = 0.0;
    int left = -1, right = -1;
    std::size_t begin = 0, end = 0;  // range in order_ for leaves
  };

  int build(std::size_t begin, std::size_t end, int depth);
  void search(int node, const Vec3& q, std::size_t& best, double& best_d2) const;

  std::vector<Vec3> points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace needleplan

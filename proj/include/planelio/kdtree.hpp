#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "planelio/rotations.hpp"

namespace planelio {

struct Neighbor {
  std::uint32_t index = 0;
  double sq_dist = 0.0;
};

/// Exact k-nearest-neighbour search over a static point set. Results are
/// ordered by (squared distance, point index), so equidistant points are
/// reported lowest index first.
class KdTree {
 public:
  KdTree() = default;
  explicit KdTree(std::vector<Vec3> points);

  const std::vector<Vec3>& points() const { return points_; }
  std::size_t size() const { return points_.size(); }

  /// Up to k neighbours of q, ascending.
  std::vector<Neighbor> knn(const Vec3& q, std::size_t k) const;

 private:
  static constexpr std::uint32_t kLeafSize = 12;

  struct Node {
    std::uint32_t begin = 0;   // range into order_
    std::uint32_t end = 0;
    std::int32_t left = -1;    // children; -1 for leaves
    std::int32_t right = -1;
    std::int32_t dim = -1;
    double split = 0.0;
  };

  std::int32_t build(std::uint32_t begin, std::uint32_t end);
  void search(std::int32_t node, const Vec3& q, std::size_t k, std::vector<Neighbor>& heap,
              std::vector<double>& scratch) const;

  std::vector<Vec3> points_;
  std::vector<Vec3> leaf_points_;  // points_ permuted into leaf order
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace planelio

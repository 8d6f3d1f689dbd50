#include "planelio/kdtree.hpp"

#include <algorithm>

#include "planelio/kernels.hpp"

namespace planelio {
namespace {

bool closer(const Neighbor& a, const Neighbor& b) {
  return a.sq_dist < b.sq_dist || (a.sq_dist == b.sq_dist && a.index < b.index);
}

}  // namespace

KdTree::KdTree(std::vector<Vec3> points) : points_(std::move(points)) {
  order_.resize(points_.size());
  for (std::uint32_t i = 0; i < order_.size(); ++i) order_[i] = i;
  if (!points_.empty()) build(0, static_cast<std::uint32_t>(points_.size()));
  leaf_points_.reserve(points_.size());
  for (std::uint32_t i : order_) leaf_points_.push_back(points_[i]);
}

std::int32_t KdTree::build(std::uint32_t begin, std::uint32_t end) {
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back(Node{begin, end});
  if (end - begin <= kLeafSize) return id;

  Vec3 lo = points_[order_[begin]];
  Vec3 hi = lo;
  for (std::uint32_t i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  Eigen::Index dim = 0;
  (hi - lo).maxCoeff(&dim);
  if (hi(dim) == lo(dim)) return id;  // all points coincide

  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     const double va = points_[a](dim), vb = points_[b](dim);
                     return va < vb || (va == vb && a < b);
                   });
  const double split = points_[order_[mid]](dim);
  const std::int32_t left = build(begin, mid);
  const std::int32_t right = build(mid, end);
  Node& n = nodes_[id];
  n.left = left;
  n.right = right;
  n.dim = static_cast<std::int32_t>(dim);
  n.split = split;
  return id;
}

std::vector<Neighbor> KdTree::knn(const Vec3& q, std::size_t k) const {
  std::vector<Neighbor> heap;
  if (k == 0 || points_.empty()) return heap;
  heap.reserve(k + 1);
  std::vector<double> scratch(kLeafSize);
  search(0, q, k, heap, scratch);
  std::sort_heap(heap.begin(), heap.end(), closer);
  return heap;
}

void KdTree::search(std::int32_t id, const Vec3& q, std::size_t k, std::vector<Neighbor>& heap,
                    std::vector<double>& scratch) const {
  const Node& n = nodes_[id];
  if (n.left < 0) {
    const std::size_t count = n.end - n.begin;
    if (scratch.size() < count) scratch.resize(count);
    kernels::squared_distances(std::span<const Vec3>(leaf_points_).subspan(n.begin, count), q,
                               std::span<double>(scratch).first(count));
    for (std::size_t i = 0; i < count; ++i) {
      const Neighbor cand{order_[n.begin + i], scratch[i]};
      if (heap.size() < k) {
        heap.push_back(cand);
        std::push_heap(heap.begin(), heap.end(), closer);
      } else if (closer(cand, heap.front())) {
        std::pop_heap(heap.begin(), heap.end(), closer);
        heap.back() = cand;
        std::push_heap(heap.begin(), heap.end(), closer);
      }
    }
    return;
  }
  const double diff = q(n.dim) - n.split;
  const std::int32_t near = diff < 0.0 ? n.left : n.right;
  const std::int32_t far = diff < 0.0 ? n.right : n.left;
  search(near, q, k, heap, scratch);
  // <= keeps equidistant candidates with lower indices reachable.
  if (heap.size() < k || diff * diff <= heap.front().sq_dist) search(far, q, k, heap, scratch);
}

}  // namespace planelio

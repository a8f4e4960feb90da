#include "gsm/mesh/point_index.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "gsm/error.hpp"

namespace gsm::mesh {
namespace {

bool closer(const Neighbor& a, const Neighbor& b) {
  return a.squared_distance < b.squared_distance ||
         (a.squared_distance == b.squared_distance && a.index < b.index);
}

}  // namespace

PointIndex::PointIndex(std::vector<Vec3> points, int leaf_size) : points_(std::move(points)) {
  if (points_.empty()) throw ContractViolation("PointIndex requires at least one point");
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), 0);
  build(0, static_cast<int>(order_.size()), leaf_size);
}

int PointIndex::build(int begin, int end, int leaf_size) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.emplace_back();
  Node node;
  node.begin = begin;
  node.end = end;
  for (int i = begin; i < end; ++i) node.box.extend(points_[order_[i]]);
  if (end - begin > leaf_size) {
    int axis = 0;
    node.box.sizes().maxCoeff(&axis);
    const int mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int a, int b) {
                       if (points_[a][axis] != points_[b][axis]) return points_[a][axis] < points_[b][axis];
                       return a < b;
                     });
    node.left = build(begin, mid, leaf_size);
    node.right = build(mid, end, leaf_size);
  }
  nodes_[id] = node;
  return id;
}

Neighbor PointIndex::nearest(const Vec3& q) const {
  auto result = knn(q, 1);
  return result.front();
}

std::vector<Neighbor> PointIndex::knn(const Vec3& q, std::size_t k, int exclude) const {
  const std::size_t available = points_.size() - ((exclude >= 0 && exclude < static_cast<int>(points_.size())) ? 1 : 0);
  if (k == 0 || k > available) throw ContractViolation("PointIndex::knn: k out of range");

  // Max-heap on (distance, index) holding the current k best.
  std::vector<Neighbor> heap;
  heap.reserve(k + 1);
  auto worst = [&]() {
    return heap.size() < k ? std::numeric_limits<double>::infinity() : heap.front().squared_distance;
  };

  struct Entry {
    int node;
    double sq;
  };
  std::vector<Entry> stack;
  stack.push_back({0, nodes_[0].box.squaredExteriorDistance(q)});
  while (!stack.empty()) {
    const Entry e = stack.back();
    stack.pop_back();
    if (e.sq > worst()) continue;
    const Node& node = nodes_[e.node];
    if (node.left < 0) {
      for (int i = node.begin; i < node.end; ++i) {
        const int idx = order_[i];
        if (idx == exclude) continue;
        const Neighbor cand{idx, (points_[idx] - q).squaredNorm()};
        if (heap.size() < k) {
          heap.push_back(cand);
          std::push_heap(heap.begin(), heap.end(), closer);
        } else if (closer(cand, heap.front())) {
          std::pop_heap(heap.begin(), heap.end(), closer);
          heap.back() = cand;
          std::push_heap(heap.begin(), heap.end(), closer);
        }
      }
      continue;
    }
    const double dl = nodes_[node.left].box.squaredExteriorDistance(q);
    const double dr = nodes_[node.right].box.squaredExteriorDistance(q);
    if (dl <= dr) {
      stack.push_back({node.right, dr});
      stack.push_back({node.left, dl});
    } else {
      stack.push_back({node.left, dl});
      stack.push_back({node.right, dr});
    }
  }
  std::sort_heap(heap.begin(), heap.end(), closer);
  return heap;
}

}  // namespace gsm::mesh

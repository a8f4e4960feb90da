#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "gsm/pose.hpp"

namespace gsm::mesh {

struct Neighbor {
  int index = -1;
  double squared_distance = 0.0;
};

/// Static k-d tree over a point set.
///
/// Nearest-neighbour ties are resolved toward the lower point index, so results equal a
/// brute-force scan ordered by (distance, index).
class PointIndex {
 public:
  PointIndex() = default;
  explicit PointIndex(std::vector<Vec3> points, int leaf_size = 8);

  std::size_t size() const noexcept { return points_.size(); }
  const std::vector<Vec3>& points() const noexcept { return points_; }

  Neighbor nearest(const Vec3& q) const;
  /// The k nearest points sorted by (distance, index); `exclude` is skipped if non-negative.
  std::vector<Neighbor> knn(const Vec3& q, std::size_t k, int exclude = -1) const;

 private:
  struct Node {
    int begin = 0, end = 0;
    int left = -1, right = -1;
    Eigen::AlignedBox3d box;
  };
  int build(int begin, int end, int leaf_size);

  std::vector<Vec3> points_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

}  // namespace gsm::mesh

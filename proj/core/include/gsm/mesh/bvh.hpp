#pragma once

#include <cstddef>
#include <vector>

#include "gsm/mesh/tri_mesh.hpp"

namespace gsm::mesh {

/// Axis-aligned bounding-volume hierarchy over the faces of a TriMesh.
///
/// Each node caches the first-order multipole (dipole) terms used by the hierarchical
/// winding-number evaluation: the area-weighted normal sum, the area-weighted centroid and
/// the radius of a ball around that centroid containing every descendant vertex.
///
/// The tree layout depends only on the geometry, not on the order of the face list, so
/// queries are invariant under face permutation. A Bvh owns a copy of the triangles and is
/// immutable after construction.
class Bvh {
 public:
  struct Node {
    Box3 box;
    int left = -1;
    int right = -1;
    int begin = 0;  // range into triangle order
    int end = 0;
    Vec3 dipole_center = Vec3::Zero();
    Vec3 area_normal = Vec3::Zero();
    double radius = 0.0;
    bool is_leaf() const noexcept { return left < 0; }
  };

  struct Triangle {
    Vec3 a, b, c;
    int face = -1;  // index into the source mesh
  };

  explicit Bvh(const TriMesh& mesh, int leaf_size = 4, double beta = 2.0);

  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  const std::vector<Triangle>& triangles() const noexcept { return triangles_; }
  double beta() const noexcept { return beta_; }
  std::size_t num_faces() const noexcept { return triangles_.size(); }

 private:
  int build(int begin, int end, int leaf_size);

  std::vector<Node> nodes_;
  std::vector<Triangle> triangles_;
  double beta_;
};

struct ClosestHit {
  double distance = 0.0;
  Vec3 point = Vec3::Zero();
  int face = -1;
};

/// Generalized winding number of the mesh at p (about 1 inside, 0 outside).
double winding_number(const Bvh& bvh, const Vec3& p);

/// Exact closest point on the surface.
ClosestHit closest_point(const Bvh& bvh, const Vec3& p);

inline double unsigned_distance(const Bvh& bvh, const Vec3& p) { return closest_point(bvh, p).distance; }

/// Distance to the surface, negative where the winding number exceeds 0.5.
double signed_distance(const TriMesh& mesh, const Bvh& bvh, const Vec3& p);

inline bool is_inside(const Bvh& bvh, const Vec3& p) { return winding_number(bvh, p) > 0.5; }

}  // namespace gsm::mesh

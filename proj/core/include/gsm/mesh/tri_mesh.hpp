#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "gsm/pose.hpp"

namespace gsm::mesh {

using Face = std::array<int, 3>;
using Box3 = Eigen::AlignedBox3d;

/// Closed, consistently oriented triangle mesh.
///
/// The constructor validates the mesh: face indices in range, every undirected edge used
/// by exactly two faces with opposite orientation, and no zero-area faces. Instances are
/// immutable afterwards.
class TriMesh {
 public:
  TriMesh(std::vector<Vec3> vertices, std::vector<Face> faces);

  const std::vector<Vec3>& vertices() const noexcept { return vertices_; }
  const std::vector<Face>& faces() const noexcept { return faces_; }
  std::size_t num_vertices() const noexcept { return vertices_.size(); }
  std::size_t num_faces() const noexcept { return faces_.size(); }

  const Vec3& corner(std::size_t face, int c) const { return vertices_[faces_[face][c]]; }
  /// Unit outward normal of a face.
  Vec3 face_normal(std::size_t face) const;
  double face_area(std::size_t face) const;
  double surface_area() const;
  /// Enclosed volume by the divergence theorem; positive for outward orientation.
  double volume() const;
  Box3 bounding_box() const;

 private:
  std::vector<Vec3> vertices_;
  std::vector<Face> faces_;
};

/// Uniformly rescales so the longest bounding-box edge is 1 and recenters the box at the origin.
/// Throws DegenerateInput for a zero-extent mesh.
TriMesh normalize_mesh(const TriMesh& mesh);

/// Applies an affine map x -> scale * x + offset to every vertex.
TriMesh transformed(const TriMesh& mesh, double scale, const Vec3& offset);

/// Closest point on triangle (a, b, c) to p.
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

/// Signed solid angle subtended by triangle (a, b, c) at p; positive when p is behind the face.
double triangle_solid_angle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

}  // namespace gsm::mesh

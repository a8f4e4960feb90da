#include "gsm/mesh/tri_mesh.hpp"

#include <cmath>
#include <map>
#include <sstream>
#include <utility>

#include "gsm/error.hpp"

namespace gsm::mesh {

TriMesh::TriMesh(std::vector<Vec3> vertices, std::vector<Face> faces)
    : vertices_(std::move(vertices)), faces_(std::move(faces)) {
  if (vertices_.empty() || faces_.empty()) throw DegenerateInput("mesh has no vertices or faces");
  const int nv = static_cast<int>(vertices_.size());
  for (std::size_t f = 0; f < faces_.size(); ++f) {
    for (int c : faces_[f]) {
      if (c < 0 || c >= nv) {
        std::ostringstream msg;
        msg << "face " << f << " references vertex " << c << " (vertex count " << nv << ")";
        throw ContractViolation(msg.str());
      }
    }
  }

  // Directed edge counts: a closed, consistently oriented surface uses each directed edge
  // exactly once and its reverse exactly once.
  std::map<std::pair<int, int>, int> directed;
  for (const Face& f : faces_) {
    for (int e = 0; e < 3; ++e) ++directed[{f[e], f[(e + 1) % 3]}];
  }
  for (const auto& [edge, count] : directed) {
    if (count != 1) {
      std::ostringstream msg;
      msg << "edge (" << edge.first << ", " << edge.second << ") is used " << count
          << " times in the same direction; mesh is not consistently oriented";
      throw DegenerateInput(msg.str());
    }
    if (!directed.count({edge.second, edge.first})) {
      std::ostringstream msg;
      msg << "boundary edge (" << edge.first << ", " << edge.second << "); mesh is not watertight";
      throw DegenerateInput(msg.str());
    }
  }

  const double extent = bounding_box().sizes().maxCoeff();
  const double min_area = 1e-12 * std::max(1.0, extent * extent);
  for (std::size_t f = 0; f < faces_.size(); ++f) {
    if (face_area(f) <= min_area) {
      std::ostringstream msg;
      msg << "face " << f << " is degenerate (area " << face_area(f) << ")";
      throw DegenerateInput(msg.str());
    }
  }
}

Vec3 TriMesh::face_normal(std::size_t face) const {
  return (corner(face, 1) - corner(face, 0)).cross(corner(face, 2) - corner(face, 0)).normalized();
}

double TriMesh::face_area(std::size_t face) const {
  return 0.5 * (corner(face, 1) - corner(face, 0)).cross(corner(face, 2) - corner(face, 0)).norm();
}

double TriMesh::surface_area() const {
  double total = 0.0;
  for (std::size_t f = 0; f < faces_.size(); ++f) total += face_area(f);
  return total;
}

double TriMesh::volume() const {
  double total = 0.0;
  for (std::size_t f = 0; f < faces_.size(); ++f) {
    total += corner(f, 0).dot(corner(f, 1).cross(corner(f, 2)));
  }
  return total / 6.0;
}

Box3 TriMesh::bounding_box() const {
  Box3 box;
  for (const Vec3& v : vertices_) box.extend(v);
  return box;
}

TriMesh transformed(const TriMesh& mesh, double scale, const Vec3& offset) {
  std::vector<Vec3> vertices;
  vertices.reserve(mesh.num_vertices());
  for (const Vec3& v : mesh.vertices()) vertices.push_back(scale * v + offset);
  return TriMesh(std::move(vertices), mesh.faces());
}

TriMesh normalize_mesh(const TriMesh& mesh) {
  const Box3 box = mesh.bounding_box();
  const double longest = box.sizes().maxCoeff();
  if (!(longest > 0.0) || !std::isfinite(longest)) {
    throw DegenerateInput("cannot normalize a mesh with zero bounding-box extent");
  }
  const Vec3 center = box.center();
  std::vector<Vec3> vertices;
  vertices.reserve(mesh.num_vertices());
  for (const Vec3& v : mesh.vertices()) vertices.push_back((v - center) / longest);
  return TriMesh(std::move(vertices), mesh.faces());
}

// Ericson, Real-Time Collision Detection, 5.1.5.
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return a;

  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return b;

  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return a + (d1 / (d1 - d3)) * ab;

  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return c;

  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return a + (d2 / (d2 - d6)) * ac;

  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
    return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);
  }

  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

// Van Oosterom and Strackee.
double triangle_solid_angle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 x = a - p, y = b - p, z = c - p;
  const double lx = x.norm(), ly = y.norm(), lz = z.norm();
  const double numerator = x.dot(y.cross(z));
  const double denominator = lx * ly * lz + x.dot(y) * lz + x.dot(z) * ly + y.dot(z) * lx;
  return 2.0 * std::atan2(numerator, denominator);
}

}  // namespace gsm::mesh

#include "gsm/mesh/bvh.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "gsm/error.hpp"

namespace gsm::mesh {
namespace {

Vec3 centroid(const Bvh::Triangle& t) { return (t.a + t.b + t.c) / 3.0; }

// Strict total order on triangles that depends only on geometry.
bool geometric_less(const Bvh::Triangle& x, const Bvh::Triangle& y, int axis) {
  const Vec3 cx = centroid(x), cy = centroid(y);
  for (int k = 0; k < 3; ++k) {
    const int a = (axis + k) % 3;
    if (cx[a] != cy[a]) return cx[a] < cy[a];
  }
  const std::array<const Vec3*, 3> px{&x.a, &x.b, &x.c}, py{&y.a, &y.b, &y.c};
  for (int v = 0; v < 3; ++v) {
    for (int a = 0; a < 3; ++a) {
      if ((*px[v])[a] != (*py[v])[a]) return (*px[v])[a] < (*py[v])[a];
    }
  }
  return false;
}

}  // namespace

Bvh::Bvh(const TriMesh& mesh, int leaf_size, double beta) : beta_(beta) {
  if (leaf_size < 1) throw ContractViolation("Bvh leaf size must be positive");
  triangles_.reserve(mesh.num_faces());
  for (std::size_t f = 0; f < mesh.num_faces(); ++f) {
    triangles_.push_back({mesh.corner(f, 0), mesh.corner(f, 1), mesh.corner(f, 2), static_cast<int>(f)});
  }
  // Canonical order first so every node accumulates its sums in the same sequence.
  std::sort(triangles_.begin(), triangles_.end(),
            [](const Triangle& x, const Triangle& y) { return geometric_less(x, y, 0); });
  nodes_.reserve(2 * triangles_.size() / leaf_size + 1);
  build(0, static_cast<int>(triangles_.size()), leaf_size);
}

int Bvh::build(int begin, int end, int leaf_size) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.emplace_back();

  Box3 box, centroid_box;
  Vec3 weighted_center = Vec3::Zero();
  Vec3 area_normal = Vec3::Zero();
  double total_area = 0.0;
  for (int i = begin; i < end; ++i) {
    const Triangle& t = triangles_[i];
    box.extend(t.a);
    box.extend(t.b);
    box.extend(t.c);
    centroid_box.extend(centroid(t));
    const Vec3 n = 0.5 * (t.b - t.a).cross(t.c - t.a);
    const double area = n.norm();
    area_normal += n;
    weighted_center += area * centroid(t);
    total_area += area;
  }
  weighted_center /= total_area;
  double radius = 0.0;
  for (int i = begin; i < end; ++i) {
    const Triangle& t = triangles_[i];
    radius = std::max({radius, (t.a - weighted_center).norm(), (t.b - weighted_center).norm(),
                       (t.c - weighted_center).norm()});
  }

  Node node;
  node.box = box;
  node.begin = begin;
  node.end = end;
  node.dipole_center = weighted_center;
  node.area_normal = area_normal;
  node.radius = radius;

  if (end - begin > leaf_size) {
    int axis = 0;
    centroid_box.sizes().maxCoeff(&axis);
    const int mid = begin + (end - begin) / 2;
    std::sort(triangles_.begin() + begin, triangles_.begin() + end,
              [axis](const Triangle& x, const Triangle& y) { return geometric_less(x, y, axis); });
    node.left = build(begin, mid, leaf_size);
    node.right = build(mid, end, leaf_size);
  }
  nodes_[id] = node;
  return id;
}

double winding_number(const Bvh& bvh, const Vec3& p) {
  const auto& nodes = bvh.nodes();
  const auto& tris = bvh.triangles();
  const double beta = bvh.beta();
  double total = 0.0;

  int stack[256];
  int top = 0;
  stack[top++] = 0;
  while (top > 0) {
    const Bvh::Node& node = nodes[stack[--top]];
    const Vec3 d = node.dipole_center - p;
    const double dist = d.norm();
    if (dist > beta * node.radius) {
      total += d.dot(node.area_normal) / (dist * dist * dist);
      continue;
    }
    if (node.is_leaf()) {
      for (int i = node.begin; i < node.end; ++i) {
        total += triangle_solid_angle(p, tris[i].a, tris[i].b, tris[i].c);
      }
      continue;
    }
    stack[top++] = node.right;
    stack[top++] = node.left;
  }
  return total / (4.0 * std::numbers::pi);
}

ClosestHit closest_point(const Bvh& bvh, const Vec3& p) {
  const auto& nodes = bvh.nodes();
  const auto& tris = bvh.triangles();
  ClosestHit best;
  double best_sq = std::numeric_limits<double>::infinity();

  struct Entry {
    int node;
    double sq;
  };
  Entry stack[256];
  int top = 0;
  stack[top++] = {0, nodes[0].box.squaredExteriorDistance(p)};
  while (top > 0) {
    const Entry e = stack[--top];
    if (e.sq > best_sq) continue;
    const Bvh::Node& node = nodes[e.node];
    if (node.is_leaf()) {
      for (int i = node.begin; i < node.end; ++i) {
        const Vec3 q = closest_point_on_triangle(p, tris[i].a, tris[i].b, tris[i].c);
        const double sq = (q - p).squaredNorm();
        if (sq < best_sq || (sq == best_sq && tris[i].face < best.face)) {
          best_sq = sq;
          best.point = q;
          best.face = tris[i].face;
        }
      }
      continue;
    }
    const double dl = nodes[node.left].box.squaredExteriorDistance(p);
    const double dr = nodes[node.right].box.squaredExteriorDistance(p);
    // Push the farther child first so the nearer one is visited next.
    if (dl <= dr) {
      stack[top++] = {node.right, dr};
      stack[top++] = {node.left, dl};
    } else {
      stack[top++] = {node.left, dl};
      stack[top++] = {node.right, dr};
    }
  }
  best.distance = std::sqrt(best_sq);
  return best;
}

double signed_distance(const TriMesh& mesh, const Bvh& bvh, const Vec3& p) {
  if (mesh.num_faces() != bvh.num_faces()) {
    throw ContractViolation("signed_distance: Bvh was built from a different mesh");
  }
  const double d = unsigned_distance(bvh, p);
  return winding_number(bvh, p) > 0.5 ? -d : d;
}

}  // namespace gsm::mesh

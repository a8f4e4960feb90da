#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "gsm/mesh/tri_mesh.hpp"

namespace gsm::mesh {

using Rng = std::mt19937_64;

struct SurfaceSample {
  Vec3 position;
  Vec3 normal;
  int face = -1;
};

/// Draws area-weighted uniform surface samples; keeps the face-area table between draws.
class SurfaceSampler {
 public:
  explicit SurfaceSampler(const TriMesh& mesh);
  SurfaceSample draw(Rng& rng) const;

 private:
  const TriMesh* mesh_;
  std::vector<double> cdf_;
};

/// Area-weighted uniform samples on the surface. Deterministic for a given generator state.
std::vector<SurfaceSample> sample_surface(const TriMesh& mesh, std::size_t n, Rng& rng);

/// Uniform point in a triangle (square-root barycentric parameterization).
Vec3 sample_triangle(const Vec3& a, const Vec3& b, const Vec3& c, Rng& rng);

}  // namespace gsm::mesh

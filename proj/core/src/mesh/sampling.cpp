#include "gsm/mesh/sampling.hpp"

#include <algorithm>
#include <cmath>

#include "gsm/error.hpp"

namespace gsm::mesh {

Vec3 sample_triangle(const Vec3& a, const Vec3& b, const Vec3& c, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double r1 = std::sqrt(unit(rng));
  const double r2 = unit(rng);
  return (1.0 - r1) * a + r1 * (1.0 - r2) * b + r1 * r2 * c;
}

SurfaceSampler::SurfaceSampler(const TriMesh& mesh) : mesh_(&mesh), cdf_(mesh.num_faces()) {
  double total = 0.0;
  for (std::size_t f = 0; f < mesh.num_faces(); ++f) {
    total += mesh.face_area(f);
    cdf_[f] = total;
  }
}

SurfaceSample SurfaceSampler::draw(Rng& rng) const {
  std::uniform_real_distribution<double> pick(0.0, cdf_.back());
  const double u = pick(rng);
  auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
  const auto face = std::min<std::size_t>(it - cdf_.begin(), cdf_.size() - 1);
  SurfaceSample s;
  s.position = sample_triangle(mesh_->corner(face, 0), mesh_->corner(face, 1), mesh_->corner(face, 2), rng);
  s.normal = mesh_->face_normal(face);
  s.face = static_cast<int>(face);
  return s;
}

std::vector<SurfaceSample> sample_surface(const TriMesh& mesh, std::size_t n, Rng& rng) {
  if (n == 0) throw ContractViolation("sample_surface: n must be at least 1");
  const SurfaceSampler sampler(mesh);
  std::vector<SurfaceSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(sampler.draw(rng));
  return out;
}

}  // namespace gsm::mesh

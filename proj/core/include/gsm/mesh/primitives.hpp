#pragma once

#include "gsm/mesh/tri_mesh.hpp"

namespace gsm::mesh {

/// Axis-aligned cube [lo, hi]^3, two triangles per side.
TriMesh make_cube(double lo = -0.5, double hi = 0.5);

/// Subdivided icosahedron projected onto a sphere.
TriMesh make_icosphere(int subdivisions = 3, double radius = 0.5);

/// Torus around the z axis.
TriMesh make_torus(double major_radius = 0.35, double minor_radius = 0.15, int major_segments = 48,
                   int minor_segments = 24);

}  // namespace gsm::mesh

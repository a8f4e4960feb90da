#pragma once

#include <filesystem>

#include "gsm/mesh/tri_mesh.hpp"

namespace gsm::mesh {

/// ASCII OFF ("OFF" header, counts line, vertex lines, face lines). Polygons with more than
/// three corners are fan-triangulated.
TriMesh read_off(const std::filesystem::path& path);
void write_off(const TriMesh& mesh, const std::filesystem::path& path);

/// Binary STL. Coincident vertices are welded by exact position.
TriMesh read_stl(const std::filesystem::path& path);
void write_stl(const TriMesh& mesh, const std::filesystem::path& path);

/// Dispatches on the file extension (.off or .stl).
TriMesh read_mesh(const std::filesystem::path& path);

}  // namespace gsm::mesh

#include "gsm/mesh/io.hpp"

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>

#include "gsm/error.hpp"

namespace gsm::mesh {
namespace {

// Reads the next line that is neither empty nor a comment.
bool next_content_line(std::istream& in, std::string& line) {
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") != std::string::npos) return true;
  }
  return false;
}

template <typename T>
T read_le(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw IoError("unexpected end of STL file");
  T value;
  std::memcpy(&value, bytes, sizeof(T));  // host is little-endian (checked in CMake)
  return value;
}

template <typename T>
void write_le(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

}  // namespace

TriMesh read_off(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!next_content_line(in, line)) throw IoError(path.string() + ": empty OFF file");
  std::istringstream header(line);
  std::string magic;
  header >> magic;
  if (magic != "OFF") throw IoError(path.string() + ": missing OFF header");

  // Counts may follow the magic on the same line.
  long nv = -1, nf = -1, ne = 0;
  if (!(header >> nv >> nf)) {
    if (!next_content_line(in, line)) throw IoError(path.string() + ": missing counts line");
    std::istringstream counts(line);
    if (!(counts >> nv >> nf)) throw IoError(path.string() + ": malformed counts line");
    counts >> ne;
  }
  if (nv <= 0 || nf <= 0) throw IoError(path.string() + ": non-positive vertex or face count");

  std::vector<Vec3> vertices;
  vertices.reserve(nv);
  for (long i = 0; i < nv; ++i) {
    if (!next_content_line(in, line)) throw IoError(path.string() + ": truncated vertex list");
    std::istringstream v(line);
    Vec3 p;
    if (!(v >> p.x() >> p.y() >> p.z())) throw IoError(path.string() + ": malformed vertex line");
    vertices.push_back(p);
  }
  std::vector<Face> faces;
  faces.reserve(nf);
  for (long i = 0; i < nf; ++i) {
    if (!next_content_line(in, line)) throw IoError(path.string() + ": truncated face list");
    std::istringstream f(line);
    int count = 0;
    f >> count;
    std::vector<int> idx(std::max(count, 0));
    for (int& c : idx) {
      if (!(f >> c)) throw IoError(path.string() + ": malformed face line");
    }
    if (count < 3) throw IoError(path.string() + ": face with fewer than three corners");
    for (int c = 1; c + 1 < count; ++c) faces.push_back({idx[0], idx[c], idx[c + 1]});
  }
  return TriMesh(std::move(vertices), std::move(faces));
}

void write_off(const TriMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "OFF\n" << mesh.num_vertices() << ' ' << mesh.num_faces() << " 0\n";
  out << std::setprecision(17);
  for (const Vec3& v : mesh.vertices()) out << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const Face& f : mesh.faces()) out << "3 " << f[0] << ' ' << f[1] << ' ' << f[2] << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

TriMesh read_stl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char header[80];
  if (!in.read(header, 80)) throw IoError(path.string() + ": truncated STL header");
  const auto count = read_le<std::uint32_t>(in);
  const auto expected = 84 + 50ull * count;
  if (std::filesystem::file_size(path) != expected) {
    throw IoError(path.string() + ": size does not match binary STL triangle count");
  }

  std::map<std::array<float, 3>, int> weld;
  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  faces.reserve(count);
  for (std::uint32_t t = 0; t < count; ++t) {
    for (int k = 0; k < 3; ++k) read_le<float>(in);  // facet normal, recomputed from winding
    Face face{};
    for (int c = 0; c < 3; ++c) {
      std::array<float, 3> key{read_le<float>(in), read_le<float>(in), read_le<float>(in)};
      auto [it, inserted] = weld.try_emplace(key, static_cast<int>(vertices.size()));
      if (inserted) vertices.emplace_back(key[0], key[1], key[2]);
      face[c] = it->second;
    }
    read_le<std::uint16_t>(in);
    faces.push_back(face);
  }
  return TriMesh(std::move(vertices), std::move(faces));
}

void write_stl(const TriMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  char header[80] = {};
  std::strncpy(header, "gsm binary stl", sizeof(header));
  out.write(header, 80);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(mesh.num_faces()));
  for (std::size_t f = 0; f < mesh.num_faces(); ++f) {
    const Vec3 n = mesh.face_normal(f);
    for (int k = 0; k < 3; ++k) write_le<float>(out, static_cast<float>(n[k]));
    for (int c = 0; c < 3; ++c) {
      for (int k = 0; k < 3; ++k) write_le<float>(out, static_cast<float>(mesh.corner(f, c)[k]));
    }
    write_le<std::uint16_t>(out, 0);
  }
  if (!out) throw IoError("write failed for " + path.string());
}

TriMesh read_mesh(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".off") return read_off(path);
  if (ext == ".stl") return read_stl(path);
  throw IoError("unsupported mesh format: " + path.string());
}

}  // namespace gsm::mesh

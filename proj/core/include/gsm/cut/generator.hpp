#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gsm/cut/cut_spec.hpp"
#include "gsm/mesh/bvh.hpp"
#include "gsm/mesh/tri_mesh.hpp"

namespace gsm::cut {

enum class ShapeType { Solid, Shell };

std::string_view to_string(ShapeType type);
ShapeType parse_shape_type(std::string_view name);

struct GeneratorOptions {
  std::size_t points_per_part = 1024;
  std::size_t dense_points = 50000;
  std::size_t sdf_samples = 40000;
  std::size_t volume_samples = 20000;
  int max_attempts = 64;
  double min_ratio = 0.25;
  double shell_thickness = 0.05;
  double sdf_sigma_near = 0.005;
  double sdf_sigma_far = 0.05;
};

/// Implicit description of one part: mesh interior (or the inner shell band) intersected
/// with one side of the heightfield. No part mesh is ever constructed.
struct PartPredicate {
  const mesh::TriMesh* mesh = nullptr;
  const mesh::Bvh* bvh = nullptr;
  CutSpec spec;
  Side side = Side::A;
  ShapeType shape = ShapeType::Solid;
  double thickness = 0.05;

  /// Strict membership (interior of the part region).
  bool contains(const Vec3& p) const;
  /// Membership of the closed region within tolerance `tol` (for points on the boundary).
  bool contains_closure(const Vec3& p, double tol) const;
};

/// Boundary samples of one part. `points`/`normals` are the public cloud; the dense set
/// supports signed-distance estimation.
struct PartSampleSet {
  Side side = Side::A;
  std::vector<Vec3> points;
  std::vector<Vec3> normals;
  std::vector<Vec3> dense_points;
  std::vector<Vec3> dense_normals;
};

/// Near-surface (point, signed distance) records; xyz in the same frame as the part cloud.
struct SdfSampleSet {
  std::vector<Eigen::Vector4d> records;
};

struct PairMetadata {
  std::string category = "unknown";
  std::string source_mesh_id;
  CutSpec spec;
  ShapeType shape = ShapeType::Solid;
  std::uint64_t seed = 0;
  double volume_ratio = 0.0;  // part A share of the (solid or shell) volume
  int attempts = 0;
};

/// One ground-truthed mating instance.
///
/// Part clouds are zero-centered; `pose_a`/`pose_b` map them back into the assembled
/// object frame. `assembled_a`/`assembled_b` keep the pre-centering clouds from the
/// generator and are not persisted.
struct ShapePairRecord {
  PartSampleSet part_a;
  PartSampleSet part_b;
  SdfSampleSet sdf_a;
  SdfSampleSet sdf_b;
  Pose pose_a;
  Pose pose_b;
  PairMetadata meta;
  std::vector<Vec3> assembled_a;
  std::vector<Vec3> assembled_b;
};

struct VolumeRatio {
  double side_a = 0.0;
  double side_b = 0.0;
  double standard_error = 0.0;
  double region_volume = 0.0;  // Monte Carlo volume of the solid (or shell) region
  std::size_t region_hits = 0;
  std::size_t total_samples = 0;
};

/// Monte Carlo estimate of the fraction of the region's volume on each side of the cut.
/// Both fractions come from the same sample set. Throws DegenerateInput if no sample lands
/// in the region.
VolumeRatio volume_ratio(const mesh::TriMesh& mesh, const mesh::Bvh& bvh, const CutSpec& spec,
                         std::size_t n_mc, Rng& rng, ShapeType shape = ShapeType::Solid,
                         double thickness = 0.05);

ShapePairRecord generate_solid_pair(const mesh::TriMesh& mesh, const mesh::Bvh& bvh, CutSpec spec,
                                    Rng& rng, const GeneratorOptions& options = {});

ShapePairRecord generate_shell_pair(const mesh::TriMesh& mesh, const mesh::Bvh& bvh, CutSpec spec,
                                    Rng& rng, const GeneratorOptions& options = {});

ShapePairRecord generate_pair(const mesh::TriMesh& mesh, const mesh::Bvh& bvh, CutSpec spec,
                              ShapeType shape, Rng& rng, const GeneratorOptions& options = {});

/// Signed-distance supervision for one part: dense boundary points perturbed by Gaussian
/// noise at two scales (half each), sign from the predicate, magnitude from the nearest
/// dense boundary point. Points and distances are in the predicate's frame.
SdfSampleSet sdf_samples_for_part(const PartSampleSet& part, const PartPredicate& predicate,
                                  std::size_t n, Rng& rng, double sigma_near = 0.005,
                                  double sigma_far = 0.05);

/// Uniform random rotation (normalized 4D Gaussian quaternion, w >= 0).
Eigen::Vector4d random_unit_quaternion(Rng& rng);

/// Two independent uniform rotations with zero translation.
std::pair<Pose, Pose> random_pose_pair(Rng& rng);

/// Moves a point inward from the surface along -normal until it reaches the given
/// (negative) signed-distance level, by sphere tracing. Returns false if the ray leaves
/// the solid first.
bool trace_to_level(const mesh::TriMesh& mesh, const mesh::Bvh& bvh, const Vec3& start,
                    const Vec3& inward, double level, Vec3& out);

}  // namespace gsm::cut

#include "gsm/cut/generator.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>

#include "gsm/error.hpp"
#include "gsm/mesh/point_index.hpp"
#include "gsm/mesh/sampling.hpp"

namespace gsm::cut {
namespace {

constexpr double kMembershipTol = 1e-6;

bool in_region(const mesh::TriMesh& mesh, const mesh::Bvh& bvh, ShapeType shape, double thickness,
               const Vec3& p) {
  if (shape == ShapeType::Solid) return mesh::is_inside(bvh, p);
  const double s = mesh::signed_distance(mesh, bvh, p);
  return s >= -thickness && s <= 0.0;
}

// One piece of the cut surface, parameterized over an axis-aligned rectangle. `draw`
// proposes a point with the part-A outward normal and the local area element; the
// proposal is accepted with probability jacobian / max_jacobian.
struct Patch {
  double rect_area = 0.0;
  double max_jacobian = 1.0;
  std::function<void(Rng&, Vec3&, Vec3&, double&)> draw;
};

std::vector<Patch> cut_patches(const CutSpec& spec, const mesh::Box3& box) {
  const double x0 = box.min().x(), x1 = box.max().x();
  const double y0 = box.min().y(), y1 = box.max().y();
  const double z0 = box.min().z(), z1 = box.max().z();
  const double domain = (x1 - x0) * (y1 - y0);
  std::vector<Patch> patches;

  auto graph_patch = [&](double max_jacobian) {
    Patch p;
    p.rect_area = domain;
    p.max_jacobian = max_jacobian;
    p.draw = [spec, x0, x1, y0, y1](Rng& rng, Vec3& point, Vec3& normal_a, double& jacobian) {
      std::uniform_real_distribution<double> ux(x0, x1), uy(y0, y1);
      const double x = ux(rng), y = uy(rng);
      const Eigen::Vector2d s = spec.slope(x, y);
      point = Vec3(x, y, spec.height(x, y));
      normal_a = Vec3(s.x(), s.y(), -1.0);
      jacobian = normal_a.norm();
      normal_a /= jacobian;
    };
    return p;
  };

  switch (spec.family) {
    case CutFamily::Planar: {
      const double a = spec.coefficient("a"), b = spec.coefficient("b");
      patches.push_back(graph_patch(std::sqrt(1 + a * a + b * b)));
      break;
    }
    case CutFamily::Sine: {
      const double a = spec.coefficient("a"), b = spec.coefficient("b"), h = spec.coefficient("h");
      patches.push_back(graph_patch(std::sqrt(1 + h * h * (a * a + b * b))));
      break;
    }
    case CutFamily::Parabolic: {
      const double a = spec.coefficient("a"), b = spec.coefficient("b");
      const double mx = std::max(std::abs(x0), std::abs(x1)), my = std::max(std::abs(y0), std::abs(y1));
      patches.push_back(graph_patch(std::sqrt(1 + 4 * a * a * mx * mx + 4 * b * b * my * my)));
      break;
    }
    case CutFamily::Square:
    case CutFamily::Pulse: {
      patches.push_back(graph_patch(1.0));
      const double t = spec.coefficient("t"), h = spec.coefficient("h");
      const double zlo = std::max(0.0, z0), zhi = std::min(h, z1);
      if (zhi <= zlo) break;
      // Vertical walls between the two plateaus. Part A lies on the low-plateau side.
      auto wall = [&](int axis, double at, double lo, double hi, double sign_a) {
        if (hi <= lo) return;
        Patch p;
        p.rect_area = (hi - lo) * (zhi - zlo);
        p.draw = [axis, at, lo, hi, zlo, zhi, sign_a](Rng& rng, Vec3& point, Vec3& normal_a, double& jac) {
          std::uniform_real_distribution<double> us(lo, hi), uz(zlo, zhi);
          const double s = us(rng), z = uz(rng);
          point = axis == 0 ? Vec3(at, s, z) : Vec3(s, at, z);
          normal_a = Vec3::Zero();
          normal_a[axis] = sign_a;
          jac = 1.0;
        };
        patches.push_back(std::move(p));
      };
      if (spec.family == CutFamily::Square) {
        wall(0, t, y0, y1, -1.0);
        wall(0, -t, y0, y1, 1.0);
      } else {
        const double ylo = std::max(-t, y0), yhi = std::min(t, y1);
        const double xlo = std::max(-t, x0), xhi = std::min(t, x1);
        wall(0, t, ylo, yhi, -1.0);
        wall(0, -t, ylo, yhi, 1.0);
        wall(1, t, xlo, xhi, -1.0);
        wall(1, -t, xlo, xhi, 1.0);
      }
      break;
    }
  }
  return patches;
}

// A sampling stratum of a part's boundary.
struct Stratum {
  double area = 0.0;
  // Attempts one draw; returns true and fills point/normal if the candidate is accepted.
  std::function<bool(Rng&, Vec3&, Vec3&)> attempt;
};

// Draws points from the cut surface restricted to the region and one side.
Stratum interface_stratum(const mesh::TriMesh& mesh, const mesh::Bvh& bvh, const CutSpec& spec, Side side,
                          ShapeType shape, double thickness, std::size_t pilot, Rng& rng) {
  mesh::Box3 box = mesh.bounding_box();
  box.extend(box.max() + Vec3::Constant(1e-6));
  box.extend(box.min() - Vec3::Constant(1e-6));
  auto patches = std::make_shared<std::vector<Patch>>(cut_patches(spec, box));
  auto weights = std::make_shared<std::vector<double>>();
  double total_weight = 0.0;
  for (const Patch& p : *patches) {
    weights->push_back(p.rect_area * p.max_jacobian);
    total_weight += weights->back();
  }
  const double sign = side == Side::A ? 1.0 : -1.0;
  const mesh::TriMesh* mp = &mesh;
  const mesh::Bvh* bp = &bvh;

  Stratum s;
  s.attempt = [patches, weights, total_weight, sign, mp, bp, shape, thickness](Rng& rng, Vec3& point,
                                                                               Vec3& normal) {
    std::uniform_real_distribution<double> pick(0.0, total_weight), unit(0.0, 1.0);
    double u = pick(rng);
    std::size_t i = 0;
    while (i + 1 < weights->size() && u >= (*weights)[i]) u -= (*weights)[i++];
    const Patch& patch = (*patches)[i];
    double jac = 1.0;
    patch.draw(rng, point, normal, jac);
    if (unit(rng) * patch.max_jacobian > jac) return false;
    if (!in_region(*mp, *bp, shape, thickness, point)) return false;
    normal *= sign;
    return true;
  };

  std::size_t kept = 0;
  Vec3 p, n;
  for (std::size_t i = 0; i < pilot; ++i) kept += s.attempt(rng, p, n) ? 1 : 0;
  s.area = total_weight * static_cast<double>(kept) / static_cast<double>(pilot);
  return s;
}

// Original outer surface restricted to one side.
Stratum outer_stratum(const mesh::TriMesh& mesh, const CutSpec& spec, Side side, std::size_t pilot, Rng& rng) {
  auto sampler = std::make_shared<mesh::SurfaceSampler>(mesh);
  Stratum s;
  s.attempt = [sampler, spec, side](Rng& rng, Vec3& point, Vec3& normal) {
    const auto sample = sampler->draw(rng);
    if (heightfield_side(spec, sample.position).side != side) return false;
    point = sample.position;
    normal = sample.normal;
    return true;
  };
  std::size_t kept = 0;
  for (const auto& sample : mesh::sample_surface(mesh, pilot, rng)) {
    kept += heightfield_side(spec, sample.position).side == side ? 1 : 0;
  }
  s.area = mesh.surface_area() * static_cast<double>(kept) / static_cast<double>(pilot);
  return s;
}

// Inner offset surface of the shell restricted to one side. The total offset area is
// recovered from the shell volume V and outer area A_out by V ~ thickness * (A_out + A_in) / 2.
Stratum inner_stratum(const mesh::TriMesh& mesh, const mesh::Bvh& bvh, const CutSpec& spec, Side side,
                      double thickness, double shell_volume, std::size_t pilot, Rng& rng) {
  const mesh::TriMesh* mp = &mesh;
  const mesh::Bvh* bp = &bvh;
  auto sampler = std::make_shared<mesh::SurfaceSampler>(mesh);
  Stratum s;
  s.attempt = [mp, bp, sampler, spec, side, thickness](Rng& rng, Vec3& point, Vec3& normal) {
    const auto sample = sampler->draw(rng);
    Vec3 inner;
    if (!trace_to_level(*mp, *bp, sample.position, -sample.normal, -thickness, inner)) return false;
    if (heightfield_side(spec, inner).side != side) return false;
    const auto hit = mesh::closest_point(*bp, inner);
    point = inner;
    normal = (inner - hit.point).normalized();
    return true;
  };

  std::size_t traced = 0, on_side = 0;
  for (const auto& sample : mesh::sample_surface(mesh, pilot, rng)) {
    Vec3 inner;
    if (!trace_to_level(mesh, bvh, sample.position, -sample.normal, -thickness, inner)) continue;
    ++traced;
    on_side += heightfield_side(spec, inner).side == side ? 1 : 0;
  }
  if (traced == 0) {
    throw ThinShell("no surface point reaches the inner offset level " + std::to_string(-thickness));
  }
  const double inner_total = std::max(0.0, 2.0 * shell_volume / thickness - mesh.surface_area());
  s.area = inner_total * static_cast<double>(on_side) / static_cast<double>(traced);
  return s;
}

std::vector<std::size_t> allocate(const std::vector<Stratum>& strata, std::size_t n) {
  double total = 0.0;
  for (const Stratum& s : strata) total += s.area;
  if (!(total > 0.0)) throw DegenerateInput("part has zero boundary area");
  std::vector<std::size_t> counts(strata.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < strata.size(); ++i) {
    const double exact = n * strata[i].area / total;
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[i];
    remainders.push_back({exact - counts[i], i});
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++counts[remainders[k % remainders.size()].second];
  return counts;
}

void draw_strata(const std::vector<Stratum>& strata, std::size_t n, Rng& rng, std::vector<Vec3>& points,
                 std::vector<Vec3>& normals) {
  const auto counts = allocate(strata, n);
  points.clear();
  normals.clear();
  points.reserve(n);
  normals.reserve(n);
  for (std::size_t i = 0; i < strata.size(); ++i) {
    const std::size_t cap = 2000 * counts[i] + 100000;
    std::size_t attempts = 0, got = 0;
    Vec3 p, nrm;
    while (got < counts[i]) {
      if (++attempts > cap) throw DegenerateInput("stratum sampling did not converge");
      if (strata[i].attempt(rng, p, nrm)) {
        points.push_back(p);
        normals.push_back(nrm);
        ++got;
      }
    }
  }
  // Interleave strata so any prefix of the cloud is a uniform subsample.
  std::vector<std::size_t> perm(points.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<Vec3> p2(points.size()), n2(points.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    p2[i] = points[perm[i]];
    n2[i] = normals[perm[i]];
  }
  points = std::move(p2);
  normals = std::move(n2);
}

Vec3 centroid(const std::vector<Vec3>& pts) {
  Vec3 c = Vec3::Zero();
  for (const Vec3& p : pts) c += p;
  return c / static_cast<double>(pts.size());
}

ShapePairRecord generate(const mesh::TriMesh& mesh, const mesh::Bvh& bvh, CutSpec spec, ShapeType shape,
                         Rng& rng, const GeneratorOptions& opt) {
  if (opt.points_per_part == 0 || opt.dense_points == 0) throw ContractViolation("sample counts must be positive");
  if (opt.volume_samples < 10000) throw ContractViolation("volume_ratio needs at least 10000 samples");

  VolumeRatio ratio;
  int attempt = 0;
  for (;;) {
    ++attempt;
    ratio = volume_ratio(mesh, bvh, spec, opt.volume_samples, rng, shape, opt.shell_thickness);
    if (ratio.side_a >= opt.min_ratio && ratio.side_a <= 1.0 - opt.min_ratio) break;
    if (attempt >= opt.max_attempts) {
      std::ostringstream msg;
      msg << "no valid " << to_string(spec.family) << " cut after " << attempt << " attempts (last ratio "
          << ratio.side_a << ")";
      throw NoValidCut(msg.str(), ratio.side_a);
    }
    spec = sample_cut_spec(spec.family, rng);
  }

  const std::size_t pilot = std::max<std::size_t>(opt.dense_points / 2, 4000);
  ShapePairRecord record;
  for (Side side : {Side::A, Side::B}) {
    std::vector<Stratum> strata;
    strata.push_back(outer_stratum(mesh, spec, side, pilot, rng));
    if (shape == ShapeType::Shell) {
      strata.push_back(inner_stratum(mesh, bvh, spec, side, opt.shell_thickness, ratio.region_volume,
                                     std::max<std::size_t>(pilot / 8, 2000), rng));
    }
    strata.push_back(interface_stratum(mesh, bvh, spec, side, shape, opt.shell_thickness, pilot, rng));

    PartSampleSet part;
    part.side = side;
    draw_strata(strata, opt.points_per_part, rng, part.points, part.normals);
    draw_strata(strata, opt.dense_points, rng, part.dense_points, part.dense_normals);

    PartPredicate predicate{&mesh, &bvh, spec, side, shape, opt.shell_thickness};
    SdfSampleSet sdf = sdf_samples_for_part(part, predicate, opt.sdf_samples, rng, opt.sdf_sigma_near,
                                            opt.sdf_sigma_far);

    // Zero-center; the ground-truth pose maps the centered cloud back.
    const Vec3 c = centroid(part.points);
    std::vector<Vec3> assembled = part.points;
    for (Vec3& p : part.points) p -= c;
    for (Vec3& p : part.dense_points) p -= c;
    for (auto& r : sdf.records) r.head<3>() -= c;
    const Pose pose{Eigen::Vector4d(1, 0, 0, 0), c};

    if (side == Side::A) {
      record.part_a = std::move(part);
      record.sdf_a = std::move(sdf);
      record.pose_a = pose;
      record.assembled_a = std::move(assembled);
    } else {
      record.part_b = std::move(part);
      record.sdf_b = std::move(sdf);
      record.pose_b = pose;
      record.assembled_b = std::move(assembled);
    }
  }
  record.meta.spec = spec;
  record.meta.shape = shape;
  record.meta.volume_ratio = ratio.side_a;
  record.meta.attempts = attempt;
  return record;
}

}  // namespace

std::string_view to_string(ShapeType type) { return type == ShapeType::Solid ? "solid" : "shell"; }

ShapeType parse_shape_type(std::string_view name) {
  if (name == "solid") return ShapeType::Solid;
  if (name == "shell") return ShapeType::Shell;
  throw ContractViolation("unknown shape type '" + std::string(name) + "'");
}

bool PartPredicate::contains(const Vec3& p) const {
  return heightfield_side(spec, p).side == side && in_region(*mesh, *bvh, shape, thickness, p);
}

bool PartPredicate::contains_closure(const Vec3& p, double tol) const {
  if (!on_side_closure(spec, p, side, tol)) return false;
  if (shape == ShapeType::Solid) {
    return mesh::is_inside(*bvh, p) || mesh::unsigned_distance(*bvh, p) <= tol;
  }
  const double s = mesh::signed_distance(*mesh, *bvh, p);
  return s >= -thickness - tol && s <= tol;
}

VolumeRatio volume_ratio(const mesh::TriMesh& mesh, const mesh::Bvh& bvh, const CutSpec& spec, std::size_t n_mc,
                         Rng& rng, ShapeType shape, double thickness) {
  if (n_mc == 0) throw ContractViolation("volume_ratio: n_mc must be positive");
  const mesh::Box3 box = mesh.bounding_box();
  std::uniform_real_distribution<double> ux(box.min().x(), box.max().x());
  std::uniform_real_distribution<double> uy(box.min().y(), box.max().y());
  std::uniform_real_distribution<double> uz(box.min().z(), box.max().z());
  std::size_t hits = 0, hits_a = 0;
  for (std::size_t i = 0; i < n_mc; ++i) {
    const double x = ux(rng), y = uy(rng), z = uz(rng);
    const Vec3 p(x, y, z);
    if (!in_region(mesh, bvh, shape, thickness, p)) continue;
    ++hits;
    if (heightfield_side(spec, p).side == Side::A) ++hits_a;
  }
  if (hits == 0) throw DegenerateInput("volume_ratio: no Monte Carlo sample fell inside the region");
  VolumeRatio r;
  r.side_a = static_cast<double>(hits_a) / static_cast<double>(hits);
  r.side_b = static_cast<double>(hits - hits_a) / static_cast<double>(hits);
  r.standard_error = std::sqrt(std::max(r.side_a * r.side_b, 0.25 / hits) / static_cast<double>(hits));
  r.region_volume = box.volume() * static_cast<double>(hits) / static_cast<double>(n_mc);
  r.region_hits = hits;
  r.total_samples = n_mc;
  return r;
}

ShapePairRecord generate_solid_pair(const mesh::TriMesh& mesh, const mesh::Bvh& bvh, CutSpec spec, Rng& rng,
                                    const GeneratorOptions& options) {
  return generate(mesh, bvh, std::move(spec), ShapeType::Solid, rng, options);
}

ShapePairRecord generate_shell_pair(const mesh::TriMesh& mesh, const mesh::Bvh& bvh, CutSpec spec, Rng& rng,
                                    const GeneratorOptions& options) {
  return generate(mesh, bvh, std::move(spec), ShapeType::Shell, rng, options);
}

ShapePairRecord generate_pair(const mesh::TriMesh& mesh, const mesh::Bvh& bvh, CutSpec spec, ShapeType shape,
                              Rng& rng, const GeneratorOptions& options) {
  return generate(mesh, bvh, std::move(spec), shape, rng, options);
}

SdfSampleSet sdf_samples_for_part(const PartSampleSet& part, const PartPredicate& predicate, std::size_t n,
                                  Rng& rng, double sigma_near, double sigma_far) {
  if (part.dense_points.empty()) throw ContractViolation("sdf_samples_for_part: dense boundary set is empty");
  const mesh::PointIndex index(part.dense_points);
  std::uniform_int_distribution<std::size_t> pick(0, part.dense_points.size() - 1);
  std::normal_distribution<double> gauss(0.0, 1.0);
  SdfSampleSet out;
  out.records.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double sigma = i < n / 2 ? sigma_near : sigma_far;
    const Vec3 base = part.dense_points[pick(rng)];
    const double gx = gauss(rng), gy = gauss(rng), gz = gauss(rng);
    const Vec3 p = base + sigma * Vec3(gx, gy, gz);
    const double magnitude = std::sqrt(index.nearest(p).squared_distance);
    const double sd = predicate.contains(p) ? -magnitude : magnitude;
    out.records.emplace_back(p.x(), p.y(), p.z(), sd);
  }
  return out;
}

Eigen::Vector4d random_unit_quaternion(Rng& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::Vector4d q;
  do {
    for (int i = 0; i < 4; ++i) q[i] = gauss(rng);
  } while (q.norm() < 1e-12);
  q.normalize();
  if (q[0] < 0) q = -q;
  return q;
}

std::pair<Pose, Pose> random_pose_pair(Rng& rng) {
  Pose a{random_unit_quaternion(rng), Vec3::Zero()};
  Pose b{random_unit_quaternion(rng), Vec3::Zero()};
  return {a, b};
}

bool trace_to_level(const mesh::TriMesh& mesh, const mesh::Bvh& bvh, const Vec3& start, const Vec3& inward,
                    double level, Vec3& out) {
  const Vec3 dir = inward.normalized();
  double t = 0.0;
  for (int iter = 0; iter < 500; ++iter) {
    const Vec3 x = start + t * dir;
    const double s = iter == 0 ? 0.0 : mesh::signed_distance(mesh, bvh, x);
    if (iter > 0 && s > 0.0) return false;  // left the solid without reaching the level
    const double step = s - level;
    if (step < 1e-10) {
      out = x;
      return true;
    }
    t += step;
    if (t > 4.0) return false;
  }
  return false;
}

}  // namespace gsm::cut

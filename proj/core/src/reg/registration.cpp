#include "gsm/reg/registration.hpp"

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "gsm/error.hpp"
#include "gsm/mesh/point_index.hpp"

namespace gsm::reg {
namespace {

constexpr double kIrlsEpsilon = 1e-6;

using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

void require_nonempty(const std::vector<Vec3>& src, const std::vector<Vec3>& dst) {
  if (src.empty() || dst.empty()) throw ContractViolation("registration inputs must be non-empty");
}

// Linearized point-to-plane step: small rotation w and translation v minimizing
// sum w_i ((q_i + w x q_i + v - d_i) . n_i)^2.
RigidTransform plane_step(const std::vector<Vec3>& q, const std::vector<Vec3>& d, const std::vector<Vec3>& n,
                          const std::vector<double>& w) {
  Mat6 ata = Mat6::Zero();
  Vec6 atb = Vec6::Zero();
  for (std::size_t i = 0; i < q.size(); ++i) {
    Vec6 row;
    row.head<3>() = q[i].cross(n[i]);
    row.tail<3>() = n[i];
    const double r = (q[i] - d[i]).dot(n[i]);
    ata += w[i] * row * row.transpose();
    atb -= w[i] * r * row;
  }
  const Eigen::LDLT<Mat6> ldlt(ata);
  Vec6 x = ldlt.solve(atb);
  if (!x.allFinite() || ldlt.info() != Eigen::Success) {
    // Rank-deficient normal equations (for example a planar target): least-norm solution.
    x = ata.completeOrthogonalDecomposition().solve(atb);
  }
  RigidTransform step;
  const Vec3 omega = x.head<3>();
  const double angle = omega.norm();
  step.rotation = angle > 0 ? Eigen::AngleAxisd(angle, omega / angle).toRotationMatrix() : Mat3::Identity();
  step.translation = x.tail<3>();
  return step;
}

// Shared loop for plain and reweighted ICP. `p` = 2 gives unit weights.
IcpResult run_icp(const std::vector<Vec3>& src, const std::vector<Vec3>& dst, double p,
                  const IcpOptions& options, const std::vector<Vec3>& dst_normals) {
  require_nonempty(src, dst);
  if (options.variant == IcpVariant::Plane && dst_normals.size() != dst.size()) {
    throw ContractViolation("point-to-plane ICP needs one normal per target point");
  }
  if (options.max_iters < 1) throw ContractViolation("max_iters must be positive");
  const mesh::PointIndex index(dst);
  const bool robust = p != 2.0;

  IcpResult result;
  std::vector<Vec3> q(src.size()), d(src.size()), n(src.size());
  std::vector<double> w(src.size(), 1.0);
  for (int it = 0; it < options.max_iters; ++it) {
    double objective = 0.0;
    for (std::size_t i = 0; i < src.size(); ++i) {
      q[i] = result.transform.apply(src[i]);
      const auto hit = index.nearest(q[i]);
      d[i] = dst[hit.index];
      double r = 0.0;
      if (options.variant == IcpVariant::Plane) {
        n[i] = dst_normals[hit.index];
        r = std::abs((q[i] - d[i]).dot(n[i]));
      } else {
        r = std::sqrt(hit.squared_distance);
      }
      if (robust) {
        w[i] = irls_weight(r, p);
        objective += std::pow(r, p);
      } else {
        objective += r * r;
      }
    }
    result.objective.push_back(objective / static_cast<double>(src.size()));

    RigidTransform next;
    if (options.variant == IcpVariant::Point) {
      next = kabsch(src, d, w);
    } else {
      next = plane_step(q, d, n, w) * result.transform;
    }
    const double delta = (next.rotation - result.transform.rotation).norm() +
                         (next.translation - result.transform.translation).norm();
    result.transform = next;
    result.iterations = it + 1;
    if (delta < options.tol) {
      result.converged = true;
      break;
    }
  }
  return result;
}

}  // namespace

RigidTransform RigidTransform::inverse() const {
  return {rotation.transpose(), -(rotation.transpose() * translation)};
}

RigidTransform RigidTransform::operator*(const RigidTransform& other) const {
  return {rotation * other.rotation, rotation * other.translation + translation};
}

RigidTransform kabsch(const std::vector<Vec3>& src, const std::vector<Vec3>& dst, const std::vector<double>& weights) {
  if (src.size() != dst.size()) throw ContractViolation("kabsch needs equally sized point sets");
  if (!weights.empty() && weights.size() != src.size()) throw ContractViolation("kabsch weight count mismatch");
  if (src.size() < 3) throw ContractViolation("kabsch needs at least 3 points");

  double total = 0.0;
  Vec3 cs = Vec3::Zero(), cd = Vec3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const double wi = weights.empty() ? 1.0 : weights[i];
    if (!(wi >= 0.0) || !std::isfinite(wi)) throw ContractViolation("kabsch weights must be finite and non-negative");
    total += wi;
    cs += wi * src[i];
    cd += wi * dst[i];
  }
  if (!(total > 0.0)) throw DegenerateInput("kabsch weights sum to zero");
  cs /= total;
  cd /= total;

  Mat3 h = Mat3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const double wi = weights.empty() ? 1.0 : weights[i];
    h += wi * (src[i] - cs) * (dst[i] - cd).transpose();
  }
  const Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sigma = svd.singularValues();
  if (!(sigma[0] > 0.0) || sigma[1] <= 1e-12 * sigma[0]) {
    throw DegenerateInput("kabsch cross-covariance is rank deficient (collinear points)");
  }
  const Mat3 u = svd.matrixU(), v = svd.matrixV();
  Mat3 fix = Mat3::Identity();
  fix(2, 2) = (v * u.transpose()).determinant() < 0 ? -1.0 : 1.0;
  RigidTransform t;
  t.rotation = v * fix * u.transpose();
  t.translation = cd - t.rotation * cs;
  return t;
}

std::string_view to_string(IcpVariant variant) { return variant == IcpVariant::Plane ? "plane" : "point"; }

IcpVariant parse_icp_variant(std::string_view name) {
  if (name == "point") return IcpVariant::Point;
  if (name == "plane") return IcpVariant::Plane;
  throw ContractViolation("unknown ICP variant '" + std::string(name) + "'");
}

double irls_weight(double residual, double p) { return std::pow(std::max(residual, kIrlsEpsilon), p - 2.0); }

IcpResult icp(const std::vector<Vec3>& src, const std::vector<Vec3>& dst, const IcpOptions& options,
              const std::vector<Vec3>& dst_normals) {
  return run_icp(src, dst, 2.0, options, dst_normals);
}

IcpResult sparse_icp(const std::vector<Vec3>& src, const std::vector<Vec3>& dst, double p, const IcpOptions& options,
                     const std::vector<Vec3>& dst_normals) {
  if (!((p > 0.0 && p <= 1.0) || p == 2.0)) throw ContractViolation("sparse ICP exponent must lie in (0, 1]");
  return run_icp(src, dst, p, options, dst_normals);
}

}  // namespace gsm::reg

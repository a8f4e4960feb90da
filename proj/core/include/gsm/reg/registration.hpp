#pragma once

#include <string_view>
#include <vector>

#include "gsm/pose.hpp"

namespace gsm::reg {

struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  RigidTransform inverse() const;
  /// (this * other).apply(p) == this->apply(other.apply(p)).
  RigidTransform operator*(const RigidTransform& other) const;
  Pose to_pose() const { return Pose::from_rotation(rotation, translation); }
  static RigidTransform from_pose(const Pose& pose) { return {pose.rotation(), pose.translation}; }
};

/// Weighted least-squares rigid fit: minimizes sum w_i |R src_i + t - dst_i|^2 with
/// det(R) = +1. Empty weights mean all ones. Throws DegenerateInput when the weighted
/// cross-covariance has rank below 2 (all points collinear or coincident).
RigidTransform kabsch(const std::vector<Vec3>& src, const std::vector<Vec3>& dst,
                      const std::vector<double>& weights = {});

enum class IcpVariant { Point, Plane };
std::string_view to_string(IcpVariant variant);
IcpVariant parse_icp_variant(std::string_view name);

struct IcpOptions {
  IcpVariant variant = IcpVariant::Point;
  int max_iters = 200;
  double tol = 1e-6;  // stop when |R_k+1 - R_k|_F + |t_k+1 - t_k| < tol
};

struct IcpResult {
  RigidTransform transform;
  /// Objective at the start of each iteration, evaluated with that iteration's closest
  /// point correspondences. Point variant: mean squared distance. Plane variant: mean
  /// squared point-to-plane distance. Sparse ICP: mean of |r_i|^p.
  std::vector<double> objective;
  int iterations = 0;
  bool converged = false;
};

/// Aligns `src` onto `dst`. The plane variant needs one unit normal per dst point.
IcpResult icp(const std::vector<Vec3>& src, const std::vector<Vec3>& dst, const IcpOptions& options = {},
              const std::vector<Vec3>& dst_normals = {});

/// Robust ICP with an l_p residual penalty solved by iteratively reweighted least squares:
/// one reweighting per correspondence update with w_i = max(|r_i|, 1e-6)^(p - 2).
/// p must lie in (0, 1]; p = 2 is also accepted and reproduces icp.
IcpResult sparse_icp(const std::vector<Vec3>& src, const std::vector<Vec3>& dst, double p = 0.4,
                     const IcpOptions& options = {}, const std::vector<Vec3>& dst_normals = {});

/// IRLS weight for a residual magnitude.
double irls_weight(double residual, double p);

}  // namespace gsm::reg

#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace gsm {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Rigid pose as a unit quaternion (w, x, y, z) plus translation.
///
/// Shared between the data generator (ground truth), the network (prediction) and the
/// evaluation harness. Conversion to and from rotation matrices is exact up to rounding.
struct Pose {
  Eigen::Vector4d quaternion{1.0, 0.0, 0.0, 0.0};  // w, x, y, z
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }
  static Pose from_rotation(const Mat3& rotation, const Vec3& translation = Vec3::Zero());

  Mat3 rotation() const;
  Vec3 apply(const Vec3& p) const { return rotation() * p + translation; }
  Pose inverse() const;
  /// Composition: (this * other).apply(p) == this->apply(other.apply(p)).
  Pose operator*(const Pose& other) const;
};

/// Rotation matrix of a unit quaternion given as (w, x, y, z).
Mat3 quaternion_to_matrix(const Eigen::Vector4d& wxyz);

/// Unit quaternion (w >= 0) of a proper rotation matrix.
Eigen::Vector4d matrix_to_quaternion(const Mat3& rotation);

/// Angle of the relative rotation a^T b, in radians.
double geodesic_angle(const Mat3& a, const Mat3& b);

}  // namespace gsm

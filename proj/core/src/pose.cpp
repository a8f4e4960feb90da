#include "gsm/pose.hpp"

#include <algorithm>
#include <cmath>

namespace gsm {

Mat3 quaternion_to_matrix(const Eigen::Vector4d& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
       2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
       2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

Eigen::Vector4d matrix_to_quaternion(const Mat3& rotation) {
  Eigen::Quaterniond q(rotation);
  q.normalize();
  Eigen::Vector4d out(q.w(), q.x(), q.y(), q.z());
  if (out[0] < 0) out = -out;
  return out;
}

double geodesic_angle(const Mat3& a, const Mat3& b) {
  const double c = std::clamp(((a.transpose() * b).trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c);
}

Pose Pose::from_rotation(const Mat3& rotation, const Vec3& translation) {
  return Pose{matrix_to_quaternion(rotation), translation};
}

Mat3 Pose::rotation() const { return quaternion_to_matrix(quaternion); }

Pose Pose::inverse() const {
  const Mat3 rt = rotation().transpose();
  Eigen::Vector4d q = quaternion;
  q.tail<3>() = -q.tail<3>();
  return Pose{q, -(rt * translation)};
}

Pose Pose::operator*(const Pose& other) const {
  const Eigen::Quaterniond a(quaternion[0], quaternion[1], quaternion[2], quaternion[3]);
  const Eigen::Quaterniond b(other.quaternion[0], other.quaternion[1], other.quaternion[2],
                             other.quaternion[3]);
  Eigen::Quaterniond c = a * b;
  c.normalize();
  return Pose{Eigen::Vector4d(c.w(), c.x(), c.y(), c.z()), rotation() * other.translation + translation};
}

}  // namespace gsm

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "gsm/pose.hpp"

namespace gsm::eval {

/// Intrinsic Z-Y-X angles (yaw about z, pitch about y, roll about x) in degrees, with
/// R = Rz(yaw) Ry(pitch) Rx(roll). At |pitch| = 90 degrees roll is set to 0.
Vec3 euler_zyx_degrees(const Mat3& r);
Mat3 euler_zyx_to_matrix(const Vec3& yaw_pitch_roll_degrees);
/// Wraps into (-180, 180].
double wrap_degrees(double angle);
/// arccos((tr(a^T b) - 1) / 2) in degrees.
double geodesic_degrees(const Mat3& a, const Mat3& b);

struct PairPoses {
  Pose a;
  Pose b;
};

struct MetricsRecord {
  std::string method;
  std::string experiment;
  double mse_r = 0.0, rmse_r = 0.0, mae_r = 0.0;
  double mse_t = 0.0, rmse_t = 0.0, mae_t = 0.0;
  double geodesic_mae = 0.0;
  std::size_t n_pairs = 0;
};

// Both functions pool parts A and B. Rotation errors are per Euler angle, translation
// errors per component.
void rotation_metrics(const std::vector<PairPoses>& pred, const std::vector<PairPoses>& gt, MetricsRecord& out);
void translation_metrics(const std::vector<PairPoses>& pred, const std::vector<PairPoses>& gt, MetricsRecord& out);
MetricsRecord compute_metrics(const std::vector<PairPoses>& pred, const std::vector<PairPoses>& gt,
                              std::string method = {}, std::string experiment = {});

std::string csv_header();
std::string csv_row(const MetricsRecord& r);
void write_csv(const std::filesystem::path& path, const std::vector<MetricsRecord>& records);

}  // namespace gsm::eval

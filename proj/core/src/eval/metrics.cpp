#include "gsm/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "gsm/error.hpp"

namespace gsm::eval {

namespace {

constexpr double kDeg = 180.0 / M_PI;

void check_lengths(const std::vector<PairPoses>& pred, const std::vector<PairPoses>& gt) {
  if (pred.size() != gt.size()) {
    throw ContractViolation("prediction and ground-truth lists differ in length (" + std::to_string(pred.size()) +
                            " vs " + std::to_string(gt.size()) + ")");
  }
}

}  // namespace

Vec3 euler_zyx_degrees(const Mat3& r) {
  const double s = std::clamp(-r(2, 0), -1.0, 1.0);
  const double pitch = std::asin(s);
  double yaw = 0.0, roll = 0.0;
  if (std::abs(s) < 1.0 - 1e-12) {
    yaw = std::atan2(r(1, 0), r(0, 0));
    roll = std::atan2(r(2, 1), r(2, 2));
  } else {
    // Gimbal lock: only yaw -/+ roll is defined.
    yaw = std::atan2(-r(0, 1), r(1, 1));
  }
  return Vec3(yaw, pitch, roll) * kDeg;
}

Mat3 euler_zyx_to_matrix(const Vec3& ypr) {
  const Vec3 rad = ypr / kDeg;
  return (Eigen::AngleAxisd(rad[0], Vec3::UnitZ()) * Eigen::AngleAxisd(rad[1], Vec3::UnitY()) *
          Eigen::AngleAxisd(rad[2], Vec3::UnitX()))
      .toRotationMatrix();
}

double wrap_degrees(double angle) {
  double a = std::fmod(angle, 360.0);
  if (a > 180.0) a -= 360.0;
  if (a <= -180.0) a += 360.0;
  return a;
}

double geodesic_degrees(const Mat3& a, const Mat3& b) {
  const double c = std::clamp(((a.transpose() * b).trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c) * kDeg;
}

void rotation_metrics(const std::vector<PairPoses>& pred, const std::vector<PairPoses>& gt, MetricsRecord& out) {
  check_lengths(pred, gt);
  double se = 0.0, ae = 0.0, geo = 0.0;
  std::size_t n = 0;
  auto add = [&](const Pose& p, const Pose& g) {
    const Mat3 rp = p.rotation(), rg = g.rotation();
    const Vec3 d = euler_zyx_degrees(rp) - euler_zyx_degrees(rg);
    for (int i = 0; i < 3; ++i) {
      const double e = wrap_degrees(d[i]);
      se += e * e;
      ae += std::abs(e);
      ++n;
    }
    geo += geodesic_degrees(rp, rg);
  };
  for (std::size_t i = 0; i < pred.size(); ++i) {
    add(pred[i].a, gt[i].a);
    add(pred[i].b, gt[i].b);
  }
  out.n_pairs = pred.size();
  if (n == 0) {
    out.mse_r = out.rmse_r = out.mae_r = out.geodesic_mae = 0.0;
    return;
  }
  out.mse_r = se / n;
  out.rmse_r = std::sqrt(out.mse_r);
  out.mae_r = ae / n;
  out.geodesic_mae = geo / (2.0 * pred.size());
}

void translation_metrics(const std::vector<PairPoses>& pred, const std::vector<PairPoses>& gt, MetricsRecord& out) {
  check_lengths(pred, gt);
  double se = 0.0, ae = 0.0;
  std::size_t n = 0;
  auto add = [&](const Pose& p, const Pose& g) {
    const Vec3 d = p.translation - g.translation;
    for (int i = 0; i < 3; ++i) {
      se += d[i] * d[i];
      ae += std::abs(d[i]);
      ++n;
    }
  };
  for (std::size_t i = 0; i < pred.size(); ++i) {
    add(pred[i].a, gt[i].a);
    add(pred[i].b, gt[i].b);
  }
  out.n_pairs = pred.size();
  if (n == 0) {
    out.mse_t = out.rmse_t = out.mae_t = 0.0;
    return;
  }
  out.mse_t = se / n;
  out.rmse_t = std::sqrt(out.mse_t);
  out.mae_t = ae / n;
}

MetricsRecord compute_metrics(const std::vector<PairPoses>& pred, const std::vector<PairPoses>& gt,
                              std::string method, std::string experiment) {
  MetricsRecord r;
  r.method = std::move(method);
  r.experiment = std::move(experiment);
  rotation_metrics(pred, gt, r);
  translation_metrics(pred, gt, r);
  return r;
}

std::string csv_header() { return "method,experiment,MSE_R,RMSE_R,MAE_R,MSE_T,RMSE_T,MAE_T,geodesic_MAE,n_pairs"; }

std::string csv_row(const MetricsRecord& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%s,%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%zu", r.method.c_str(),
                r.experiment.c_str(), r.mse_r, r.rmse_r, r.mae_r, r.mse_t, r.rmse_t, r.mae_t, r.geodesic_mae,
                r.n_pairs);
  return buf;
}

void write_csv(const std::filesystem::path& path, const std::vector<MetricsRecord>& records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << csv_header() << '\n';
  for (const auto& r : records) out << csv_row(r) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace gsm::eval

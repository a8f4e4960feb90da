#include "gsm/eval/experiment.hpp"

#include <Eigen/Geometry>

#include "gsm/error.hpp"

namespace gsm::eval {

std::string_view to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::UnseenCategory: return "unseen-category";
    case ExperimentKind::UnseenCut: return "unseen-cut";
    case ExperimentKind::Noisy: return "noisy";
    case ExperimentKind::Standard: break;
  }
  return "standard";
}

ExperimentKind parse_experiment_kind(std::string_view name) {
  for (ExperimentKind k : {ExperimentKind::Standard, ExperimentKind::UnseenCategory, ExperimentKind::UnseenCut,
                           ExperimentKind::Noisy}) {
    if (to_string(k) == name) return k;
  }
  throw ContractViolation("unknown experiment '" + std::string(name) + "'");
}

data::SplitMode split_mode(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::UnseenCategory: return data::SplitMode::UnseenCategory;
    case ExperimentKind::UnseenCut: return data::SplitMode::UnseenCut;
    default: return data::SplitMode::Standard;
  }
}

std::string_view to_string(Baseline method) {
  switch (method) {
    case Baseline::IcpPoint: return "icp-point";
    case Baseline::IcpPlane: return "icp-plane";
    case Baseline::SparseIcp: return "sparse-icp";
    case Baseline::Identity: break;
  }
  return "identity";
}

Baseline parse_baseline(std::string_view name) {
  for (Baseline b : {Baseline::Identity, Baseline::IcpPoint, Baseline::IcpPlane, Baseline::SparseIcp}) {
    if (to_string(b) == name) return b;
  }
  throw ContractViolation("unknown baseline '" + std::string(name) + "'");
}

PairPoses split_relative(const reg::RigidTransform& a_from_b) {
  const Eigen::AngleAxisd aa(a_from_b.rotation);
  const Mat3 s = Eigen::AngleAxisd(0.5 * aa.angle(), aa.axis()).toRotationMatrix();
  const Vec3 half = 0.5 * (s.transpose() * a_from_b.translation);
  // S^T R = S, so S^T (R b + t) - half = S b + half.
  return {Pose::from_rotation(s.transpose(), -half), Pose::from_rotation(s, half)};
}

PairPoses run_baseline(Baseline method, const train::TrainPair& pair, const BaselineOptions& options) {
  reg::IcpOptions icp = options.icp;
  switch (method) {
    case Baseline::Identity:
      return split_relative({});
    case Baseline::IcpPoint:
      icp.variant = reg::IcpVariant::Point;
      return split_relative(reg::icp(pair.points_b, pair.points_a, icp).transform);
    case Baseline::IcpPlane:
      if (pair.normals_a.size() != pair.points_a.size()) {
        throw ContractViolation("pair " + pair.id + " has no normals for point-to-plane ICP");
      }
      icp.variant = reg::IcpVariant::Plane;
      return split_relative(reg::icp(pair.points_b, pair.points_a, icp, pair.normals_a).transform);
    case Baseline::SparseIcp:
      icp.variant = reg::IcpVariant::Point;
      return split_relative(reg::sparse_icp(pair.points_b, pair.points_a, options.sparse_p, icp).transform);
  }
  throw ContractViolation("unknown baseline");
}

std::vector<PairPoses> run_baseline(Baseline method, const std::vector<train::TrainPair>& pairs,
                                    const BaselineOptions& options) {
  std::vector<PairPoses> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(run_baseline(method, p, options));
  return out;
}

data::DatasetManifest experiment_manifest(const data::DatasetManifest& manifest, const ExperimentOptions& options) {
  data::SplitSpec spec = options.split;
  spec.mode = split_mode(options.kind);
  return data::make_splits(manifest, spec);
}

std::vector<train::TrainPair> with_noise(const std::vector<train::TrainPair>& pairs, double sigma,
                                         std::uint64_t seed) {
  std::vector<train::TrainPair> out = pairs;
  cut::Rng rng(seed);
  for (auto& p : out) {
    p.points_a = data::add_noise(p.points_a, sigma, rng);
    p.points_b = data::add_noise(p.points_b, sigma, rng);
  }
  return out;
}

std::vector<train::TrainPair> experiment_test_set(const fs::path& root, const data::DatasetManifest& split_manifest,
                                                  const ExperimentOptions& options) {
  auto test = train::load_split(root, split_manifest, data::Split::Test, options.points_per_part, options.split.seed);
  if (test.empty()) throw ContractViolation("the " + std::string(to_string(options.kind)) + " test split is empty");
  test = train::randomly_posed(test, options.pose_seed);
  if (options.kind == ExperimentKind::Noisy) test = with_noise(test, options.noise_sigma, options.pose_seed + 1);
  return test;
}

std::vector<train::TrainPair> experiment_train_set(const fs::path& root, const data::DatasetManifest& split_manifest,
                                                   data::Split split, const ExperimentOptions& options) {
  auto pairs = train::load_split(root, split_manifest, split, options.points_per_part, options.split.seed);
  if (pairs.empty()) throw ContractViolation("the " + std::string(data::to_string(split)) + " split is empty");
  return pairs;
}

MetricsRecord evaluate_method(const std::string& method, const std::vector<train::TrainPair>& test,
                              const ExperimentOptions& options, nsm::NsmModel* model) {
  const std::string tag(to_string(options.kind));
  if (method == "nsm") {
    if (model == nullptr) throw ContractViolation("method nsm needs a trained model");
    return train::evaluate(*model, test, method, tag);
  }
  std::vector<PairPoses> gt;
  gt.reserve(test.size());
  for (const auto& p : test) gt.push_back(p.gt());
  return compute_metrics(run_baseline(parse_baseline(method), test, options.baseline), gt, method, tag);
}

std::vector<MetricsRecord> run_experiment(const fs::path& root, const std::vector<std::string>& methods,
                                          const ExperimentOptions& options, nsm::NsmModel* model) {
  if (methods.empty()) throw ContractViolation("no methods to evaluate");
  const auto manifest = experiment_manifest(data::read_manifest(root), options);
  const auto test = experiment_test_set(root, manifest, options);
  std::vector<MetricsRecord> rows;
  for (const auto& m : methods) rows.push_back(evaluate_method(m, test, options, model));
  return rows;
}

}  // namespace gsm::eval

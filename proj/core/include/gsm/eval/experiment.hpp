#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gsm/data/dataset.hpp"
#include "gsm/eval/metrics.hpp"
#include "gsm/reg/registration.hpp"
#include "gsm/train/trainer.hpp"

namespace gsm::eval {

namespace fs = std::filesystem;

enum class ExperimentKind { Standard, UnseenCategory, UnseenCut, Noisy };
std::string_view to_string(ExperimentKind kind);
ExperimentKind parse_experiment_kind(std::string_view name);
/// Split mode used by each experiment; the noisy experiment reuses the standard split.
data::SplitMode split_mode(ExperimentKind kind);

enum class Baseline { Identity, IcpPoint, IcpPlane, SparseIcp };
std::string_view to_string(Baseline method);
Baseline parse_baseline(std::string_view name);

/// Two poses from one relative transform with part_a ~= a_from_b(part_b): half the rotation
/// and half the translation go to each side, so posed A and posed B coincide.
PairPoses split_relative(const reg::RigidTransform& a_from_b);

struct BaselineOptions {
  reg::IcpOptions icp;
  double sparse_p = 0.4;
};

/// Registers B onto A and splits the result.
PairPoses run_baseline(Baseline method, const train::TrainPair& pair, const BaselineOptions& options = {});
std::vector<PairPoses> run_baseline(Baseline method, const std::vector<train::TrainPair>& pairs,
                                    const BaselineOptions& options = {});

struct ExperimentOptions {
  ExperimentKind kind = ExperimentKind::Standard;
  data::SplitSpec split;           // mode is overridden by the kind
  int points_per_part = 1024;
  double noise_sigma = 0.05;       // noisy kind only
  std::uint64_t pose_seed = 0;     // input rotations of the test clouds
  BaselineOptions baseline;
};

/// Re-splits the manifest for the experiment kind.
data::DatasetManifest experiment_manifest(const data::DatasetManifest& manifest, const ExperimentOptions& options);

/// Test fold of the experiment: randomly posed and, for the noisy kind, noised.
std::vector<train::TrainPair> experiment_test_set(const fs::path& root, const data::DatasetManifest& split_manifest,
                                                  const ExperimentOptions& options);

/// Training fold for the experiment, canonical (training applies its own rotations).
std::vector<train::TrainPair> experiment_train_set(const fs::path& root, const data::DatasetManifest& split_manifest,
                                                   data::Split split, const ExperimentOptions& options);

/// Noisy copies: independent Gaussian noise on every point of both parts.
std::vector<train::TrainPair> with_noise(const std::vector<train::TrainPair>& pairs, double sigma,
                                         std::uint64_t seed);

/// One method on a prepared test set. A method is a baseline name or "nsm", which needs `model`.
MetricsRecord evaluate_method(const std::string& method, const std::vector<train::TrainPair>& test,
                              const ExperimentOptions& options, nsm::NsmModel* model = nullptr);

/// One row per method on the experiment's test fold.
std::vector<MetricsRecord> run_experiment(const fs::path& root, const std::vector<std::string>& methods,
                                          const ExperimentOptions& options, nsm::NsmModel* model = nullptr);

}  // namespace gsm::eval

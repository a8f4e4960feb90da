#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gsm/ad/optim.hpp"
#include "gsm/data/dataset.hpp"
#include "gsm/eval/metrics.hpp"
#include "gsm/nsm/model.hpp"

namespace gsm::train {

namespace fs = std::filesystem;

struct TrainConfig {
  nsm::ModelConfig model = nsm::ModelConfig::reduced();
  long steps = 2000;       // generator steps; used when epochs == 0
  long epochs = 0;         // overrides steps when positive
  int batch_size = 4;      // pairs per step
  double lr = 1e-3;
  double weight_decay = 1e-6;
  double lr_decay = 0.0;
  double lambda_pose = 1.0;
  double lambda_g = 1.0;
  double lambda_sdf = 1.0;
  int sdf_queries = 512;   // per part and step
  int points_per_part = 1024;
  int gen_steps_per_disc = 1;
  bool augment_rotations = true;  // resample input rotations every step
  double noise_sigma = 0.0;       // Gaussian noise on the input clouds, redrawn every step
  std::uint64_t seed = 0;
  long val_interval = 100;
  long checkpoint_interval = 100;

  void validate() const;
};

std::string to_json(const TrainConfig& config);
/// Missing keys keep their defaults. "model" may be a preset name or an object.
TrainConfig train_config_from_json(const std::string& text);
TrainConfig load_train_config(const fs::path& file);

/// One pair prepared for training: both clouds subsampled to the same size.
struct TrainPair {
  std::string id;
  std::vector<Vec3> points_a, points_b;
  std::vector<Vec3> normals_a, normals_b;     // outward unit normals, empty if the source had none
  std::vector<Eigen::Vector4d> sdf_a, sdf_b;  // xyz in the part frame, signed distance
  Pose pose_a, pose_b;

  eval::PairPoses gt() const { return {pose_a, pose_b}; }
};

/// Keeps `points_per_part` points of each cloud, chosen by a seeded shuffle.
TrainPair to_train_pair(const cut::ShapePairRecord& record, int points_per_part, std::uint64_t seed,
                        std::string id = {});
/// Copies with every part rotated by a seeded uniform random rotation; ground-truth poses
/// are adjusted so they still map each part into the assembled object. Stored clouds are in
/// the canonical object orientation, so evaluation inputs go through this.
std::vector<TrainPair> randomly_posed(const std::vector<TrainPair>& pairs, std::uint64_t seed);
/// Small in-memory solid pairs cut from the cube, icosphere and torus in turn, for smoke
/// runs and overfitting checks. Clouds are canonical, as stored on disk.
std::vector<TrainPair> toy_pairs(int count, int points_per_part, std::uint64_t seed,
                                 cut::CutFamily family = cut::CutFamily::Planar);
std::vector<TrainPair> load_split(const fs::path& root, const data::DatasetManifest& manifest, data::Split split,
                                  int points_per_part, std::uint64_t seed = 0);

/// Tensors for one optimization step. Cloud rows are ordered A_0 .. A_{B-1}, B_0 .. B_{B-1};
/// assembled clouds are ordered per pair (A_i then B_i).
struct Batch {
  int pairs = 0;
  int points_per_part = 0;
  nsm::CloudBatch clouds;
  ad::Tensor gt_rotation;     // 2B x 9
  ad::Tensor gt_translation;  // 2B x 3
  ad::Tensor sdf_queries;     // 2B*q x 3, part frame of the network input
  ad::Tensor sdf_targets;     // 2B*q x 1
  std::vector<int> sdf_rows;  // cloud row of each query
  ad::Tensor gt_assembled;    // B*2n x 3
  std::vector<int> pair_order;  // cloud-ordered row feeding each assembled row
};

Batch make_batch(const std::vector<TrainPair>& data, const std::vector<int>& indices, const TrainConfig& config,
                 std::uint64_t stream_seed);

struct StepLosses {
  double pose = 0.0, g = 0.0, sdf = 0.0, total = 0.0;
};

struct TraceRow {
  long step = 0;
  double l_pose = 0.0, l_g = 0.0, l_adv = 0.0, l_sdf = 0.0;
  std::optional<eval::MetricsRecord> val;
};

struct FitResult {
  long steps = 0;
  std::vector<TraceRow> trace;
  std::optional<eval::MetricsRecord> best_val;  // best validation row of this run
  long best_step = -1;
};

/// Batched evaluation-mode inference; parameters are not touched.
std::vector<eval::PairPoses> predict_poses(nsm::NsmModel& model, const std::vector<TrainPair>& pairs,
                                           int chunk = 8);
eval::MetricsRecord evaluate(nsm::NsmModel& model, const std::vector<TrainPair>& pairs, std::string method = "nsm",
                             std::string experiment = {});

/// Model weights plus the model config in the metadata.
void save_model(const nsm::NsmModel& model, const fs::path& prefix);
nsm::NsmModel load_model(const fs::path& prefix);

class Trainer {
 public:
  Trainer(TrainConfig config, std::vector<TrainPair> train, std::vector<TrainPair> val = {});
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  const TrainConfig& config() const { return config_; }
  nsm::NsmModel& model() { return model_; }
  long step_count() const { return step_; }
  long total_steps() const;

  /// One Adam step on the generator (discriminator frozen). Keeps the detached assembled
  /// prediction for the next discriminator step.
  StepLosses train_generator_step(const Batch& batch);
  /// One Adam step on the discriminator against the last generator prediction.
  double train_discriminator_step(const Batch& batch);
  /// Batch of schedule step `step`, a pure function of (data, config, step).
  Batch batch_for_step(long step) const;
  /// Generator step, then the discriminator step when the schedule calls for it.
  TraceRow step();

  void save(const fs::path& prefix) const;
  void load(const fs::path& prefix);

  /// Runs to total_steps(), resuming from `out/last` when present. Writes trace.csv,
  /// `last` and `best` checkpoints under `out`.
  FitResult fit(const fs::path& out);

 private:
  TrainConfig config_;
  std::vector<TrainPair> train_, val_;
  nsm::NsmModel model_;
  ad::Adam gen_opt_, disc_opt_;
  long step_ = 0;
  ad::Tensor last_prediction_;
  double best_val_ = -1.0;
  long best_step_ = -1;
};

std::string trace_header();
std::string trace_line(const TraceRow& row);

}  // namespace gsm::train

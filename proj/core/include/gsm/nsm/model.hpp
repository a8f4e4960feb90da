#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "gsm/ad/tape.hpp"
#include "gsm/pose.hpp"

namespace gsm::nsm {

struct ModelConfig {
  int k = 20;
  std::vector<int> channels{64, 64, 128, 256, 1024};
  int regressor_hidden = 256;
  int sdf_hidden = 256;
  int sdf_layers = 8;
  int sdf_skip_layer = 5;  // 1-based layer whose input also receives the head input
  double leaky_slope = 0.2;

  int d() const { return channels.back(); }
  void validate() const;

  static ModelConfig full();
  /// Desk-scale configuration: d = 64.
  static ModelConfig reduced();
  /// Tiny configuration for finite-difference checks: d = 16.
  static ModelConfig gradcheck();
};

std::string to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& text);

/// k nearest neighbours of every point (self excluded), row-major N x k, ties broken
/// toward the lower index. Throws ContractViolation if N <= k.
std::vector<int> knn_graph(const std::vector<Vec3>& points, int k);

/// Per-forward-pass view of the parameters: binds each parameter to the tape once and
/// carries the normalization mode and whether gradients may flow into parameters.
class Scope {
 public:
  Scope(ad::Tape& tape, ad::ParameterSet& params, ad::NormMode mode, bool frozen = false)
      : tape_(tape), params_(params), mode_(mode), frozen_(frozen) {}

  ad::Tape& tape() { return tape_; }
  ad::NormMode mode() const { return mode_; }
  ad::Var p(const std::string& name);
  /// x W + b with parameters `<name>/w`, `<name>/b`.
  ad::Var linear(ad::Var x, const std::string& name);
  /// Batch norm with parameters under `<name>/`.
  ad::Var bn(ad::Var x, const std::string& name);
  /// Fused edge aggregation (see ad::edge_max_bn) with batch norm parameters under `<name>/`.
  ad::Var edge_bn(ad::Var center, ad::Var neighbor, const std::vector<int>& idx, int k, const std::string& name,
                  double slope);
  /// Layer norm with parameters under `<name>/`.
  ad::Var ln(ad::Var x, const std::string& name);

 private:
  ad::BatchNormBuffers buffers(const std::string& name);
  ad::NormMode norm_mode() const;

  ad::Tape& tape_;
  ad::ParameterSet& params_;
  ad::NormMode mode_;
  bool frozen_;
  std::unordered_map<std::string, ad::Var> bound_;
};

/// Several point clouds stacked row-wise, with their kNN graph in global row indices.
struct CloudBatch {
  ad::Tensor points;             // (sum of sizes) x 3
  std::vector<int> offsets;      // first row of each cloud, plus the total at the end
  std::vector<int> neighbors;    // rows * k
  int k = 0;

  int clouds() const { return static_cast<int>(offsets.size()) - 1; }
  int size(int c) const { return offsets[c + 1] - offsets[c]; }
};
CloudBatch make_cloud_batch(const std::vector<std::vector<Vec3>>& clouds, int k);
/// Same as make_cloud_batch but for coordinates already on a tape (graph from values).
CloudBatch make_cloud_batch(const ad::Tensor& stacked, const std::vector<int>& sizes, int k);

struct Correlation {
  ad::Var s;                        // self-attended features, same layout as the input
  ad::Var h;                        // cross-attended features
  std::vector<ad::Var> attention;   // every attention weight matrix, for inspection
};

struct PoseHeads {
  ad::Var quaternion;   // rows x 4, unit rows (w, x, y, z)
  ad::Var translation;  // rows x 3
  ad::Var rotation;     // rows x 9, row-major matrices
};

struct GeneratorOutput {
  ad::Var features;     // per-point f, rows x d
  Correlation correlation;
  ad::Var global_f;     // per-cloud max pool of f, clouds x d
  ad::Var global_h;     // per-cloud max pool of h, clouds x d
  PoseHeads poses;      // rows ordered A_0 .. A_{B-1}, B_0 .. B_{B-1}
};

/// The shape-mating network. Generator parameters live under "gen/", the
/// discriminator under "disc/".
class NsmModel {
 public:
  explicit NsmModel(ModelConfig config, std::uint64_t seed = 0);

  const ModelConfig& config() const { return config_; }
  ad::ParameterSet& params() { return params_; }
  const ad::ParameterSet& params() const { return params_; }

  /// EdgeConv stack over every cloud of the batch: rows x d.
  ad::Var encode(Scope& scope, ad::Var points, const CloudBatch& batch, const std::string& prefix) const;
  /// Self-attention inside each cloud, then cross-attention between the two clouds of
  /// each pair. Cloud c < B pairs with cloud c + B.
  Correlation correlate(Scope& scope, ad::Var features, const CloudBatch& batch) const;
  /// Regressor on concat(F_k, H_k).
  PoseHeads regress(Scope& scope, ad::Var global_f, ad::Var global_h) const;
  /// Full generator on B pairs; the batch holds the A clouds first, then the B clouds.
  GeneratorOutput generator(Scope& scope, const CloudBatch& batch) const;
  /// Realism score in (0, 1) per cloud: clouds x 1.
  ad::Var discriminate(Scope& scope, ad::Var points, const CloudBatch& batch) const;
  /// Signed distance per query row: queries x 1. `global_rows` picks the F_k row of each query.
  ad::Var sdf(Scope& scope, ad::Var global_f, const std::vector<int>& global_rows, ad::Var queries) const;

  /// Inference in evaluation mode for one pair.
  std::pair<Pose, Pose> predict(const std::vector<Vec3>& part_a, const std::vector<Vec3>& part_b);

 private:
  void init(std::uint64_t seed);
  void add_linear(const std::string& name, int in, int out, std::mt19937_64& rng);
  void add_norm(const std::string& name, int width, bool running);
  void add_encoder(const std::string& prefix, std::mt19937_64& rng);

  ModelConfig config_;
  ad::ParameterSet params_;
};

// Losses. Pose rows are ordered A_0 .. A_{B-1}, B_0 .. B_{B-1}; each loss is averaged
// over the B pairs and summed over the two parts.
ad::Var loss_pose(const PoseHeads& pred, const ad::Tensor& gt_rotation, const ad::Tensor& gt_translation);
ad::Var loss_generator(ad::Var pred_score);
ad::Var loss_adversarial(ad::Var pred_score, ad::Var gt_score);
/// `pred` and `gt` hold 2 * B * queries_per_part rows.
ad::Var loss_sdf(ad::Var pred, ad::Var gt, int pairs);

/// Union of the two posed clouds, A first.
std::vector<Vec3> assemble(const std::vector<Vec3>& part_a, const std::vector<Vec3>& part_b, const Pose& pose_a,
                           const Pose& pose_b);

/// Rotation (rows x 9) and translation (rows x 3) tensors of a pose list.
ad::Tensor rotation_rows(const std::vector<Pose>& poses);
ad::Tensor translation_rows(const std::vector<Pose>& poses);
/// Pose of row r of a PoseHeads value.
Pose pose_at(const PoseHeads& heads, int row);

}  // namespace gsm::nsm

#include "gsm/nsm/model.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "gsm/error.hpp"
#include "gsm/mesh/point_index.hpp"

namespace gsm::nsm {

using ad::Tensor;
using ad::Var;

void ModelConfig::validate() const {
  if (k < 1) throw ContractViolation("k must be at least 1");
  if (channels.empty()) throw ContractViolation("encoder needs at least one layer");
  for (int c : channels) {
    if (c < 1) throw ContractViolation("encoder channels must be positive");
  }
  if (regressor_hidden < 1 || sdf_hidden < 1) throw ContractViolation("hidden widths must be positive");
  if (sdf_layers < 2) throw ContractViolation("SDF head needs at least two layers");
  if (sdf_skip_layer < 2 || sdf_skip_layer >= sdf_layers) {
    throw ContractViolation("SDF skip layer must be an inner layer");
  }
}

ModelConfig ModelConfig::full() { return {}; }

ModelConfig ModelConfig::reduced() {
  ModelConfig c;
  c.channels = {16, 16, 32, 64, 64};
  c.regressor_hidden = 64;
  c.sdf_hidden = 64;
  return c;
}

ModelConfig ModelConfig::gradcheck() {
  ModelConfig c;
  c.channels = {8, 8, 8, 16, 16};
  c.regressor_hidden = 16;
  c.sdf_hidden = 16;
  return c;
}

std::string to_json(const ModelConfig& c) {
  const nlohmann::json j = {{"k", c.k},
                            {"channels", c.channels},
                            {"regressor_hidden", c.regressor_hidden},
                            {"sdf_hidden", c.sdf_hidden},
                            {"sdf_layers", c.sdf_layers},
                            {"sdf_skip_layer", c.sdf_skip_layer},
                            {"leaky_slope", c.leaky_slope}};
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  ModelConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.contains("preset")) {
      const auto preset = j.at("preset").get<std::string>();
      if (preset == "full") c = ModelConfig::full();
      else if (preset == "reduced") c = ModelConfig::reduced();
      else if (preset == "gradcheck") c = ModelConfig::gradcheck();
      else throw ContractViolation("unknown model preset '" + preset + "'");
    }
    c.k = j.value("k", c.k);
    c.channels = j.value("channels", c.channels);
    c.regressor_hidden = j.value("regressor_hidden", c.regressor_hidden);
    c.sdf_hidden = j.value("sdf_hidden", c.sdf_hidden);
    c.sdf_layers = j.value("sdf_layers", c.sdf_layers);
    c.sdf_skip_layer = j.value("sdf_skip_layer", c.sdf_skip_layer);
    c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
  } catch (const nlohmann::json::exception& e) {
    throw ContractViolation(std::string("malformed model config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<int> knn_graph(const std::vector<Vec3>& points, int k) {
  const int n = static_cast<int>(points.size());
  if (k < 1 || n <= k) {
    throw ContractViolation("knn_graph needs more than k = " + std::to_string(k) + " points, got " +
                            std::to_string(n));
  }
  const mesh::PointIndex index(points);
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(n) * k);
  for (int i = 0; i < n; ++i) {
    for (const auto& nb : index.knn(points[i], static_cast<std::size_t>(k), i)) out.push_back(nb.index);
  }
  return out;
}

Var Scope::p(const std::string& name) {
  const auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  const Var v = tape_.param(params_.get(name), frozen_);
  bound_.emplace(name, v);
  return v;
}

Var Scope::linear(Var x, const std::string& name) { return ad::add(ad::matmul(x, p(name + "/w")), p(name + "/b")); }

ad::BatchNormBuffers Scope::buffers(const std::string& name) {
  return {&params_.get(name + "/mean"), &params_.get(name + "/var"), 0.1};
}

ad::NormMode Scope::norm_mode() const {
  // Frozen passes never move the running statistics either.
  if (frozen_ && mode_ == ad::NormMode::Train) return ad::NormMode::TrainFrozen;
  return mode_;
}

Var Scope::bn(Var x, const std::string& name) {
  return ad::batch_norm(x, p(name + "/gamma"), p(name + "/beta"), buffers(name), norm_mode());
}

Var Scope::edge_bn(Var center, Var neighbor, const std::vector<int>& idx, int k, const std::string& name,
                   double slope) {
  return ad::edge_max_bn(center, neighbor, idx, k, p(name + "/gamma"), p(name + "/beta"), buffers(name),
                         norm_mode(), slope);
}

Var Scope::ln(Var x, const std::string& name) { return ad::layer_norm(x, p(name + "/gamma"), p(name + "/beta")); }

namespace {

CloudBatch finish_batch(Tensor points, const std::vector<std::vector<Vec3>>& clouds, int k) {
  CloudBatch b;
  b.points = std::move(points);
  b.k = k;
  b.offsets.push_back(0);
  for (const auto& c : clouds) b.offsets.push_back(b.offsets.back() + static_cast<int>(c.size()));
  b.neighbors.reserve(static_cast<std::size_t>(b.offsets.back()) * k);
  for (std::size_t c = 0; c < clouds.size(); ++c) {
    const int off = b.offsets[c];
    for (int idx : knn_graph(clouds[c], k)) b.neighbors.push_back(idx + off);
  }
  return b;
}

}  // namespace

CloudBatch make_cloud_batch(const std::vector<std::vector<Vec3>>& clouds, int k) {
  int rows = 0;
  for (const auto& c : clouds) rows += static_cast<int>(c.size());
  Tensor points({rows, 3});
  int r = 0;
  for (const auto& c : clouds) {
    for (const Vec3& p : c) {
      for (int a = 0; a < 3; ++a) points(r, a) = p[a];
      ++r;
    }
  }
  return finish_batch(std::move(points), clouds, k);
}

CloudBatch make_cloud_batch(const Tensor& stacked, const std::vector<int>& sizes, int k) {
  std::vector<std::vector<Vec3>> clouds;
  int r = 0;
  for (int s : sizes) {
    std::vector<Vec3> c(s);
    for (int i = 0; i < s; ++i, ++r) c[i] = Vec3(stacked(r, 0), stacked(r, 1), stacked(r, 2));
    clouds.push_back(std::move(c));
  }
  if (r != stacked.rows()) throw ContractViolation("cloud sizes do not cover the stacked points");
  return finish_batch(stacked, clouds, k);
}

NsmModel::NsmModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  init(seed);
}

void NsmModel::add_linear(const std::string& name, int in, int out, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor w({in, out});
  for (double& v : w.data) v = u(rng);
  Tensor b({1, out});
  for (double& v : b.data) v = u(rng);
  params_.add(name + "/w", std::move(w));
  params_.add(name + "/b", std::move(b));
}

void NsmModel::add_norm(const std::string& name, int width, bool running) {
  params_.add(name + "/gamma", Tensor({1, width}, 1.0));
  params_.add(name + "/beta", Tensor({1, width}, 0.0));
  if (running) {
    params_.add(name + "/mean", Tensor({1, width}, 0.0), false);
    params_.add(name + "/var", Tensor({1, width}, 1.0), false);
  }
}

void NsmModel::add_encoder(const std::string& prefix, std::mt19937_64& rng) {
  int in = 3;
  for (std::size_t l = 0; l < config_.channels.size(); ++l) {
    const int out = config_.channels[l];
    const std::string name = prefix + "/conv" + std::to_string(l + 1);
    // Edge features concat(x_i, x_j - x_i); batch norm makes a bias redundant.
    const double bound = 1.0 / std::sqrt(2.0 * in);
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor w({2 * in, out});
    for (double& v : w.data) v = u(rng);
    params_.add(name + "/w", std::move(w));
    add_norm(name + "/bn", out, true);
    in = out;
  }
}

void NsmModel::init(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int d = config_.d();
  add_encoder("gen/enc", rng);
  for (const char* proj : {"qe", "ke", "ve", "qd", "kd", "vd"}) {
    const std::string name = std::string("gen/tf/") + proj;
    add_linear(name, d, d, rng);
    add_norm(name + "/ln", d, false);
  }
  add_linear("gen/reg/fc", 2 * d, config_.regressor_hidden, rng);
  add_norm("gen/reg/fc/bn", config_.regressor_hidden, true);
  add_linear("gen/reg/quat", config_.regressor_hidden, 4, rng);
  // Start near the identity rotation.
  params_.get("gen/reg/quat/b").value = Tensor({1, 4}, {1.0, 0.0, 0.0, 0.0});
  add_linear("gen/reg/trans", config_.regressor_hidden, 3, rng);

  const int in = d + 3, hidden = config_.sdf_hidden;
  for (int l = 1; l <= config_.sdf_layers; ++l) {
    const std::string name = "gen/sdf/l" + std::to_string(l);
    int fan_in = l == 1 ? in : hidden;
    if (l == config_.sdf_skip_layer) fan_in = hidden + in;
    const int out = l == config_.sdf_layers ? 1 : hidden;
    add_linear(name, fan_in, out, rng);
    if (l < config_.sdf_layers) add_norm(name + "/bn", out, true);
  }

  add_encoder("disc/enc", rng);
  add_linear("disc/fc", d, 1, rng);
}

Var NsmModel::encode(Scope& scope, Var points, const CloudBatch& batch, const std::string& prefix) const {
  Var x = points;
  for (std::size_t l = 0; l < config_.channels.size(); ++l) {
    const std::string name = prefix + "/conv" + std::to_string(l + 1);
    const int in = x.cols();
    const Var w = scope.p(name + "/w");
    const Var w_top = ad::slice_rows(w, 0, in);
    const Var w_bot = ad::slice_rows(w, in, 2 * in);
    // [x_i, x_j - x_i] W = x_i (W_top - W_bot) + x_j W_bot
    const Var center = ad::matmul(x, ad::sub(w_top, w_bot));
    const Var neighbor = ad::matmul(x, w_bot);
    x = scope.edge_bn(center, neighbor, batch.neighbors, batch.k, name + "/bn", config_.leaky_slope);
  }
  return x;
}

namespace {

Var attention(Var q, Var k, Var v, double inv_sqrt_d, std::vector<Var>* weights) {
  const Var w = ad::row_softmax(ad::scale(ad::matmul(q, ad::transpose(k)), inv_sqrt_d));
  if (weights) weights->push_back(w);
  return ad::matmul(w, v);
}

Var rows_of(Var x, const CloudBatch& b, int c) { return ad::slice_rows(x, b.offsets[c], b.offsets[c + 1]); }

Var per_cloud_max(Var x, const CloudBatch& b) {
  std::vector<Var> pooled;
  for (int c = 0; c < b.clouds(); ++c) pooled.push_back(ad::max_pool(rows_of(x, b, c), 0));
  return ad::concat(pooled, 0);
}

}  // namespace

Correlation NsmModel::correlate(Scope& scope, Var features, const CloudBatch& batch) const {
  if (batch.clouds() % 2 != 0) throw ContractViolation("correlate needs an even number of clouds");
  const int d = features.cols();
  if (d != config_.d()) throw ContractViolation("feature width does not match the model dimension");
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  auto proj = [&](Var x, const std::string& name) {
    const std::string full = "gen/tf/" + name;
    return scope.ln(ad::relu(scope.linear(x, full)), full + "/ln");
  };
  Correlation out;
  const Var qe = proj(features, "qe"), ke = proj(features, "ke"), ve = proj(features, "ve");
  std::vector<Var> s_parts;
  for (int c = 0; c < batch.clouds(); ++c) {
    s_parts.push_back(attention(rows_of(qe, batch, c), rows_of(ke, batch, c), rows_of(ve, batch, c), inv_sqrt_d,
                                &out.attention));
  }
  out.s = ad::concat(s_parts, 0);
  const Var qd = proj(out.s, "qd"), kd = proj(out.s, "kd"), vd = proj(out.s, "vd");
  const int pairs = batch.clouds() / 2;
  std::vector<Var> h_parts;
  for (int c = 0; c < batch.clouds(); ++c) {
    const int other = c < pairs ? c + pairs : c - pairs;
    h_parts.push_back(attention(rows_of(qd, batch, c), rows_of(kd, batch, other), rows_of(vd, batch, other),
                                inv_sqrt_d, &out.attention));
  }
  out.h = ad::concat(h_parts, 0);
  return out;
}

PoseHeads NsmModel::regress(Scope& scope, Var global_f, Var global_h) const {
  Var x = scope.linear(ad::concat({global_f, global_h}, 1), "gen/reg/fc");
  x = ad::leaky_relu(scope.bn(x, "gen/reg/fc/bn"), config_.leaky_slope);
  PoseHeads out;
  out.quaternion = ad::l2_normalize_rows(scope.linear(x, "gen/reg/quat"));
  out.translation = scope.linear(x, "gen/reg/trans");
  out.rotation = ad::quat_to_rotmat(out.quaternion);
  return out;
}

GeneratorOutput NsmModel::generator(Scope& scope, const CloudBatch& batch) const {
  GeneratorOutput out;
  const Var points = scope.tape().constant(batch.points);
  out.features = encode(scope, points, batch, "gen/enc");
  out.correlation = correlate(scope, out.features, batch);
  out.global_f = per_cloud_max(out.features, batch);
  out.global_h = per_cloud_max(out.correlation.h, batch);
  out.poses = regress(scope, out.global_f, out.global_h);
  return out;
}

Var NsmModel::discriminate(Scope& scope, Var points, const CloudBatch& batch) const {
  const Var f = encode(scope, points, batch, "disc/enc");
  return ad::sigmoid(scope.linear(per_cloud_max(f, batch), "disc/fc"));
}

Var NsmModel::sdf(Scope& scope, Var global_f, const std::vector<int>& global_rows, Var queries) const {
  if (queries.cols() != 3 || queries.rows() != static_cast<int>(global_rows.size())) {
    throw ContractViolation("SDF queries must be n x 3 with one feature row each");
  }
  const Var input = ad::concat({ad::gather_rows(global_f, global_rows), queries}, 1);
  Var h = input;
  for (int l = 1; l <= config_.sdf_layers; ++l) {
    const std::string name = "gen/sdf/l" + std::to_string(l);
    if (l == config_.sdf_skip_layer) h = ad::concat({h, input}, 1);
    h = scope.linear(h, name);
    if (l < config_.sdf_layers) h = ad::relu(scope.bn(h, name + "/bn"));
  }
  return h;
}

std::pair<Pose, Pose> NsmModel::predict(const std::vector<Vec3>& part_a, const std::vector<Vec3>& part_b) {
  ad::Tape tape;
  Scope scope(tape, params_, ad::NormMode::Eval, true);
  const CloudBatch batch = make_cloud_batch({part_a, part_b}, config_.k);
  const GeneratorOutput out = generator(scope, batch);
  return {pose_at(out.poses, 0), pose_at(out.poses, 1)};
}

Var loss_pose(const PoseHeads& pred, const Tensor& gt_rotation, const Tensor& gt_translation) {
  ad::Tape& t = *pred.rotation.tape;
  const int rows = pred.rotation.rows();
  if (rows % 2 != 0) throw ContractViolation("pose rows must come in A/B pairs");
  if (gt_rotation.shape != std::vector<int>{rows, 9} || gt_translation.shape != std::vector<int>{rows, 3}) {
    throw ContractViolation("ground-truth pose tensors do not match the predictions");
  }
  Tensor identity({rows, 9});
  for (int r = 0; r < rows; ++r) identity(r, 0) = identity(r, 4) = identity(r, 8) = 1.0;
  const Var rel = ad::sub(ad::batched_mat3(pred.rotation, t.constant(gt_rotation), true), t.constant(identity));
  const Var rot_term = ad::row_l2_norms(rel);
  const Var trans_term = ad::row_l2_norms(ad::sub(pred.translation, t.constant(gt_translation)));
  return ad::scale(ad::sum(ad::add(rot_term, trans_term)), 2.0 / rows);
}

Var loss_generator(Var pred_score) { return ad::mean(ad::abs(ad::add_scalar(pred_score, -1.0))); }

Var loss_adversarial(Var pred_score, Var gt_score) {
  return ad::add(ad::mean(ad::abs(pred_score)), ad::mean(ad::abs(ad::add_scalar(gt_score, -1.0))));
}

Var loss_sdf(Var pred, Var gt, int pairs) {
  if (pred.shape() != gt.shape()) throw ContractViolation("SDF prediction and target shapes differ");
  if (pairs < 1 || pred.rows() % (2 * pairs) != 0) throw ContractViolation("SDF rows must split evenly over parts");
  const int per_part = pred.rows() / (2 * pairs);
  return ad::scale(ad::sum(ad::abs(ad::sub(pred, gt))), 1.0 / (static_cast<double>(pairs) * per_part));
}

std::vector<Vec3> assemble(const std::vector<Vec3>& part_a, const std::vector<Vec3>& part_b, const Pose& pose_a,
                           const Pose& pose_b) {
  std::vector<Vec3> out;
  out.reserve(part_a.size() + part_b.size());
  const Mat3 ra = pose_a.rotation(), rb = pose_b.rotation();
  for (const Vec3& p : part_a) out.push_back(ra * p + pose_a.translation);
  for (const Vec3& p : part_b) out.push_back(rb * p + pose_b.translation);
  return out;
}

Tensor rotation_rows(const std::vector<Pose>& poses) {
  Tensor t({static_cast<int>(poses.size()), 9});
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const Mat3 r = poses[i].rotation();
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) t(static_cast<int>(i), 3 * a + b) = r(a, b);
    }
  }
  return t;
}

Tensor translation_rows(const std::vector<Pose>& poses) {
  Tensor t({static_cast<int>(poses.size()), 3});
  for (std::size_t i = 0; i < poses.size(); ++i) {
    for (int a = 0; a < 3; ++a) t(static_cast<int>(i), a) = poses[i].translation[a];
  }
  return t;
}

Pose pose_at(const PoseHeads& heads, int row) {
  const Tensor& q = heads.quaternion.value();
  const Tensor& t = heads.translation.value();
  Pose p;
  p.quaternion = Eigen::Vector4d(q(row, 0), q(row, 1), q(row, 2), q(row, 3));
  p.translation = Vec3(t(row, 0), t(row, 1), t(row, 2));
  return p;
}

}  // namespace gsm::nsm

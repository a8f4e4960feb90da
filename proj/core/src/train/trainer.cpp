#include "gsm/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "gsm/cut/generator.hpp"
#include "gsm/error.hpp"
#include "gsm/mesh/bvh.hpp"
#include "gsm/mesh/primitives.hpp"

namespace gsm::train {

using ad::Tensor;
using ad::Var;
using nlohmann::json;

void TrainConfig::validate() const {
  model.validate();
  if (steps < 1 && epochs < 1) throw ContractViolation("training needs a positive step or epoch count");
  if (batch_size < 1) throw ContractViolation("batch_size must be positive");
  if (sdf_queries < 1) throw ContractViolation("sdf_queries must be positive");
  if (points_per_part <= model.k) throw ContractViolation("points_per_part must exceed k");
  if (gen_steps_per_disc < 1) throw ContractViolation("gen_steps_per_disc must be positive");
  for (double v : {lr, weight_decay, lr_decay, lambda_pose, lambda_g, lambda_sdf, noise_sigma}) {
    if (!std::isfinite(v) || v < 0) throw ContractViolation("rates, loss weights and noise must be finite and >= 0");
  }
  if (lr <= 0) throw ContractViolation("lr must be positive");
}

std::string to_json(const TrainConfig& c) {
  const json j = {{"model", json::parse(nsm::to_json(c.model))},
                  {"steps", c.steps},
                  {"epochs", c.epochs},
                  {"batch_size", c.batch_size},
                  {"lr", c.lr},
                  {"weight_decay", c.weight_decay},
                  {"lr_decay", c.lr_decay},
                  {"lambda_pose", c.lambda_pose},
                  {"lambda_g", c.lambda_g},
                  {"lambda_sdf", c.lambda_sdf},
                  {"sdf_queries", c.sdf_queries},
                  {"points_per_part", c.points_per_part},
                  {"gen_steps_per_disc", c.gen_steps_per_disc},
                  {"noise_sigma", c.noise_sigma},
                  {"augment_rotations", c.augment_rotations},
                  {"seed", c.seed},
                  {"val_interval", c.val_interval},
                  {"checkpoint_interval", c.checkpoint_interval}};
  return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
  TrainConfig c;
  try {
    const json j = json::parse(text);
    if (j.contains("model")) {
      const json& m = j.at("model");
      c.model = nsm::model_config_from_json(m.is_string() ? json{{"preset", m}}.dump() : m.dump());
    }
    c.steps = j.value("steps", c.steps);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.lr_decay = j.value("lr_decay", c.lr_decay);
    c.lambda_pose = j.value("lambda_pose", c.lambda_pose);
    c.lambda_g = j.value("lambda_g", c.lambda_g);
    c.lambda_sdf = j.value("lambda_sdf", c.lambda_sdf);
    c.sdf_queries = j.value("sdf_queries", c.sdf_queries);
    c.points_per_part = j.value("points_per_part", c.points_per_part);
    c.gen_steps_per_disc = j.value("gen_steps_per_disc", c.gen_steps_per_disc);
    c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
    c.augment_rotations = j.value("augment_rotations", c.augment_rotations);
    c.seed = j.value("seed", c.seed);
    c.val_interval = j.value("val_interval", c.val_interval);
    c.checkpoint_interval = j.value("checkpoint_interval", c.checkpoint_interval);
  } catch (const json::exception& e) {
    throw ContractViolation(std::string("malformed training config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig load_train_config(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot read config " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return train_config_from_json(ss.str());
}

namespace {

std::vector<int> subsample(std::size_t size, int n, std::mt19937_64& rng) {
  std::vector<int> idx(size);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<Vec3> pick(const std::vector<Vec3>& xs, const std::vector<int>& idx) {
  std::vector<Vec3> out;
  if (xs.empty()) return out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(xs.at(i));
  return out;
}

std::uint64_t mix(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32), static_cast<std::uint32_t>(b)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

}  // namespace

TrainPair to_train_pair(const cut::ShapePairRecord& record, int points_per_part, std::uint64_t seed, std::string id) {
  const auto& a = record.part_a.points;
  const auto& b = record.part_b.points;
  if (static_cast<int>(a.size()) < points_per_part || static_cast<int>(b.size()) < points_per_part) {
    throw ContractViolation("pair has fewer than " + std::to_string(points_per_part) + " points per part");
  }
  std::mt19937_64 rng(seed);
  TrainPair p;
  p.id = std::move(id);
  const auto ia = subsample(a.size(), points_per_part, rng);
  const auto ib = subsample(b.size(), points_per_part, rng);
  p.points_a = pick(a, ia);
  p.points_b = pick(b, ib);
  p.normals_a = pick(record.part_a.normals, ia);
  p.normals_b = pick(record.part_b.normals, ib);
  p.sdf_a = record.sdf_a.records;
  p.sdf_b = record.sdf_b.records;
  p.pose_a = record.pose_a;
  p.pose_b = record.pose_b;
  return p;
}

namespace {

void rotate_part(std::vector<Vec3>& points, std::vector<Vec3>& normals, std::vector<Eigen::Vector4d>& sdf, Pose& pose,
                 const Mat3& r) {
  for (Vec3& p : points) p = r * p;
  for (Vec3& n : normals) n = r * n;
  for (auto& rec : sdf) rec.head<3>() = r * rec.head<3>();
  pose = Pose::from_rotation(pose.rotation() * r.transpose(), pose.translation);
}

}  // namespace

std::vector<TrainPair> randomly_posed(const std::vector<TrainPair>& pairs, std::uint64_t seed) {
  std::vector<TrainPair> out = pairs;
  for (std::size_t i = 0; i < out.size(); ++i) {
    cut::Rng rng(mix(seed, i, 3));
    const auto [ra, rb] = cut::random_pose_pair(rng);
    rotate_part(out[i].points_a, out[i].normals_a, out[i].sdf_a, out[i].pose_a, ra.rotation());
    rotate_part(out[i].points_b, out[i].normals_b, out[i].sdf_b, out[i].pose_b, rb.rotation());
  }
  return out;
}

std::vector<TrainPair> toy_pairs(int count, int points_per_part, std::uint64_t seed, cut::CutFamily family) {
  if (count < 1) throw ContractViolation("toy_pairs needs a positive count");
  const std::vector<mesh::TriMesh> meshes{mesh::make_cube(), mesh::make_icosphere(3), mesh::make_torus()};
  std::vector<mesh::Bvh> bvhs;
  for (const auto& m : meshes) bvhs.emplace_back(m);
  cut::GeneratorOptions options;
  options.dense_points = 20000;
  options.sdf_samples = 4000;
  options.volume_samples = 10000;
  cut::Rng rng(seed);
  std::vector<TrainPair> out;
  for (int i = 0; i < count; ++i) {
    const std::size_t m = static_cast<std::size_t>(i) % meshes.size();
    for (int attempt = 0;; ++attempt) {
      try {
        const auto spec = cut::sample_cut_spec(family, rng);
        const auto record = cut::generate_solid_pair(meshes[m], bvhs[m], spec, rng, options);
        out.push_back(to_train_pair(record, points_per_part, static_cast<std::uint64_t>(i), std::to_string(i)));
        break;
      } catch (const NoValidCut&) {
        if (attempt >= 16) throw;
      } catch (const DegenerateInput&) {
        if (attempt >= 16) throw;
      }
    }
  }
  return out;
}

std::vector<TrainPair> load_split(const fs::path& root, const data::DatasetManifest& manifest, data::Split split,
                                  int points_per_part, std::uint64_t seed) {
  std::vector<TrainPair> out;
  for (const auto* e : manifest.in_split(split)) {
    out.push_back(to_train_pair(data::read_pair(root, e->id), points_per_part, mix(seed, e->seed, 7), e->id));
  }
  return out;
}

Batch make_batch(const std::vector<TrainPair>& data, const std::vector<int>& indices, const TrainConfig& config,
                 std::uint64_t stream_seed) {
  const int pairs = static_cast<int>(indices.size());
  if (pairs == 0) throw ContractViolation("empty batch");
  const int n = config.points_per_part;
  const int q = config.sdf_queries;
  std::mt19937_64 rng(stream_seed);

  Batch b;
  b.pairs = pairs;
  b.points_per_part = n;
  std::vector<std::vector<Vec3>> clouds(2 * pairs);
  std::vector<Pose> gt(2 * pairs);
  b.sdf_queries = Tensor({2 * pairs * q, 3});
  b.sdf_targets = Tensor({2 * pairs * q, 1});
  b.sdf_rows.resize(static_cast<std::size_t>(2 * pairs) * q);

  for (int i = 0; i < pairs; ++i) {
    const TrainPair& p = data.at(indices[i]);
    for (int side = 0; side < 2; ++side) {
      const auto& pts = side == 0 ? p.points_a : p.points_b;
      const auto& sdf = side == 0 ? p.sdf_a : p.sdf_b;
      const Pose& pose = side == 0 ? p.pose_a : p.pose_b;
      if (static_cast<int>(pts.size()) != n) throw ContractViolation("pair " + p.id + " has the wrong cloud size");
      if (sdf.empty()) throw ContractViolation("pair " + p.id + " has no SDF samples");
      const int row = side * pairs + i;
      Mat3 r_in = Mat3::Identity();
      if (config.augment_rotations) r_in = Pose{cut::random_unit_quaternion(rng), Vec3::Zero()}.rotation();
      auto& cloud = clouds[row];
      cloud.reserve(n);
      for (const Vec3& x : pts) cloud.push_back(r_in * x);
      if (config.noise_sigma > 0.0) {
        std::normal_distribution<double> noise(0.0, config.noise_sigma);
        for (Vec3& x : cloud) {
          for (int a = 0; a < 3; ++a) x[a] += noise(rng);
        }
      }
      gt[row] = Pose::from_rotation(pose.rotation() * r_in.transpose(), pose.translation);
      std::uniform_int_distribution<std::size_t> pick(0, sdf.size() - 1);
      for (int j = 0; j < q; ++j) {
        const auto& rec = sdf[pick(rng)];
        const int r = row * q + j;
        const Vec3 x = r_in * rec.head<3>();
        for (int a = 0; a < 3; ++a) b.sdf_queries(r, a) = x[a];
        b.sdf_targets(r, 0) = rec[3];
        b.sdf_rows[r] = row;
      }
    }
  }
  b.clouds = nsm::make_cloud_batch(clouds, config.model.k);
  b.gt_rotation = nsm::rotation_rows(gt);
  b.gt_translation = nsm::translation_rows(gt);

  b.gt_assembled = Tensor({2 * pairs * n, 3});
  b.pair_order.reserve(static_cast<std::size_t>(2 * pairs) * n);
  int out_row = 0;
  for (int i = 0; i < pairs; ++i) {
    for (int side = 0; side < 2; ++side) {
      const int row = side * pairs + i;
      const Mat3 r = gt[row].rotation();
      for (int j = 0; j < n; ++j, ++out_row) {
        const Vec3 x = r * clouds[row][j] + gt[row].translation;
        for (int a = 0; a < 3; ++a) b.gt_assembled(out_row, a) = x[a];
        b.pair_order.push_back(row * n + j);
      }
    }
  }
  return b;
}

std::vector<eval::PairPoses> predict_poses(nsm::NsmModel& model, const std::vector<TrainPair>& pairs, int chunk) {
  std::vector<eval::PairPoses> out;
  out.reserve(pairs.size());
  for (std::size_t start = 0; start < pairs.size(); start += chunk) {
    const std::size_t end = std::min(pairs.size(), start + chunk);
    const int count = static_cast<int>(end - start);
    std::vector<std::vector<Vec3>> clouds;
    for (std::size_t i = start; i < end; ++i) clouds.push_back(pairs[i].points_a);
    for (std::size_t i = start; i < end; ++i) clouds.push_back(pairs[i].points_b);
    const nsm::CloudBatch batch = nsm::make_cloud_batch(clouds, model.config().k);
    ad::Tape tape;
    nsm::Scope scope(tape, model.params(), ad::NormMode::Eval, true);
    const auto g = model.generator(scope, batch);
    for (int i = 0; i < count; ++i) out.push_back({nsm::pose_at(g.poses, i), nsm::pose_at(g.poses, count + i)});
  }
  return out;
}

eval::MetricsRecord evaluate(nsm::NsmModel& model, const std::vector<TrainPair>& pairs, std::string method,
                             std::string experiment) {
  std::vector<eval::PairPoses> gt;
  for (const auto& p : pairs) gt.push_back(p.gt());
  return eval::compute_metrics(predict_poses(model, pairs), gt, std::move(method), std::move(experiment));
}

void save_model(const nsm::NsmModel& model, const fs::path& prefix) {
  const json meta = {{"kind", "nsm-model"}, {"model", json::parse(nsm::to_json(model.config()))}};
  ad::save_checkpoint(prefix, ad::snapshot(model.params(), "model/"), meta.dump());
}

nsm::NsmModel load_model(const fs::path& prefix) {
  std::string meta_text;
  const auto tensors = ad::load_checkpoint(prefix, &meta_text);
  json meta;
  try {
    meta = json::parse(meta_text);
  } catch (const json::exception& e) {
    throw IoError("checkpoint metadata is not JSON: " + std::string(e.what()));
  }
  if (!meta.contains("model")) throw IoError("checkpoint " + prefix.string() + " has no model config");
  nsm::NsmModel model(nsm::model_config_from_json(meta.at("model").dump()));
  ad::restore(model.params(), tensors, "model/");
  return model;
}

namespace {

ad::AdamOptions adam_options(const TrainConfig& c) {
  ad::AdamOptions o;
  o.lr = c.lr;
  o.weight_decay = c.weight_decay;
  o.lr_decay = c.lr_decay;
  return o;
}

void check_finite(double value, const char* what, long step) {
  if (!std::isfinite(value)) {
    throw TrainingDivergence(std::string(what) + " is not finite at step " + std::to_string(step));
  }
}

}  // namespace

namespace {

TrainConfig validated(TrainConfig c) {
  c.validate();
  return c;
}

}  // namespace

Trainer::Trainer(TrainConfig config, std::vector<TrainPair> train, std::vector<TrainPair> val)
    : config_(validated(std::move(config))),
      train_(std::move(train)),
      val_(std::move(val)),
      model_(config_.model, config_.seed),
      gen_opt_(model_.params().trainable("gen/"), adam_options(config_)),
      disc_opt_(model_.params().trainable("disc/"), adam_options(config_)) {
  if (train_.empty()) throw ContractViolation("training set is empty");
}

long Trainer::total_steps() const {
  if (config_.epochs > 0) {
    const long per_epoch = (static_cast<long>(train_.size()) + config_.batch_size - 1) / config_.batch_size;
    return config_.epochs * per_epoch;
  }
  return config_.steps;
}

Batch Trainer::batch_for_step(long step) const {
  const int n = static_cast<int>(train_.size());
  const int bs = std::min(config_.batch_size, n);
  const long per_epoch = (n + bs - 1) / bs;
  const long epoch = step / per_epoch, chunk = step % per_epoch;
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 shuffle_rng(mix(config_.seed, static_cast<std::uint64_t>(epoch), 1));
  std::shuffle(order.begin(), order.end(), shuffle_rng);
  // The last chunk of an epoch is topped up from the front so every batch has bs pairs.
  std::vector<int> idx;
  for (int i = 0; i < bs; ++i) idx.push_back(order[(chunk * bs + i) % n]);
  return make_batch(train_, idx, config_, mix(config_.seed, static_cast<std::uint64_t>(step), 2));
}

StepLosses Trainer::train_generator_step(const Batch& batch) {
  ad::Tape tape;
  nsm::Scope gen(tape, model_.params(), ad::NormMode::Train, false);
  nsm::Scope disc(tape, model_.params(), ad::NormMode::Train, true);
  const nsm::GeneratorOutput out = model_.generator(gen, batch.clouds);

  const Var l_pose = nsm::loss_pose(out.poses, batch.gt_rotation, batch.gt_translation);

  const Var points = tape.constant(batch.clouds.points);
  const Var posed = ad::rigid_apply(points, out.poses.rotation, out.poses.translation, batch.points_per_part);
  const Var assembled = ad::gather_rows(posed, batch.pair_order);
  const std::vector<int> sizes(batch.pairs, 2 * batch.points_per_part);
  const nsm::CloudBatch disc_batch = nsm::make_cloud_batch(assembled.value(), sizes, config_.model.k);
  const Var l_g = nsm::loss_generator(model_.discriminate(disc, assembled, disc_batch));

  const Var sdf = model_.sdf(gen, out.global_f, batch.sdf_rows, tape.constant(batch.sdf_queries));
  const Var l_sdf = nsm::loss_sdf(sdf, tape.constant(batch.sdf_targets), batch.pairs);

  const Var total = ad::add(ad::add(ad::scale(l_pose, config_.lambda_pose), ad::scale(l_g, config_.lambda_g)),
                            ad::scale(l_sdf, config_.lambda_sdf));
  StepLosses losses{l_pose.value().item(), l_g.value().item(), l_sdf.value().item(), total.value().item()};
  check_finite(losses.pose, "L_pose", step_);
  check_finite(losses.g, "L_G", step_);
  check_finite(losses.sdf, "L_SDF", step_);

  gen_opt_.zero_grad();
  tape.backward(total);
  gen_opt_.step();
  last_prediction_ = assembled.value();
  return losses;
}

double Trainer::train_discriminator_step(const Batch& batch) {
  if (last_prediction_.empty()) throw ContractViolation("discriminator step needs a generator prediction first");
  const int rows = batch.pairs * 2 * batch.points_per_part;
  if (last_prediction_.rows() != rows) throw ContractViolation("generator prediction does not match the batch");
  Tensor stacked({2 * rows, 3});
  std::copy(last_prediction_.data.begin(), last_prediction_.data.end(), stacked.data.begin());
  std::copy(batch.gt_assembled.data.begin(), batch.gt_assembled.data.end(), stacked.data.begin() + 3 * rows);
  const std::vector<int> sizes(2 * batch.pairs, 2 * batch.points_per_part);
  const nsm::CloudBatch disc_batch = nsm::make_cloud_batch(stacked, sizes, config_.model.k);

  ad::Tape tape;
  nsm::Scope disc(tape, model_.params(), ad::NormMode::Train, false);
  const Var scores = model_.discriminate(disc, tape.constant(stacked), disc_batch);
  const Var l_adv = nsm::loss_adversarial(ad::slice_rows(scores, 0, batch.pairs),
                                          ad::slice_rows(scores, batch.pairs, 2 * batch.pairs));
  const double value = l_adv.value().item();
  check_finite(value, "L_adv", step_);
  disc_opt_.zero_grad();
  tape.backward(l_adv);
  disc_opt_.step();
  return value;
}

TraceRow Trainer::step() {
  const Batch batch = batch_for_step(step_);
  TraceRow row;
  const StepLosses l = train_generator_step(batch);
  row.l_pose = l.pose;
  row.l_g = l.g;
  row.l_sdf = l.sdf;
  if ((step_ + 1) % config_.gen_steps_per_disc == 0) {
    row.l_adv = train_discriminator_step(batch);
  } else {
    row.l_adv = std::nan("");
  }
  ++step_;
  row.step = step_;
  return row;
}

void Trainer::save(const fs::path& prefix) const {
  auto tensors = ad::snapshot(model_.params(), "model/");
  tensors.merge(gen_opt_.state("opt_g/"));
  tensors.merge(disc_opt_.state("opt_d/"));
  tensors.emplace("trainer/last_prediction", last_prediction_.empty() ? Tensor({0, 3}) : last_prediction_);
  const json meta = {{"kind", "nsm-trainer"},
                     {"model", json::parse(nsm::to_json(config_.model))},
                     {"config", json::parse(to_json(config_))},
                     {"step", step_},
                     {"best_val", best_val_},
                     {"best_step", best_step_}};
  ad::save_checkpoint(prefix, tensors, meta.dump());
}

void Trainer::load(const fs::path& prefix) {
  std::string meta_text;
  const auto tensors = ad::load_checkpoint(prefix, &meta_text);
  json meta;
  try {
    meta = json::parse(meta_text);
    if (meta.at("kind") != "nsm-trainer") throw IoError(prefix.string() + " is not a trainer checkpoint");
    if (json::parse(nsm::to_json(config_.model)) != meta.at("model")) {
      throw IoError("checkpoint model config differs from the training config");
    }
    step_ = meta.at("step").get<long>();
    best_val_ = meta.value("best_val", -1.0);
    best_step_ = meta.value("best_step", -1L);
  } catch (const json::exception& e) {
    throw IoError("bad trainer checkpoint metadata: " + std::string(e.what()));
  }
  ad::restore(model_.params(), tensors, "model/");
  gen_opt_.load_state(tensors, "opt_g/");
  disc_opt_.load_state(tensors, "opt_d/");
  const auto it = tensors.find("trainer/last_prediction");
  last_prediction_ = it == tensors.end() || it->second.data.empty() ? Tensor() : it->second;
}

std::string trace_header() { return "step,L_pose,L_G,L_adv,L_SDF,val_MAE_R,val_MAE_T,val_geodesic_MAE"; }

std::string trace_line(const TraceRow& r) {
  std::ostringstream out;
  out.precision(17);
  out << r.step << ',' << r.l_pose << ',' << r.l_g << ',';
  if (std::isfinite(r.l_adv)) out << r.l_adv;
  out << ',' << r.l_sdf << ',';
  if (r.val) out << r.val->mae_r << ',' << r.val->mae_t << ',' << r.val->geodesic_mae;
  else out << ",,";
  return out.str();
}

FitResult Trainer::fit(const fs::path& out) {
  fs::create_directories(out);
  const fs::path trace_path = out / "trace.csv";
  std::vector<std::string> kept;
  if (fs::exists(out / "last.json")) {
    load(out / "last");
    std::ifstream old(trace_path);
    std::string line;
    std::getline(old, line);
    while (std::getline(old, line)) {
      if (!line.empty() && std::stol(line.substr(0, line.find(','))) <= step_) kept.push_back(line);
    }
  }
  std::ofstream trace(trace_path, std::ios::trunc);
  if (!trace) throw IoError("cannot write " + trace_path.string());
  trace << trace_header() << '\n';
  for (const auto& line : kept) trace << line << '\n';

  FitResult result;
  const long total = total_steps();
  while (step_ < total) {
    TraceRow row = step();
    const bool last = step_ == total;
    if (!val_.empty() && config_.val_interval > 0 && (step_ % config_.val_interval == 0 || last)) {
      row.val = evaluate(model_, val_, "nsm", "val");
      if (best_step_ < 0 || row.val->mae_r < best_val_) {
        best_val_ = row.val->mae_r;
        best_step_ = step_;
        result.best_val = row.val;
        save_model(model_, out / "best");
      }
    }
    trace << trace_line(row) << '\n' << std::flush;
    if ((config_.checkpoint_interval > 0 && step_ % config_.checkpoint_interval == 0) || last) save(out / "last");
    result.trace.push_back(std::move(row));
  }
  if (val_.empty()) save_model(model_, out / "best");
  save_model(model_, out / "final");
  result.steps = step_;
  result.best_step = best_step_;
  return result;
}

}  // namespace gsm::train

// Acceptance suite. Prints one PASS/FAIL line per criterion and exits nonzero if any fails.
//
//   acceptance [--out DIR] [N ...]
//
// With criterion numbers only those run. DIR receives the toy training traces.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "gradcheck.hpp"
#include "metrics_oracle.hpp"
#include "oracles.hpp"
#include "primitive_cases.hpp"
#include "gsm/cut/generator.hpp"
#include "gsm/data/dataset.hpp"
#include "gsm/error.hpp"
#include "gsm/eval/metrics.hpp"
#include "gsm/mesh/bvh.hpp"
#include "gsm/mesh/primitives.hpp"
#include "gsm/mesh/sampling.hpp"
#include "gsm/nsm/model.hpp"
#include "gsm/reg/registration.hpp"
#include "gsm/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace gsm;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

fs::path g_out;

Vec3 uniform_point(std::mt19937_64& rng, double half) {
  std::uniform_real_distribution<double> u(-half, half);
  const double x = u(rng), y = u(rng), z = u(rng);
  return {x, y, z};
}

std::vector<mesh::TriMesh> test_meshes() {
  return {mesh::make_cube(), mesh::normalize_mesh(mesh::make_icosphere(3)), mesh::normalize_mesh(mesh::make_torus())};
}

// 1
Outcome winding_vs_ray_parity() {
  int total = 0, agree = 0;
  double winding_seconds = 0.0;
  for (const mesh::TriMesh& m : test_meshes()) {
    const mesh::Bvh bvh(m);
    std::mt19937_64 rng(101);
    std::vector<Vec3> pts(10000);
    for (Vec3& p : pts) p = uniform_point(rng, 0.6);
    std::vector<char> inside(pts.size());
    const auto t0 = Clock::now();
    for (std::size_t i = 0; i < pts.size(); ++i) inside[i] = mesh::winding_number(bvh, pts[i]) > 0.5;
    winding_seconds += seconds_since(t0);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      agree += (inside[i] != 0) == testing::ray_parity_inside(m, pts[i], rng) ? 1 : 0;
      ++total;
    }
  }
  const double rate = static_cast<double>(agree) / total;
  return {rate >= 0.999 && winding_seconds < 10.0,
          fmt("agreement %.5f over %d points, winding time %.2f s", rate, total, winding_seconds)};
}

// 2
Outcome sdf_vs_brute_force() {
  double worst = 0.0;
  int n = 0;
  for (const mesh::TriMesh& m : {mesh::make_cube(), mesh::make_icosphere(3), mesh::make_torus()}) {
    const mesh::Bvh bvh(m);
    std::mt19937_64 rng(202);
    for (int i = 0; i < 1000; ++i, ++n) {
      const Vec3 p = uniform_point(rng, 1.0);
      worst = std::max(worst, std::abs(std::abs(mesh::signed_distance(m, bvh, p)) - testing::brute_force_distance(m, p)));
    }
  }
  return {worst <= 1e-9, fmt("max |d - d_ref| = %.3g over %d queries", worst, n)};
}

cut::GeneratorOptions quick_options() {
  cut::GeneratorOptions o;
  o.points_per_part = 256;
  o.dense_points = 2000;
  o.sdf_samples = 200;
  o.volume_samples = 10000;
  return o;
}

struct GeneratedPairs {
  std::vector<cut::ShapePairRecord> records;
  std::vector<int> mesh_index;
};

const std::vector<mesh::TriMesh>& generator_meshes() {
  static const std::vector<mesh::TriMesh> meshes = test_meshes();
  return meshes;
}

const std::vector<mesh::Bvh>& generator_bvhs() {
  static const std::vector<mesh::Bvh> bvhs = [] {
    std::vector<mesh::Bvh> out;
    for (const auto& m : generator_meshes()) out.emplace_back(m);
    return out;
  }();
  return bvhs;
}

// Fifty accepted solid draws over (mesh, family), then ten shell draws.
const GeneratedPairs& generated_pairs() {
  static const GeneratedPairs pairs = [] {
    GeneratedPairs g;
    const auto families = cut::all_cut_families();
    int accepted = 0;
    for (int draw = 0; accepted < 50 && draw < 200; ++draw) {
      cut::Rng rng(3000 + draw);
      const int mi = draw % 3;
      const cut::CutFamily family = families[(draw / 3) % families.size()];
      try {
        g.records.push_back(cut::generate_solid_pair(generator_meshes()[mi], generator_bvhs()[mi],
                                                     cut::sample_cut_spec(family, rng), rng, quick_options()));
        g.mesh_index.push_back(mi);
        ++accepted;
      } catch (const NoValidCut&) {
      }
    }
    for (int draw = 0, shells = 0; shells < 10 && draw < 40; ++draw) {
      cut::Rng rng(4000 + draw);
      const int mi = draw % 3;
      try {
        g.records.push_back(cut::generate_shell_pair(generator_meshes()[mi], generator_bvhs()[mi],
                                                     cut::sample_cut_spec(families[draw % families.size()], rng),
                                                     rng, quick_options()));
        g.mesh_index.push_back(mi);
        ++shells;
      } catch (const NoValidCut&) {
      }
    }
    return g;
  }();
  return pairs;
}

// 3. Each side is counted with its own membership predicate on a fresh sample set, so the
// sum only reaches one if the two parts partition the region.
Outcome cut_conservation() {
  const auto& g = generated_pairs();
  int solids = 0, conserved = 0, in_range = 0;
  double worst_z = 0.0;
  for (std::size_t i = 0; i < g.records.size(); ++i) {
    const auto& r = g.records[i];
    if (r.meta.shape != cut::ShapeType::Solid) continue;
    ++solids;
    const auto& m = generator_meshes()[g.mesh_index[i]];
    const auto& bvh = generator_bvhs()[g.mesh_index[i]];
    const cut::PartPredicate pa{&m, &bvh, r.meta.spec, cut::Side::A, cut::ShapeType::Solid, 0.05};
    const cut::PartPredicate pb{&m, &bvh, r.meta.spec, cut::Side::B, cut::ShapeType::Solid, 0.05};
    std::mt19937_64 rng(5000 + i);
    const mesh::Box3 box = m.bounding_box();
    std::uniform_real_distribution<double> ux(box.min().x(), box.max().x()), uy(box.min().y(), box.max().y()),
        uz(box.min().z(), box.max().z());
    long region = 0, in_a = 0, in_b = 0;
    for (int s = 0; s < 20000; ++s) {
      const double x = ux(rng), y = uy(rng), z = uz(rng);
      const Vec3 p(x, y, z);
      region += mesh::is_inside(bvh, p) ? 1 : 0;
      in_a += pa.contains(p) ? 1 : 0;
      in_b += pb.contains(p) ? 1 : 0;
    }
    const double fa = static_cast<double>(in_a) / region, fb = static_cast<double>(in_b) / region;
    const double se = std::sqrt(std::max(fa * (1 - fa), 0.25 / region) / region);
    const double z = std::abs(fa + fb - 1.0) / se;
    worst_z = std::max(worst_z, z);
    conserved += z <= 2.0 ? 1 : 0;
    in_range += r.meta.volume_ratio >= 0.25 && r.meta.volume_ratio <= 0.75 ? 1 : 0;
  }
  return {solids == 50 && conserved == solids && in_range == solids,
          fmt("%d draws, %d conserved (worst |sum-1|/SE = %.3f), %d accepted ratios in [0.25, 0.75]", solids,
              conserved, worst_z, in_range)};
}

// 4
Outcome spherical_cap() {
  const mesh::TriMesh sphere = mesh::normalize_mesh(mesh::make_icosphere(3));
  const mesh::Bvh bvh(sphere);
  cut::Rng rng(404);
  const double r = sphere.vertices().front().norm(), c = 0.2;
  const double h = r - c;
  const double expected = M_PI * h * h * (3 * r - h) / 3.0 / (4.0 / 3.0 * M_PI * r * r * r);
  const cut::VolumeRatio v =
      cut::volume_ratio(sphere, bvh, cut::CutSpec{cut::CutFamily::Planar, {{"a", 0.0}, {"b", 0.0}, {"c", c}}},
                        40000, rng);
  return {std::abs(v.side_a - expected) <= 0.02,
          fmt("estimate %.4f, closed form %.4f (radius %.4f)", v.side_a, expected, r)};
}

// 5
Outcome reassembly_residual() {
  const auto& g = generated_pairs();
  double worst = 0.0;
  std::size_t points = 0;
  for (const auto& r : g.records) {
    const auto out = nsm::assemble(r.part_a.points, r.part_b.points, r.pose_a, r.pose_b);
    if (out.size() != r.assembled_a.size() + r.assembled_b.size()) return {false, "assembled size mismatch"};
    for (std::size_t i = 0; i < out.size(); ++i) {
      const Vec3& ref = i < r.assembled_a.size() ? r.assembled_a[i] : r.assembled_b[i - r.assembled_a.size()];
      worst = std::max(worst, (out[i] - ref).norm());
    }
    points += out.size();
  }
  return {worst < 1e-9 && !g.records.empty(),
          fmt("max residual %.3g over %zu pairs (%zu points)", worst, g.records.size(), points)};
}

double rotation_angle(const Mat3& r) { return Eigen::AngleAxisd(r).angle(); }

// 6
Outcome kabsch_recovery() {
  std::mt19937_64 rng(606);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_int_distribution<int> size(3, 200);
  double worst_r = 0.0, worst_t = 0.0;
  for (int i = 0; i < 1000; ++i) {
    std::vector<Vec3> src(size(rng));
    for (Vec3& p : src) p = Vec3(g(rng), g(rng), g(rng));
    const Mat3 rot = testing::random_rotation(rng);
    const Vec3 t(g(rng), g(rng), g(rng));
    std::vector<Vec3> dst;
    for (const Vec3& p : src) dst.push_back(rot * p + t);
    const reg::RigidTransform est = reg::kabsch(src, dst);
    worst_r = std::max(worst_r, rotation_angle(est.rotation.transpose() * rot));
    worst_t = std::max(worst_t, (est.translation - t).norm());
  }
  return {worst_r < 1e-7 && worst_t < 1e-9,
          fmt("1000 instances, max rotation error %.3g rad, max translation error %.3g", worst_r, worst_t)};
}

// 7
Outcome icp_recovery() {
  // Box with distinct side lengths, so only half turns are symmetries.
  const mesh::TriMesh cube = mesh::make_cube();
  std::vector<Vec3> v = cube.vertices();
  for (Vec3& p : v) p = p.cwiseProduct(Vec3(1.0, 0.7, 0.4));
  const mesh::TriMesh box(v, cube.faces());
  std::mt19937_64 rng(707);
  std::normal_distribution<double> g(0.0, 1.0);
  double worst_deg = 0.0;
  int monotone = 0, runs = 20;
  for (int run = 0; run < runs; ++run) {
    std::vector<Vec3> dst;
    for (const auto& s : mesh::sample_surface(box, 1000, rng)) dst.push_back(s.position);
    const Vec3 axis = Vec3(g(rng), g(rng), g(rng)).normalized();
    const Vec3 shift = Vec3(g(rng), g(rng), g(rng)).normalized() * 0.02;
    const reg::RigidTransform perturb{testing::axis_rotation(axis, 5.0), shift};
    std::vector<Vec3> src;
    for (const Vec3& p : dst) src.push_back(perturb.apply(p));
    reg::IcpOptions o;
    o.max_iters = 50;
    const reg::IcpResult r = reg::icp(src, dst, o);
    worst_deg = std::max(worst_deg, rotation_angle(r.transform.rotation * perturb.rotation) * 180.0 / M_PI);
    bool ok = true;
    for (std::size_t k = 1; k < r.objective.size(); ++k) ok = ok && r.objective[k] <= r.objective[k - 1] * (1 + 1e-12);
    monotone += ok ? 1 : 0;
  }
  return {worst_deg < 0.1 && monotone == runs,
          fmt("%d runs, max rotation error %.4f deg, %d/%d monotone objectives", runs, worst_deg, monotone, runs)};
}

// 8
double param_gradcheck(ad::ParameterSet& params, const std::function<ad::Var(ad::Tape&)>& loss_fn,
                       std::size_t per_param, double h, std::size_t* checked) {
  // Perturbed evaluations replay the branch choices of the unperturbed pass (activation
  // sides, max arguments), so each difference quotient stays on the piece being
  // differentiated; the kNN graphs are held fixed by the caller in the same spirit.
  params.zero_grad();
  ad::BranchLog branches;
  {
    ad::Tape tape;
    tape.record_branches(&branches);
    tape.backward(loss_fn(tape));
  }
  std::mt19937 rng(8);
  double worst = 0.0;
  for (auto* p : params.trainable("")) {
    const ad::Tensor grad = p->grad;
    std::vector<std::size_t> idx(p->value.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    if (idx.size() > per_param) idx.resize(per_param);
    for (std::size_t i : idx) {
      const double saved = p->value.data[i];
      p->value.data[i] = saved + h;
      ad::Tape tp;
      tp.replay_branches(&branches);
      const double up = loss_fn(tp).value().item();
      p->value.data[i] = saved - h;
      ad::Tape tm;
      tm.replay_branches(&branches);
      const double down = loss_fn(tm).value().item();
      p->value.data[i] = saved;
      const double analytic = grad.data.empty() ? 0.0 : grad.data[i];
      worst = std::max(worst, testing::relative_error(analytic, (up - down) / (2 * h)));
      ++*checked;
    }
  }
  return worst;
}

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  double worst_primitive = 0.0;
  std::string worst_name;
  std::size_t primitive_entries = 0;
  for (const auto& c : testing::primitive_cases()) {
    const auto r = testing::check_gradients(c.fn, c.inputs);
    primitive_entries += r.checked;
    if (r.max_rel_error >= worst_primitive) {
      worst_primitive = r.max_rel_error;
      worst_name = c.name;
    }
  }

  // Whole generator objective on the small model, batch statistics without running updates.
  train::TrainConfig cfg;
  cfg.model = nsm::ModelConfig::gradcheck();
  cfg.points_per_part = 32;
  cfg.sdf_queries = 16;
  cfg.batch_size = 2;
  const auto pairs = train::randomly_posed(train::toy_pairs(2, 32, 8), 8);
  const train::Batch batch = train::make_batch(pairs, {0, 1}, cfg, 8);
  nsm::NsmModel model(cfg.model, 8);
  ad::Tensor assembled_values;
  {
    ad::Tape tape;
    nsm::Scope gen(tape, model.params(), ad::NormMode::TrainFrozen);
    const auto out = model.generator(gen, batch.clouds);
    const ad::Var posed = ad::rigid_apply(tape.constant(batch.clouds.points), out.poses.rotation,
                                          out.poses.translation, batch.points_per_part);
    assembled_values = ad::gather_rows(posed, batch.pair_order).value();
  }
  // The discriminator graph is fixed from the unperturbed prediction.
  const nsm::CloudBatch disc_batch =
      nsm::make_cloud_batch(assembled_values, std::vector<int>(batch.pairs, 2 * batch.points_per_part), cfg.model.k);
  auto loss = [&](ad::Tape& tape) {
    nsm::Scope scope(tape, model.params(), ad::NormMode::TrainFrozen);
    const auto out = model.generator(scope, batch.clouds);
    const ad::Var l_pose = nsm::loss_pose(out.poses, batch.gt_rotation, batch.gt_translation);
    const ad::Var posed = ad::rigid_apply(tape.constant(batch.clouds.points), out.poses.rotation,
                                          out.poses.translation, batch.points_per_part);
    const ad::Var assembled = ad::gather_rows(posed, batch.pair_order);
    const ad::Var l_g = nsm::loss_generator(model.discriminate(scope, assembled, disc_batch));
    const ad::Var sdf = model.sdf(scope, out.global_f, batch.sdf_rows, tape.constant(batch.sdf_queries));
    const ad::Var l_sdf = nsm::loss_sdf(sdf, tape.constant(batch.sdf_targets), batch.pairs);
    return ad::add(ad::add(l_pose, l_g), l_sdf);
  };
  std::size_t model_entries = 0;
  const double worst_model = param_gradcheck(model.params(), loss, 6, 1e-4, &model_entries);
  const double secs = seconds_since(t0);
  return {std::max(worst_primitive, worst_model) < 1e-4 && secs < 60.0,
          fmt("primitives: max rel err %.2e (%s) over %zu entries; end-to-end: max rel err %.2e over %zu "
              "parameter entries; %.1f s",
              worst_primitive, worst_name.c_str(), primitive_entries, worst_model, model_entries, secs)};
}

// 9
Outcome swap_symmetry() {
  nsm::NsmModel model(nsm::ModelConfig::full(), 909);
  std::mt19937_64 rng(909);
  std::uniform_int_distribution<int> size(64, 256);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  int exact = 0;
  for (int i = 0; i < 20; ++i) {
    std::vector<Vec3> a(size(rng)), b(size(rng));
    for (Vec3& p : a) p = Vec3(u(rng), u(rng), u(rng));
    for (Vec3& p : b) p = Vec3(u(rng), u(rng), u(rng));
    const auto [pa, pb] = model.predict(a, b);
    const auto [qb, qa] = model.predict(b, a);
    exact += pa.quaternion == qa.quaternion && pa.translation == qa.translation && pb.quaternion == qb.quaternion &&
                     pb.translation == qb.translation
                 ? 1
                 : 0;
  }
  return {exact == 20, fmt("%d/20 swapped predictions bit-identical (full model)", exact)};
}

// 10, 11
train::TrainConfig toy_config() {
  train::TrainConfig c;
  c.model = nsm::ModelConfig::reduced();
  c.steps = 2000;
  c.batch_size = 4;
  c.points_per_part = 256;
  c.sdf_queries = 128;
  c.lr_decay = 2e-3;
  c.augment_rotations = false;
  c.seed = 0;
  c.val_interval = 50;
  c.checkpoint_interval = 500;
  return c;
}

const std::vector<train::TrainPair>& toy_set() {
  static const auto pairs = train::randomly_posed(train::toy_pairs(8, 256, 0), 0);
  return pairs;
}

struct ToyRun {
  eval::MetricsRecord final_metrics;
  long steps = 0;
  double seconds = 0.0;
};

ToyRun run_toy(const train::TrainConfig& cfg, const std::string& name) {
  const fs::path dir = g_out / name;
  fs::remove_all(dir);
  const auto t0 = Clock::now();
  train::Trainer trainer(cfg, toy_set(), toy_set());
  const train::FitResult fit = trainer.fit(dir);
  ToyRun r;
  r.final_metrics = train::evaluate(trainer.model(), toy_set());
  r.steps = fit.steps;
  r.seconds = seconds_since(t0);
  return r;
}

Outcome toy_overfit() {
  const ToyRun r = run_toy(toy_config(), "toy");
  const auto& m = r.final_metrics;
  return {m.mae_r < 10.0 && m.mae_t < 0.05 && r.steps <= 2000 && r.seconds < 1800.0,
          fmt("after %ld steps: MAE_R %.2f deg, MAE_T %.4f, geodesic %.2f deg; %.0f s; trace in %s", r.steps, m.mae_r,
              m.mae_t, m.geodesic_mae, r.seconds, (g_out / "toy" / "trace.csv").c_str())};
}

Outcome pose_loss_ablation() {
  train::TrainConfig cfg = toy_config();
  cfg.lambda_pose = 0.0;
  const ToyRun r = run_toy(cfg, "toy_no_pose_loss");
  const auto& m = r.final_metrics;
  return {m.mae_r > 45.0, fmt("without the pose loss after %ld steps: MAE_R %.2f deg, MAE_T %.4f", r.steps, m.mae_r,
                              m.mae_t)};
}

// 12
Outcome metrics_oracle() {
  std::mt19937_64 rng(1212);
  std::normal_distribution<double> g(0.0, 0.3);
  std::uniform_int_distribution<int> count(1, 20);
  double worst = 0.0, worst_root = 0.0;
  for (int set = 0; set < 100; ++set) {
    std::vector<eval::PairPoses> pred, gt;
    std::vector<Pose> flat_pred, flat_gt;
    const int n = count(rng);
    for (int i = 0; i < n; ++i) {
      eval::PairPoses p, q;
      p.a = Pose::from_rotation(testing::random_rotation(rng), Vec3(g(rng), g(rng), g(rng)));
      p.b = Pose::from_rotation(testing::random_rotation(rng), Vec3(g(rng), g(rng), g(rng)));
      q.a = Pose::from_rotation(testing::random_rotation(rng), Vec3(g(rng), g(rng), g(rng)));
      q.b = Pose::from_rotation(testing::random_rotation(rng), Vec3(g(rng), g(rng), g(rng)));
      pred.push_back(p);
      gt.push_back(q);
      flat_pred.insert(flat_pred.end(), {p.a, p.b});
      flat_gt.insert(flat_gt.end(), {q.a, q.b});
    }
    const eval::MetricsRecord m = eval::compute_metrics(pred, gt);
    const testing::ReferenceMetrics ref = testing::reference_metrics(flat_pred, flat_gt);
    const double pairs[][2] = {{m.mse_r, ref.mse_r}, {m.rmse_r, ref.rmse_r}, {m.mae_r, ref.mae_r},
                               {m.mse_t, ref.mse_t}, {m.rmse_t, ref.rmse_t}, {m.mae_t, ref.mae_t},
                               {m.geodesic_mae, ref.geodesic_mae}};
    for (const auto& pr : pairs) worst = std::max(worst, std::abs(pr[0] - pr[1]));
    worst_root = std::max({worst_root, std::abs(m.rmse_r - std::sqrt(m.mse_r)), std::abs(m.rmse_t - std::sqrt(m.mse_t))});
  }
  return {worst <= 1e-9 && worst_root <= 1e-12,
          fmt("100 sets: max deviation from the oracle %.3g, max |RMSE - sqrt(MSE)| %.3g", worst, worst_root)};
}

// 13
std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome dataset_io() {
  const fs::path root = fs::temp_directory_path() / ("gsm_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  const auto& g = generated_pairs();
  const char* files[] = {"points_a.f32le", "points_b.f32le", "normals_a.f32le", "normals_b.f32le",
                         "sdf_a.f32le",    "sdf_b.f32le",    "meta.json"};
  int exact = 0;
  for (int cycle = 0; cycle < 100; ++cycle) {
    const auto& rec = g.records[cycle % g.records.size()];
    const fs::path first = root / ("first" + std::to_string(cycle)), second = root / ("second" + std::to_string(cycle));
    const std::string id = data::write_pair(rec, first, "pair");
    const cut::ShapePairRecord back = data::read_pair(first, id);
    data::write_pair(back, second, id);
    bool same = back.pose_a.quaternion == rec.pose_a.quaternion && back.pose_b.translation == rec.pose_b.translation &&
                back.meta.spec.coefficients == rec.meta.spec.coefficients &&
                back.part_a.points.size() == rec.part_a.points.size();
    for (std::size_t i = 0; same && i < rec.part_a.points.size(); ++i) {
      for (int k = 0; k < 3; ++k) {
        same = same && static_cast<float>(back.part_a.points[i][k]) == static_cast<float>(rec.part_a.points[i][k]);
      }
    }
    for (const char* f : files) same = same && file_bytes(first / "pairs" / id / f) == file_bytes(second / "pairs" / id / f);
    exact += same ? 1 : 0;
    fs::remove_all(first);
    fs::remove_all(second);
  }
  fs::remove_all(root);

  data::DatasetManifest m;
  for (const std::string c : {"mug", "vase"}) {
    for (cut::CutFamily f : cut::all_cut_families()) {
      for (int i = 0; i < 10; ++i) {
        data::PairEntry e;
        e.category = c;
        e.family = f;
        e.id = c + "-" + std::string(cut::to_string(f)) + "-" + std::to_string(i);
        e.path = "pairs/" + e.id;
        m.entries.push_back(e);
      }
    }
  }
  const data::DatasetManifest s = data::make_splits(m, data::SplitSpec{});
  const std::size_t tr = s.in_split(data::Split::Train).size(), va = s.in_split(data::Split::Val).size(),
                    te = s.in_split(data::Split::Test).size();
  return {exact == 100 && tr == 80 && va == 10 && te == 10,
          fmt("%d/100 write/read/write cycles bit-exact; split of 100 pairs: %zu/%zu/%zu", exact, tr, va, te)};
}

struct Criterion {
  int number;
  const char* name;
  Outcome (*run)();
};

const Criterion kCriteria[] = {
    {1, "winding-number-inside-test", winding_vs_ray_parity},
    {2, "signed-distance-exact", sdf_vs_brute_force},
    {3, "cut-volume-conservation", cut_conservation},
    {4, "spherical-cap-ratio", spherical_cap},
    {5, "reassembly-residual", reassembly_residual},
    {6, "kabsch-recovery", kabsch_recovery},
    {7, "icp-recovery-and-monotonicity", icp_recovery},
    {8, "gradient-check", gradient_suite},
    {9, "swap-symmetry", swap_symmetry},
    {10, "toy-overfit", toy_overfit},
    {11, "pose-loss-ablation", pose_loss_ablation},
    {12, "metrics-oracle", metrics_oracle},
    {13, "dataset-round-trip-and-splits", dataset_io},
};

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  g_out = fs::current_path() / "acceptance_out";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--out" && i + 1 < argc) {
      g_out = argv[++i];
    } else {
      only.insert(std::atoi(a.c_str()));
    }
  }
  fs::create_directories(g_out);
  int failed = 0;
  for (const Criterion& c : kCriteria) {
    if (!only.empty() && !only.count(c.number)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::printf("%s %2d %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", c.number, c.name, o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}

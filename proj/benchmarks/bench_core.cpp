#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "gsm/ad/tape.hpp"
#include "gsm/cut/generator.hpp"
#include "gsm/mesh/bvh.hpp"
#include "gsm/mesh/point_index.hpp"
#include "gsm/mesh/primitives.hpp"
#include "gsm/mesh/sampling.hpp"
#include "gsm/nsm/model.hpp"
#include "gsm/reg/registration.hpp"
#include "gsm/train/trainer.hpp"

namespace {

using namespace gsm;

std::vector<Vec3> random_points(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.7, 0.7);
  std::vector<Vec3> out(n);
  for (auto& p : out) p = Vec3(u(rng), u(rng), u(rng));
  return out;
}

void BM_WindingNumber(benchmark::State& state) {
  const mesh::TriMesh m = mesh::make_torus();
  const mesh::Bvh bvh(m);
  const auto pts = random_points(1024, 1);
  std::size_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(mesh::winding_number(bvh, pts[i++ % pts.size()]));
}
BENCHMARK(BM_WindingNumber);

void BM_SignedDistance(benchmark::State& state) {
  const mesh::TriMesh m = mesh::make_icosphere(static_cast<int>(state.range(0)));
  const mesh::Bvh bvh(m);
  const auto pts = random_points(1024, 2);
  std::size_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(mesh::signed_distance(m, bvh, pts[i++ % pts.size()]));
  state.counters["faces"] = static_cast<double>(m.num_faces());
}
BENCHMARK(BM_SignedDistance)->Arg(2)->Arg(4);

void BM_Knn(benchmark::State& state) {
  const auto pts = random_points(static_cast<std::size_t>(state.range(0)), 3);
  const mesh::PointIndex index(pts);
  std::size_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(index.knn(pts[i++ % pts.size()], 20));
}
BENCHMARK(BM_Knn)->Arg(1024)->Arg(16384);

void BM_GenerateSolidPair(benchmark::State& state) {
  const mesh::TriMesh m = mesh::make_icosphere(3);
  const mesh::Bvh bvh(m);
  cut::GeneratorOptions o;
  o.dense_points = 10000;
  o.sdf_samples = 2000;
  o.volume_samples = 10000;
  cut::Rng rng(4);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        cut::generate_solid_pair(m, bvh, cut::sample_cut_spec(cut::CutFamily::Planar, rng), rng, o));
  }
}
BENCHMARK(BM_GenerateSolidPair)->Unit(benchmark::kMillisecond);

void BM_IcpPoint(benchmark::State& state) {
  const mesh::TriMesh m = mesh::make_torus();
  cut::Rng rng(5);
  std::vector<Vec3> dst;
  for (const auto& s : mesh::sample_surface(m, 1024, rng)) dst.push_back(s.position);
  const Mat3 r = Eigen::AngleAxisd(0.08, Vec3(1, 2, 3).normalized()).toRotationMatrix();
  std::vector<Vec3> src;
  for (const auto& p : dst) src.push_back(r * p + Vec3(0.01, -0.02, 0.0));
  for (auto _ : state) benchmark::DoNotOptimize(reg::icp(src, dst));
}
BENCHMARK(BM_IcpPoint)->Unit(benchmark::kMillisecond);

void BM_Kabsch(benchmark::State& state) {
  const auto a = random_points(1024, 6);
  const auto b = random_points(1024, 7);
  for (auto _ : state) benchmark::DoNotOptimize(reg::kabsch(a, b));
}
BENCHMARK(BM_Kabsch);

void BM_MatmulBackward(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g;
  ad::Tensor a({n, n}), b({n, n});
  for (auto& v : a.data) v = g(rng);
  for (auto& v : b.data) v = g(rng);
  for (auto _ : state) {
    ad::Tape tape;
    const ad::Var x = tape.variable(a), y = tape.variable(b);
    tape.backward(ad::sum(ad::matmul(x, y)));
    benchmark::DoNotOptimize(tape.grad(x).data.data());
  }
}
BENCHMARK(BM_MatmulBackward)->Arg(64)->Arg(256);

void BM_GeneratorForward(benchmark::State& state) {
  nsm::NsmModel model(nsm::ModelConfig::reduced(), 0);
  std::vector<std::vector<Vec3>> clouds;
  for (int c = 0; c < 8; ++c) clouds.push_back(random_points(256, 10 + c));
  const nsm::CloudBatch batch = nsm::make_cloud_batch(clouds, model.config().k);
  for (auto _ : state) {
    ad::Tape tape;
    nsm::Scope scope(tape, model.params(), ad::NormMode::Eval, true);
    benchmark::DoNotOptimize(model.generator(scope, batch).poses.rotation.value().data.data());
  }
}
BENCHMARK(BM_GeneratorForward)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  const auto pairs = train::randomly_posed(train::toy_pairs(4, 256, 0), 0);
  train::TrainConfig c;
  c.points_per_part = 256;
  c.sdf_queries = 128;
  train::Trainer trainer(c, pairs);
  for (auto _ : state) benchmark::DoNotOptimize(trainer.step());
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond)->Iterations(5);

}  // namespace

BENCHMARK_MAIN();

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "gsm/ad/optim.hpp"
#include "gsm/ad/tape.hpp"
#include "gsm/error.hpp"

namespace gsm::ad {
namespace {

using testing::check_gradients;
using testing::random_tensor;
using testing::weighted_sum;
using Fn = std::function<Var(Tape&, const std::vector<Var>&)>;

constexpr double kTol = 1e-5;

void expect_gradients(const Fn& f, std::vector<Tensor> inputs, double tol = kTol) {
  const auto r = check_gradients(f, std::move(inputs));
  EXPECT_GT(r.checked, 0u);
  EXPECT_LT(r.max_rel_error, tol);
}

class Primitive : public ::testing::Test {
 protected:
  std::mt19937_64 rng{7};
  Tensor rnd(std::vector<int> shape, double lo = -1.0, double hi = 1.0) { return random_tensor(shape, rng, lo, hi); }
};

TEST_F(Primitive, Matmul) {
  expect_gradients([](Tape& t, const auto& x) { return weighted_sum(t, matmul(x[0], x[1])); },
                   {rnd({4, 3}), rnd({3, 5})});
}

TEST_F(Primitive, Transpose) {
  expect_gradients([](Tape& t, const auto& x) { return weighted_sum(t, transpose(x[0])); }, {rnd({3, 4})});
}

TEST_F(Primitive, AddSubWithBroadcast) {
  expect_gradients([](Tape& t, const auto& x) { return weighted_sum(t, add(x[0], x[1])); },
                   {rnd({4, 3}), rnd({4, 3})});
  expect_gradients([](Tape& t, const auto& x) { return weighted_sum(t, add(x[0], x[1])); },
                   {rnd({4, 3}), rnd({1, 3})});
  expect_gradients([](Tape& t, const auto& x) { return weighted_sum(t, sub(x[0], x[1])); },
                   {rnd({4, 3}), rnd({1, 3})});
}

TEST_F(Primitive, ElementwiseMulScaleShift) {
  expect_gradients([](Tape& t, const auto& x) { return weighted_sum(t, mul(x[0], x[1])); },
                   {rnd({3, 3}), rnd({3, 3})});
  expect_gradients([](Tape& t, const auto& x) { return weighted_sum(t, add_scalar(scale(x[0], -2.5), 0.3)); },
                   {rnd({2, 5})});
}

TEST_F(Primitive, ConcatSliceReshapeGather) {
  expect_gradients([](Tape& t, const auto& x) { return weighted_sum(t, concat({x[0], x[1], x[0]}, 0)); },
                   {rnd({2, 3}), rnd({4, 3})});
  expect_gradients([](Tape& t, const auto& x) { return weighted_sum(t, concat({x[0], x[1]}, 1)); },
                   {rnd({3, 2}), rnd({3, 4})});
  expect_gradients([](Tape& t, const auto& x) { return weighted_sum(t, slice_rows(x[0], 1, 3)); }, {rnd({4, 3})});
  expect_gradients([](Tape& t, const auto& x) { return weighted_sum(t, slice_cols(x[0], 1, 4)); }, {rnd({3, 5})});
  expect_gradients([](Tape& t, const auto& x) { return weighted_sum(t, reshape(x[0], {3, 4})); }, {rnd({2, 6})});
  expect_gradients([](Tape& t, const auto& x) { return weighted_sum(t, gather_rows(x[0], {2, 0, 2, 1, 2})); },
                   {rnd({3, 4})});
}

TEST_F(Primitive, Activations) {
  // Inputs kept away from the kinks so central differences are valid.
  Tensor x = rnd({4, 5});
  for (double& v : x.data) v += v >= 0 ? 0.05 : -0.05;
  expect_gradients([](Tape& t, const auto& v) { return weighted_sum(t, relu(v[0])); }, {x});
  expect_gradients([](Tape& t, const auto& v) { return weighted_sum(t, leaky_relu(v[0])); }, {x});
  expect_gradients([](Tape& t, const auto& v) { return weighted_sum(t, abs(v[0])); }, {x});
  expect_gradients([](Tape& t, const auto& v) { return weighted_sum(t, sigmoid(v[0])); }, {rnd({4, 5}, -4, 4)});
}

TEST_F(Primitive, SoftmaxAndNormalizations) {
  expect_gradients([](Tape& t, const auto& v) { return weighted_sum(t, row_softmax(v[0])); }, {rnd({3, 6}, -3, 3)});
  expect_gradients([](Tape& t, const auto& v) { return weighted_sum(t, layer_norm(v[0], v[1], v[2])); },
                   {rnd({4, 6}), rnd({1, 6}), rnd({1, 6})});
  expect_gradients([](Tape& t, const auto& v) { return weighted_sum(t, l2_normalize_rows(v[0])); }, {rnd({4, 3})});
}

TEST_F(Primitive, BatchNormTrainAndEval) {
  for (NormMode mode : {NormMode::Train, NormMode::Eval}) {
    Tensor rm = rnd({1, 5}), rv = rnd({1, 5}, 0.5, 2.0);
    expect_gradients(
        [mode, rm, rv](Tape& t, const auto& v) {
          Parameter mean{"m", rm, {}, false}, var{"v", rv, {}, false};
          return weighted_sum(t, batch_norm(v[0], v[1], v[2], {&mean, &var, 0.1}, mode));
        },
        {rnd({6, 5}), rnd({1, 5}), rnd({1, 5})});
  }
}

TEST_F(Primitive, Pooling) {
  expect_gradients([](Tape& t, const auto& v) { return weighted_sum(t, max_pool_rows(v[0], 3)); }, {rnd({6, 4})});
  expect_gradients([](Tape& t, const auto& v) { return weighted_sum(t, max_pool(v[0], 0)); }, {rnd({5, 4})});
  expect_gradients([](Tape& t, const auto& v) { return weighted_sum(t, max_pool(v[0], 1)); }, {rnd({5, 4})});
}

TEST_F(Primitive, EdgeMaxBatchNorm) {
  const std::vector<int> idx{1, 2, 0, 3, 3, 0, 2, 1, 0, 4, 1, 2, 4, 3, 0};  // 5 rows, k = 3
  for (NormMode mode : {NormMode::Train, NormMode::TrainFrozen, NormMode::Eval}) {
    Tensor rm = rnd({1, 4}), rv = rnd({1, 4}, 0.5, 2.0);
    expect_gradients(
        [mode, rm, rv, &idx](Tape& t, const auto& v) {
          Parameter mean{"m", rm, {}, false}, var{"v", rv, {}, false};
          return weighted_sum(t, edge_max_bn(v[0], v[1], idx, 3, v[2], v[3], {&mean, &var, 0.1}, mode, 0.2));
        },
        {rnd({5, 4}), rnd({5, 4}), rnd({1, 4}), rnd({1, 4})});
  }
}

TEST_F(Primitive, EdgeMaxBatchNormMatchesUnfusedOps) {
  const int n = 12, k = 4, c = 6;
  std::vector<int> idx, centers;
  std::uniform_int_distribution<int> pick(0, n - 1);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < k; ++j) {
      idx.push_back(pick(rng));
      centers.push_back(i);
    }
  }
  const Tensor cv = rnd({n, c}), nv = rnd({n, c}), gv = rnd({1, c}), bv = rnd({1, c});
  for (NormMode mode : {NormMode::Train, NormMode::Eval}) {
    Parameter m1{"m", rnd({1, c}), {}, false}, v1{"v", rnd({1, c}, 0.5, 2.0), {}, false};
    Parameter m2 = m1, v2 = v1;
    Tape a, b;
    std::vector<Var> xa{a.variable(cv), a.variable(nv), a.variable(gv), a.variable(bv)};
    std::vector<Var> xb{b.variable(cv), b.variable(nv), b.variable(gv), b.variable(bv)};
    const Var fused = edge_max_bn(xa[0], xa[1], idx, k, xa[2], xa[3], {&m1, &v1, 0.1}, mode, 0.2);
    const Var edges = add(gather_rows(xb[0], centers), gather_rows(xb[1], idx));
    const Var plain = max_pool_rows(leaky_relu(batch_norm(edges, xb[2], xb[3], {&m2, &v2, 0.1}, mode), 0.2), k);
    for (std::size_t i = 0; i < fused.value().size(); ++i) {
      EXPECT_NEAR(fused.value().data[i], plain.value().data[i], 1e-12);
    }
    for (int h = 0; h < c; ++h) {
      EXPECT_NEAR(m1.value.data[h], m2.value.data[h], 1e-12);
      EXPECT_NEAR(v1.value.data[h], v2.value.data[h], 1e-12);
    }
    a.backward(weighted_sum(a, fused));
    b.backward(weighted_sum(b, plain));
    for (int q = 0; q < 4; ++q) {
      for (std::size_t i = 0; i < a.grad(xa[q]).size(); ++i) {
        EXPECT_NEAR(a.grad(xa[q]).data[i], b.grad(xb[q]).data[i], 1e-12);
      }
    }
  }
}

TEST_F(Primitive, ReductionsAndNorms) {
  expect_gradients([](Tape& t, const auto& v) { return weighted_sum(t, sum(v[0])); }, {rnd({3, 4})});
  expect_gradients([](Tape& t, const auto& v) { return weighted_sum(t, mean(v[0])); }, {rnd({3, 4})});
  expect_gradients([](Tape& t, const auto& v) { return weighted_sum(t, l1_norm(v[0])); }, {rnd({3, 4}, 0.1, 1.0)});
  expect_gradients([](Tape& t, const auto& v) { return weighted_sum(t, l2_norm(v[0])); }, {rnd({3, 4})});
  expect_gradients([](Tape& t, const auto& v) { return weighted_sum(t, frobenius_norm(v[0])); }, {rnd({3, 3})});
  expect_gradients([](Tape& t, const auto& v) { return weighted_sum(t, row_l2_norms(v[0])); }, {rnd({4, 3})});
}

TEST_F(Primitive, RigidHelpers) {
  expect_gradients([](Tape& t, const auto& v) { return weighted_sum(t, quat_to_rotmat(v[0])); }, {rnd({3, 4})});
  for (bool tr : {false, true}) {
    expect_gradients([tr](Tape& t, const auto& v) { return weighted_sum(t, batched_mat3(v[0], v[1], tr)); },
                     {rnd({2, 9}), rnd({2, 9})});
  }
  expect_gradients([](Tape& t, const auto& v) { return weighted_sum(t, rigid_apply(v[0], v[1], v[2], 3)); },
                   {rnd({6, 3}), rnd({2, 9}), rnd({2, 3})});
}

TEST(GradCheckOracle, DetectsAWrongDerivative) {
  // x^2 recorded with derivative 2.1 x: the checker must notice.
  const Fn wrong = [](Tape& t, const std::vector<Var>& v) {
    const int id = v[0].id;
    Tensor y = v[0].value();
    for (double& e : y.data) e *= e;
    const Var out = t.push(std::move(y), {id}, [id](Tape& tp, int self) {
      const Tensor& g = tp.grad(Var{&tp, self});
      for (std::size_t i = 0; i < g.size(); ++i) tp.grad_buffer(id).data[i] += 2.1 * tp.value(id).data[i] * g.data[i];
    });
    return sum(out);
  };
  std::mt19937_64 rng(1);
  EXPECT_GT(check_gradients(wrong, {random_tensor({2, 2}, rng, 0.5, 1.0)}).max_rel_error, 0.04);
}

TEST(Forward, MatmulRowsAreExactUnderPermutation) {
  // Sizes off the tile grid on every axis.
  std::mt19937_64 rng(31);
  const Tensor x = random_tensor({37, 19}, rng), y = random_tensor({19, 21}, rng);
  Tape t;
  const Tensor full = matmul(t.constant(x), t.constant(y)).value();
  std::vector<int> perm(37);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  const Tensor permuted = matmul(gather_rows(t.constant(x), perm), t.constant(y)).value();
  for (int r = 0; r < 37; ++r) {
    for (int c = 0; c < 21; ++c) ASSERT_EQ(permuted(r, c), full(perm[r], c));
  }
  for (int r : {0, 5, 36}) {
    const Tensor one = matmul(slice_rows(t.constant(x), r, r + 1), t.constant(y)).value();
    for (int c = 0; c < 21; ++c) ASSERT_EQ(one(0, c), full(r, c));
  }
  Eigen::MatrixXd ex(37, 19), ey(19, 21);
  for (int r = 0; r < 37; ++r) for (int c = 0; c < 19; ++c) ex(r, c) = x(r, c);
  for (int r = 0; r < 19; ++r) for (int c = 0; c < 21; ++c) ey(r, c) = y(r, c);
  const Eigen::MatrixXd ref = ex * ey;
  for (int r = 0; r < 37; ++r) for (int c = 0; c < 21; ++c) EXPECT_NEAR(full(r, c), ref(r, c), 1e-12);
}

TEST(BranchLog, ReplayKeepsTheRecordedPiece) {
  BranchLog log;
  {
    Tape t;
    t.record_branches(&log);
    relu(t.constant(Tensor({1, 2}, std::vector<double>{1e-9, -1e-9})));
    max_pool_rows(t.constant(Tensor({2, 1}, std::vector<double>{0.2, 0.3})), 2);
  }
  ASSERT_EQ(log.choices.size(), 2u);
  Tape t;
  t.replay_branches(&log);
  const Var r = relu(t.constant(Tensor({1, 2}, std::vector<double>{-1e-3, 1e-3})));
  EXPECT_EQ(r.value().data, (std::vector<double>{-1e-3, 0.0}));
  const Var m = max_pool_rows(t.constant(Tensor({2, 1}, std::vector<double>{0.5, 0.3})), 2);
  EXPECT_EQ(m.value().data[0], 0.3);
  EXPECT_THROW(relu(t.constant(Tensor({1, 2}))), ContractViolation);  // log exhausted
}

TEST(BranchLog, ReplayMustMatchTheRecordedOps) {
  BranchLog log;
  {
    Tape t;
    t.record_branches(&log);
    abs(t.constant(Tensor({3, 1}, 1.0)));
  }
  Tape t;
  t.replay_branches(&log);
  EXPECT_THROW(abs(t.constant(Tensor({2, 1}, 1.0))), ContractViolation);
}

TEST(GradCheckOracle, StepsAcrossAKinkStayOnThePiece) {
  // |x| at 1e-8 with h = 1e-6: a plain central difference would see a slope near 0.01.
  const Fn f = [](Tape&, const std::vector<Var>& v) { return sum(abs(v[0])); };
  EXPECT_LT(check_gradients(f, {Tensor({1, 1}, 1e-8)}).max_rel_error, 1e-9);
}

TEST(Forward, ValuesMatchDefinitions) {
  Tape t;
  const Var x = t.constant(Tensor({1, 3}, {-1.0, 0.0, 2.0}));
  const Tensor lr = leaky_relu(x).value();
  EXPECT_DOUBLE_EQ(lr.data[0], -0.2);
  EXPECT_DOUBLE_EQ(lr.data[2], 2.0);

  std::mt19937_64 rng(3);
  const Var s = row_softmax(t.constant(random_tensor({5, 7}, rng, -20, 20)));
  for (int r = 0; r < 5; ++r) {
    double total = 0.0;
    for (int c = 0; c < 7; ++c) total += s.value()(r, c);
    EXPECT_NEAR(total, 1.0, 1e-12);
  }

  const Var q = l2_normalize_rows(t.constant(random_tensor({4, 4}, rng)));
  const Tensor rot = quat_to_rotmat(q).value();
  for (int r = 0; r < 4; ++r) {
    Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>> m(rot.data.data() + 9 * r);
    EXPECT_LT((m.transpose() * m - Eigen::Matrix3d::Identity()).norm(), 1e-12);
    EXPECT_NEAR(m.determinant(), 1.0, 1e-12);
  }
  const Tensor neg = quat_to_rotmat(scale(q, -1.0)).value();
  EXPECT_EQ(neg.data, rot.data);
}

TEST(Forward, ShapeErrorsNameTheShapes) {
  Tape t;
  const Var a = t.constant(Tensor({2, 3}));
  const Var b = t.constant(Tensor({2, 3}));
  try {
    matmul(a, b);
    FAIL();
  } catch (const ContractViolation& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos);
  }
  EXPECT_THROW(add(a, t.constant(Tensor({3, 2}))), ContractViolation);
  EXPECT_THROW(concat({a, t.constant(Tensor({2, 2}))}, 0), ContractViolation);
  EXPECT_THROW(max_pool_rows(a, 4), ContractViolation);
  EXPECT_THROW(gather_rows(a, {2}), ContractViolation);
  Tape other;
  EXPECT_THROW(add(a, other.constant(Tensor({2, 3}))), ContractViolation);
}

TEST(Backward, SumOfSquaresGivesTwiceTheParameters) {
  std::mt19937_64 rng(1);
  Parameter p{"p", random_tensor({3, 4}, rng), {}, true};
  p.zero_grad();
  Tape t;
  const Var v = t.param(p);
  const Var loss = sum(mul(v, v));
  t.backward(loss);
  for (std::size_t i = 0; i < p.value.size(); ++i) EXPECT_EQ(p.grad.data[i], 2.0 * p.value.data[i]);
  t.backward(loss);
  for (std::size_t i = 0; i < p.value.size(); ++i) EXPECT_EQ(p.grad.data[i], 4.0 * p.value.data[i]);
}

TEST(Backward, DisconnectedAndFrozenParametersGetNoGradient) {
  Parameter used{"u", Tensor({1, 2}, {1.0, 2.0}), {}, true};
  Parameter unused{"n", Tensor({1, 2}, {3.0, 4.0}), {}, true};
  Parameter frozen{"f", Tensor({1, 2}, {5.0, 6.0}), {}, true};
  for (Parameter* p : {&used, &unused, &frozen}) p->zero_grad();
  Tape t;
  const Var u = t.param(used);
  t.param(unused);
  const Var f = t.param(frozen, true);
  t.backward(sum(mul(u, f)));
  EXPECT_EQ(used.grad.data, (std::vector<double>{5.0, 6.0}));
  EXPECT_EQ(unused.grad.data, (std::vector<double>{0.0, 0.0}));
  EXPECT_EQ(frozen.grad.data, (std::vector<double>{0.0, 0.0}));
  EXPECT_THROW(t.backward(u), ContractViolation);
}

TEST(Backward, FanOutAccumulates) {
  Tape t;
  const Var x = t.variable(Tensor({1, 1}, {3.0}));
  const Var y = add(mul(x, x), scale(x, 2.0));  // x^2 + 2x
  t.backward(sum(y));
  EXPECT_DOUBLE_EQ(t.grad(x).data[0], 8.0);
}

TEST(Backward, CompositeMlpMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  expect_gradients(
      [](Tape& t, const auto& v) {
        Var h = leaky_relu(add(matmul(v[0], v[1]), v[2]));
        h = layer_norm(h, v[5], v[6]);
        const Var out = add(matmul(h, v[3]), v[4]);
        return mean(abs(sub(sigmoid(out), t.constant(Tensor({5, 2}, 0.25)))));
      },
      {random_tensor({5, 4}, rng), random_tensor({4, 6}, rng), random_tensor({1, 6}, rng),
       random_tensor({6, 2}, rng), random_tensor({1, 2}, rng), random_tensor({1, 6}, rng, 0.5, 1.5),
       random_tensor({1, 6}, rng)},
      1e-5);
}

TEST(Backward, MaxPoolRoutesToArgmaxOnly) {
  Tape t;
  const Var x = t.variable(Tensor({3, 2}, {1.0, 5.0, 4.0, 2.0, 4.0, 3.0}));
  const Var m = max_pool(x, 0);
  EXPECT_EQ(m.value().data, (std::vector<double>{4.0, 5.0}));
  t.backward(sum(mul(m, t.constant(Tensor({1, 2}, {0.7, -1.3})))));
  // Ties resolve to the first maximal row.
  EXPECT_EQ(t.grad(x).data, (std::vector<double>{0.0, -1.3, 0.7, 0.0, 0.0, 0.0}));
}

TEST(BatchNorm, EvalIsFrozenAffineAndTrainUpdatesRunningStats) {
  Parameter mean{"m", Tensor({1, 2}, {0.5, -1.0}), {}, false};
  Parameter var{"v", Tensor({1, 2}, {4.0, 1.0}), {}, false};
  Tape t;
  const Var g = t.constant(Tensor({1, 2}, {2.0, 1.0}));
  const Var b = t.constant(Tensor({1, 2}, {0.1, 0.0}));
  const Var x = t.constant(Tensor({2, 2}, {1.0, 2.0, 3.0, 4.0}));
  const Tensor y1 = batch_norm(x, g, b, {&mean, &var, 0.1}, NormMode::Eval).value();
  const Tensor y2 = batch_norm(x, g, b, {&mean, &var, 0.1}, NormMode::Eval).value();
  EXPECT_EQ(y1.data, y2.data);
  EXPECT_NEAR(y1(0, 0), (1.0 - 0.5) / std::sqrt(4.0 + 1e-5) * 2.0 + 0.1, 1e-15);

  batch_norm(x, g, b, {&mean, &var, 0.1}, NormMode::TrainFrozen);
  EXPECT_EQ(mean.value.data, (std::vector<double>{0.5, -1.0}));
  batch_norm(x, g, b, {&mean, &var, 0.1}, NormMode::Train);
  EXPECT_NEAR(mean.value.data[0], 0.9 * 0.5 + 0.1 * 2.0, 1e-15);
  EXPECT_NEAR(var.value.data[0], 0.9 * 4.0 + 0.1 * 2.0, 1e-15);  // unbiased batch variance of {1, 3}
}

TEST(Adam, FirstStepMagnitude) {
  Parameter p{"p", Tensor({1, 1}, {0.3}), Tensor({1, 1}, {1.0}), true};
  AdamOptions opt;
  opt.weight_decay = 0.0;
  Adam adam({&p}, opt);
  adam.step();
  EXPECT_NEAR(p.value.data[0] - 0.3, -1e-3 * (1.0 / (1.0 + 1e-8)), 1e-15);
}

TEST(Adam, ZeroGradientOnlyWeightDecayActs) {
  Parameter p{"p", Tensor({1, 3}, {0.5, -2.0, 0.0}), Tensor({1, 3}, 0.0), true};
  Adam adam({&p});
  adam.step();
  // g = wd * p, so m_hat / sqrt(v_hat) = sign(p) scaled by |g| / (|g| + eps).
  for (int i = 0; i < 3; ++i) {
    const double p0 = std::vector<double>{0.5, -2.0, 0.0}[i];
    const double g = 1e-6 * p0;
    const double expected = p0 - 1e-3 * g / (std::abs(g) + 1e-8);
    EXPECT_NEAR(p.value.data[i], expected, 1e-15);
    EXPECT_LE(std::abs(p.value.data[i]), std::abs(p0));
  }
}

TEST(Adam, ElementwiseIndependence) {
  Parameter a{"a", Tensor({2, 2}, 0.7), Tensor({2, 2}, 0.3), true};
  Parameter b{"b", Tensor({2, 2}, 0.7), Tensor({2, 2}, 0.3), true};
  Adam adam({&a, &b});
  for (int i = 0; i < 5; ++i) adam.step();
  EXPECT_EQ(a.value.data, b.value.data);
}

TEST(Adam, DivergenceLeavesParametersUntouched) {
  Parameter a{"a", Tensor({1, 2}, 1.0), Tensor({1, 2}, {0.1, std::nan("")}), true};
  Adam adam({&a});
  EXPECT_THROW(adam.step(), TrainingDivergence);
  EXPECT_EQ(a.value.data, (std::vector<double>{1.0, 1.0}));
  EXPECT_EQ(adam.steps(), 0);
}

TEST(Adam, LearningRateDecaySchedule) {
  Parameter a{"a", Tensor({1, 1}, 1.0), Tensor({1, 1}, 1.0), true};
  AdamOptions opt;
  opt.lr_decay = 0.5;
  Adam adam({&a}, opt);
  EXPECT_DOUBLE_EQ(adam.current_lr(), 1e-3);
  adam.step();
  adam.step();
  EXPECT_DOUBLE_EQ(adam.current_lr(), 1e-3 / 2.0);
}

TEST(Checkpoint, RoundTripIsBitExactIncludingOptimizerState) {
  const auto dir = std::filesystem::temp_directory_path() / ("gsm_ckpt_" + std::to_string(::getpid()));
  std::mt19937_64 rng(2);
  ParameterSet params;
  params.add("layer/w", random_tensor({3, 4}, rng));
  params.add("layer/b", random_tensor({1, 4}, rng));
  params.add("bn/mean", Tensor({1, 4}, 0.25), false);
  for (Parameter* p : params.trainable()) p->grad = random_tensor(p->value.shape, rng);
  Adam adam(params.trainable());
  adam.step();

  auto tensors = snapshot(params, "param/");
  for (auto& [k, v] : adam.state("adam/")) tensors[k] = v;
  tensors["scalar"] = Tensor::scalar(std::nextafter(1.0, 2.0));
  save_checkpoint(dir / "ckpt", tensors, R"({"step": 1})");
  std::string meta;
  const auto back = load_checkpoint(dir / "ckpt", &meta);
  EXPECT_EQ(back.size(), tensors.size());
  for (const auto& [k, v] : tensors) {
    EXPECT_EQ(back.at(k).shape, v.shape);
    EXPECT_EQ(back.at(k).data, v.data);
  }
  EXPECT_NE(meta.find("\"step\":1"), std::string::npos);

  ParameterSet other;
  other.add("layer/w", Tensor({3, 4}));
  other.add("layer/b", Tensor({1, 4}));
  other.add("bn/mean", Tensor({1, 4}), false);
  restore(other, back, "param/");
  EXPECT_EQ(other.checksum(), params.checksum());
  Adam adam2(other.trainable());
  adam2.load_state(back, "adam/");
  EXPECT_EQ(adam2.steps(), 1);

  ParameterSet wrong;
  wrong.add("layer/w", Tensor({4, 3}));
  EXPECT_THROW(restore(wrong, back, "param/"), IoError);
  EXPECT_THROW(load_checkpoint(dir / "missing"), IoError);
  std::filesystem::remove_all(dir);
}

TEST(ParameterSet, ChecksumTracksValues) {
  ParameterSet params;
  Parameter& p = params.add("gen/w", Tensor({2, 2}, 1.0));
  params.add("disc/w", Tensor({2, 2}, 1.0));
  const auto gen = params.checksum("gen/");
  const auto disc = params.checksum("disc/");
  p.value.data[3] = std::nextafter(1.0, 0.0);
  EXPECT_NE(params.checksum("gen/"), gen);
  EXPECT_EQ(params.checksum("disc/"), disc);
  EXPECT_THROW(params.add("gen/w", Tensor({1, 1})), ContractViolation);
  EXPECT_EQ(params.count(), 8u);
}

}  // namespace
}  // namespace gsm::ad

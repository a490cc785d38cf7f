#include "cstt/autograd.h"

#include <cmath>
#include <random>
#include <vector>

#include "gtest/gtest.h"
#include "test_util.h"

namespace cstt::ag {
namespace {

using testing::GradCheck;
using testing::RandomMatrix;

constexpr double kTol = 1e-6;

// Generic scalar readout so every entry gets a distinct gradient.
Var Probe(Tape& tape, Var x) {
  const Matrix c = RandomMatrix(static_cast<int>(x.cols()), 3, 99);
  return Sum(Tanh(MatMul(x, tape.Constant(c))));
}

TEST(AutogradTest, LinearOps) {
  const Matrix a = RandomMatrix(3, 4, 1);
  const Matrix b = RandomMatrix(3, 4, 2);
  const Matrix m = RandomMatrix(4, 5, 3);
  const Matrix row = RandomMatrix(1, 4, 4);
  EXPECT_LT(GradCheck([&](Tape& t, Var x) { return Probe(t, Add(x, t.Constant(b))); }, a), kTol);
  EXPECT_LT(GradCheck([&](Tape& t, Var x) { return Probe(t, Sub(t.Constant(b), x)); }, a), kTol);
  EXPECT_LT(GradCheck([&](Tape& t, Var x) { return Probe(t, Scale(x, -2.5)); }, a), kTol);
  EXPECT_LT(GradCheck([&](Tape& t, Var x) { return Probe(t, AddRow(t.Constant(a), x)); }, row), kTol);
  EXPECT_LT(GradCheck([&](Tape& t, Var x) { return Probe(t, AddConstant(x, b)); }, a), kTol);
  EXPECT_LT(GradCheck([&](Tape& t, Var x) { return Probe(t, MatMul(x, t.Constant(m))); }, a), kTol);
  EXPECT_LT(GradCheck([&](Tape& t, Var x) { return Probe(t, MatMul(t.Constant(a), x)); }, m), kTol);
  EXPECT_LT(GradCheck([&](Tape& t, Var x) { return Probe(t, MatMulBT(x, t.Constant(b))); }, a), kTol);
  EXPECT_LT(GradCheck([&](Tape& t, Var x) { return Probe(t, MatMulBT(t.Constant(a), x)); }, b), kTol);
  EXPECT_LT(GradCheck([&](Tape&, Var x) { return Mean(x); }, a), kTol);
}

TEST(AutogradTest, Nonlinearities) {
  Matrix a = RandomMatrix(4, 3, 5);
  // Keep ReLU inputs away from the kink.
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (std::abs(a.data()[i]) < 0.05) a.data()[i] = 0.3;
  }
  EXPECT_LT(GradCheck([](Tape& t, Var x) { return Probe(t, Relu(x)); }, a), kTol);
  EXPECT_LT(GradCheck([](Tape& t, Var x) { return Probe(t, Tanh(x)); }, a), kTol);
}

TEST(AutogradTest, WeightedSum) {
  const Matrix a = RandomMatrix(1, 1, 6);
  const Matrix b = RandomMatrix(1, 1, 7);
  const std::vector<double> w = {2.0, -0.5};
  auto fn = [&](Tape& t, Var x) {
    std::vector<Var> terms = {x, t.Constant(b)};
    return WeightedSum(terms, w);
  };
  EXPECT_NEAR(testing::Evaluate(fn, a), 2.0 * a(0, 0) - 0.5 * b(0, 0), 1e-15);
  EXPECT_LT(GradCheck(fn, a), kTol);
}

TEST(AutogradTest, RowOps) {
  const Matrix table = RandomMatrix(5, 3, 8);
  const std::vector<int> ids = {4, 0, 4, 2};
  EXPECT_LT(GradCheck([&](Tape& t, Var x) { return Probe(t, GatherRows(x, ids)); }, table), kTol);

  const std::vector<int> counts = {2, 1, 3, 1, 1};
  EXPECT_LT(GradCheck([&](Tape& t, Var x) { return Probe(t, RepeatRows(x, counts)); }, table), kTol);

  const Matrix other = RandomMatrix(5, 3, 9);
  const std::vector<bool> take = {true, false, false, true, false};
  EXPECT_LT(GradCheck([&](Tape& t, Var x) { return Probe(t, MixRows(x, t.Constant(other), take)); }, table), kTol);
  EXPECT_LT(GradCheck([&](Tape& t, Var x) { return Probe(t, MixRows(t.Constant(other), x, take)); }, table), kTol);

  const Matrix b = RandomMatrix(2, 3, 10);
  EXPECT_LT(GradCheck([&](Tape& t, Var x) { return Probe(t, PairwiseRowSum(x, t.Constant(b))); }, table), kTol);
  EXPECT_LT(GradCheck([&](Tape& t, Var x) { return Probe(t, PairwiseRowSum(t.Constant(table), x)); }, b), kTol);
}

TEST(AutogradTest, RowOpValues) {
  Tape tape;
  Matrix x(2, 1);
  x << 1.0, 2.0;
  EXPECT_EQ(RepeatRows(tape.Constant(x), std::vector<int>{3, 1}).value(),
            (Matrix(4, 1) << 1, 1, 1, 2).finished());
  Matrix b(3, 1);
  b << 10, 20, 30;
  // Row t * 3 + u holds a[t] + b[u].
  const Matrix s = PairwiseRowSum(tape.Constant(x), tape.Constant(b)).value();
  ASSERT_EQ(s.rows(), 6);
  EXPECT_EQ(s(4, 0), 2.0 + 20.0);
}

TEST(AutogradTest, LayerNorm) {
  const Matrix x = RandomMatrix(3, 6, 11);
  const Matrix g = RandomMatrix(1, 6, 12);
  const Matrix b = RandomMatrix(1, 6, 13);
  EXPECT_LT(GradCheck([&](Tape& t, Var v) { return Probe(t, LayerNorm(v, t.Constant(g), t.Constant(b))); }, x), 1e-5);
  EXPECT_LT(GradCheck([&](Tape& t, Var v) { return Probe(t, LayerNorm(t.Constant(x), v, t.Constant(b))); }, g), kTol);
  EXPECT_LT(GradCheck([&](Tape& t, Var v) { return Probe(t, LayerNorm(t.Constant(x), t.Constant(g), v)); }, b), kTol);

  Tape tape;
  const Matrix y = LayerNorm(tape.Constant(x), tape.Constant(Matrix::Ones(1, 6)),
                             tape.Constant(Matrix::Zero(1, 6)))
                       .value();
  for (int r = 0; r < 3; ++r) {
    EXPECT_NEAR(y.row(r).mean(), 0.0, 1e-12);
    EXPECT_NEAR(y.row(r).squaredNorm() / 6.0, 1.0, 1e-4);
  }
}

TEST(AutogradTest, MultiHeadAttention) {
  const Matrix q = RandomMatrix(4, 6, 14);
  const Matrix k = RandomMatrix(5, 6, 15);
  const Matrix v = RandomMatrix(5, 6, 16);
  for (int heads : {1, 2, 3}) {
    EXPECT_LT(GradCheck([&](Tape& t, Var x) { return Probe(t, MultiHeadAttention(x, t.Constant(k), t.Constant(v), heads, false)); }, q), 1e-5);
    EXPECT_LT(GradCheck([&](Tape& t, Var x) { return Probe(t, MultiHeadAttention(t.Constant(q), x, t.Constant(v), heads, false)); }, k), 1e-5);
    EXPECT_LT(GradCheck([&](Tape& t, Var x) { return Probe(t, MultiHeadAttention(t.Constant(q), t.Constant(k), x, heads, false)); }, v), 1e-5);
  }
  const Matrix s = RandomMatrix(4, 6, 17);
  EXPECT_LT(GradCheck([&](Tape& t, Var x) { return Probe(t, MultiHeadAttention(x, x, x, 2, true)); }, s), 1e-5);
}

TEST(AutogradTest, CausalAttentionIgnoresFuture) {
  Matrix x = RandomMatrix(5, 4, 18);
  Tape tape;
  const Matrix before = MultiHeadAttention(tape.Constant(x), tape.Constant(x), tape.Constant(x), 2, true).value();
  x.row(4).setConstant(9.0);
  const Matrix after = MultiHeadAttention(tape.Constant(x), tape.Constant(x), tape.Constant(x), 2, true).value();
  EXPECT_TRUE(before.topRows(4).isApprox(after.topRows(4), 1e-14));
  EXPECT_FALSE(before.row(4).isApprox(after.row(4)));
}

TEST(AutogradTest, SingleKeyAttentionReturnsValue) {
  Tape tape;
  const Matrix q = RandomMatrix(3, 4, 19);
  const Matrix kv = RandomMatrix(1, 4, 20);
  const Matrix out = MultiHeadAttention(tape.Constant(q), tape.Constant(kv), tape.Constant(kv), 2, false).value();
  for (int r = 0; r < 3; ++r) EXPECT_TRUE(out.row(r).isApprox(kv.row(0), 1e-14));
}

TEST(AutogradTest, NormalizeRows) {
  const Matrix x = RandomMatrix(3, 4, 21);
  EXPECT_LT(GradCheck([](Tape& t, Var v) { return Probe(t, NormalizeRows(v)); }, x), 1e-5);
  Tape tape;
  bool degenerate = false;
  Matrix z = x;
  z.row(1).setZero();
  const Matrix n = NormalizeRows(tape.Constant(z), &degenerate).value();
  EXPECT_TRUE(degenerate);
  EXPECT_NEAR(n.row(0).norm(), 1.0, 1e-12);
  EXPECT_EQ(n.row(1).norm(), 0.0);
}

TEST(AutogradTest, MeanSquaredError) {
  const Matrix a = RandomMatrix(3, 4, 22);
  const Matrix b = RandomMatrix(3, 4, 23);
  auto fn = [&](Tape& t, Var x) { return MeanSquaredError(x, t.Constant(b)); };
  EXPECT_NEAR(testing::Evaluate(fn, a), (a - b).squaredNorm() / 12.0, 1e-14);
  EXPECT_LT(GradCheck(fn, a), kTol);
}

TEST(AutogradTest, DropoutIsIdentityWithoutRng) {
  Tape tape;
  const Matrix x = RandomMatrix(4, 4, 24);
  EXPECT_EQ(Dropout(tape.Constant(x), 0.5, nullptr).value(), x);
}

TEST(AutogradTest, DropoutScalesKeptUnits) {
  Tape tape;
  const Matrix x = Matrix::Ones(50, 40);
  std::mt19937_64 rng(3);
  const Matrix y = Dropout(tape.Constant(x), 0.25, &rng).value();
  int kept = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double v = y.data()[i];
    ASSERT_TRUE(v == 0.0 || std::abs(v - 1.0 / 0.75) < 1e-12);
    kept += v != 0.0;
  }
  EXPECT_NEAR(kept / 2000.0, 0.75, 0.04);
}

TEST(AutogradTest, ParametersAccumulateAcrossTapes) {
  Parameter p("w", RandomMatrix(2, 2, 25));
  p.ZeroGrad();
  for (int i = 0; i < 2; ++i) {
    Tape tape;
    tape.Backward(Sum(tape.Param(p)), 0.5);
  }
  EXPECT_TRUE(p.grad.isApprox(Matrix::Ones(2, 2)));
}

TEST(AutogradTest, ParamIsBoundOncePerTape) {
  Parameter p("w", RandomMatrix(2, 2, 26));
  Tape tape;
  Var a = tape.Param(p);
  Var b = tape.Param(p);
  EXPECT_EQ(a.id(), b.id());
  EXPECT_EQ(tape.Parameters().size(), 1u);
}

TEST(AutogradTest, ShapeErrorsThrow) {
  Tape tape;
  Var a = tape.Constant(Matrix::Zero(2, 3));
  Var b = tape.Constant(Matrix::Zero(3, 2));
  EXPECT_THROW(Add(a, b), std::invalid_argument);
  EXPECT_THROW(MatMul(a, a), std::invalid_argument);
  EXPECT_THROW(tape.Backward(a), std::logic_error);
}

}  // namespace
}  // namespace cstt::ag

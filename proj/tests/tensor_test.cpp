#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "prunelab/autograd.hpp"
#include "prunelab/gradcheck.hpp"
#include "prunelab/optim.hpp"
#include "prunelab/rng.hpp"

namespace prunelab {
namespace {

TEST(Tensor, RejectsInconsistentShape) {
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  Tensor t(Shape{2, 3});
  EXPECT_EQ(t.size(), 6u);
  EXPECT_THROW(t.reshaped(Shape{4}), ShapeError);
}

TEST(ForwardOp, MatmulIdentity) {
  Var a = constant(Tensor::matrix({{1, 2}, {3, 4}}));
  Var id = constant(Tensor::matrix({{1, 0}, {0, 1}}));
  std::vector<Var> in{a, id};
  EXPECT_EQ(forward_op(OpKind::matmul, in).value(), a.value());
}

TEST(ForwardOp, Relu) {
  Var y = relu(constant(Tensor::vector({-1, 0, 2})));
  EXPECT_EQ(y.value(), Tensor::vector({0, 0, 2}));
}

TEST(ForwardOp, SoftmaxSymmetric) {
  Var y = softmax(constant(Tensor::vector({0, 0})));
  EXPECT_DOUBLE_EQ(y.value()[0], 0.5);
  EXPECT_DOUBLE_EQ(y.value()[1], 0.5);
}

TEST(ForwardOp, ShapeErrorsNameTheOp) {
  Var a = constant(Tensor(Shape{2, 3}));
  Var b = constant(Tensor(Shape{2, 3}));
  try {
    matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("[2,3]"), std::string::npos);
  }
  EXPECT_THROW(conv2d(constant(Tensor(Shape{1, 2, 4, 4})), constant(Tensor(Shape{1, 3, 3, 3})), Padding::same),
               ShapeError);
  EXPECT_THROW(add(a, constant(Tensor(Shape{3, 2}))), ShapeError);
  std::vector<Var> one{a};
  EXPECT_THROW(forward_op(OpKind::matmul, one), ShapeError);
}

TEST(ForwardOp, RecordsGraphOnlyWhenTracking) {
  Var w = parameter(Tensor::vector({1, 2}));
  Var y = mul(w, w);
  EXPECT_TRUE(y.requires_grad());
  EXPECT_EQ(y.node()->inputs.size(), 2u);
  NoGradGuard guard;
  Var z = mul(w, w);
  EXPECT_FALSE(z.requires_grad());
  EXPECT_TRUE(z.node()->inputs.empty());
}

TEST(ForwardOp, ConvValidAndSame) {
  // 3x3 input of ones, 3x3 kernel of ones.
  Var x = constant(Tensor(Shape{1, 1, 3, 3}, 1.0));
  Var k = constant(Tensor(Shape{1, 1, 3, 3}, 1.0));
  Tensor valid = conv2d(x, k, Padding::valid).value();
  ASSERT_EQ(valid.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(valid[0], 9.0);
  Tensor same = conv2d(x, k, Padding::same).value();
  ASSERT_EQ(same.shape(), (Shape{1, 1, 3, 3}));
  // Corner sees 4 taps, edge 6, centre 9.
  EXPECT_DOUBLE_EQ(same[0], 4.0);
  EXPECT_DOUBLE_EQ(same[1], 6.0);
  EXPECT_DOUBLE_EQ(same[4], 9.0);
}

TEST(Backward, SquareSum) {
  Var w = parameter(Tensor::vector({3}));
  backward(sum(mul(w, w)));
  EXPECT_DOUBLE_EQ(w.grad()[0], 6.0);
}

TEST(Backward, CrossEntropyMatchesFiniteDifference) {
  // Oracle: central differences with h = 1e-6 on the fused loss.
  auto loss_at = [](double z0, double z1) {
    NoGradGuard g;
    return cross_entropy(constant(Tensor::vector({z0, z1})), constant(Tensor::vector({1, 0}))).value().item();
  };
  const double h = 1e-6;
  double fd0 = (loss_at(h, 0) - loss_at(-h, 0)) / (2 * h);
  double fd1 = (loss_at(0, h) - loss_at(0, -h)) / (2 * h);
  EXPECT_NEAR(fd0, -0.5, 1e-8);
  EXPECT_NEAR(fd1, 0.5, 1e-8);

  Var z = parameter(Tensor::vector({0, 0}));
  backward(cross_entropy(z, constant(Tensor::vector({1, 0}))));
  EXPECT_NEAR(z.grad()[0], fd0, 1e-8);
  EXPECT_NEAR(z.grad()[1], fd1, 1e-8);
  EXPECT_DOUBLE_EQ(z.grad()[0], -0.5);
  EXPECT_DOUBLE_EQ(z.grad()[1], 0.5);
}

TEST(Backward, RejectsNonScalarAndDetached) {
  Var w = parameter(Tensor::vector({1, 2}));
  EXPECT_THROW(backward(mul(w, w)), ShapeError);
  Var c = constant(Tensor::vector({1, 2}));
  EXPECT_THROW(backward(sum(c)), Error);
}

TEST(Backward, FanOutAccumulates) {
  // y = sum(relu(x) * x + x): x feeds three paths.
  std::vector<Tensor> in = {Tensor::matrix({{0.7, -0.4}, {1.3, 0.2}})};
  ScalarFn f = [](const std::vector<Var>& v) { return sum(add(mul(relu(v[0]), v[0]), v[0])); };
  EXPECT_LT(gradient_rel_error(f, in), 1e-8);

  Var x = parameter(in[0]);
  backward(f({x}));
  // d/dx = 2x + 1 for x > 0, 1 otherwise.
  EXPECT_NEAR(x.grad()[0], 2.4, 1e-12);
  EXPECT_NEAR(x.grad()[1], 1.0, 1e-12);
}

TEST(Backward, SharedSubgraphVisitedOnce) {
  // z = a*a; loss = sum(z + z). A node visited twice would double-count.
  Var a = parameter(Tensor::vector({2}));
  Var z = mul(a, a);
  backward(sum(add(z, z)));
  EXPECT_DOUBLE_EQ(a.grad()[0], 8.0);
}

TEST(GradCheck, EveryOpHundredRandomCases) {
  auto results = run_gradcheck_suite(100, 2024);
  ASSERT_EQ(results.size(), differentiable_ops().size());
  for (const auto& r : results) {
    EXPECT_EQ(r.cases, 100u);
    EXPECT_EQ(r.failures, 0u) << op_name(r.kind) << " worst " << r.worst;
    EXPECT_LE(r.worst, 1e-4) << op_name(r.kind);
  }
}

TEST(Softmax, RowsSumToOneInOpenInterval) {
  Rng rng(5);
  for (int c = 0; c < 200; ++c) {
    Tensor z(Shape{4, 6});
    for (auto& v : z.data()) v = rng.uniform(-20, 20);
    Tensor y = softmax(constant(z)).value();
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0;
      for (std::size_t j = 0; j < 6; ++j) {
        double p = y[r * 6 + j];
        EXPECT_GT(p, 0.0);
        EXPECT_LT(p, 1.0);
        s += p;
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Determinism, SameSeedSameBits) {
  auto run = [] {
    Rng rng = Rng::stream(11, "test");
    Tensor x(Shape{2, 2, 5, 5}), k(Shape{3, 2, 3, 3});
    for (auto& v : x.data()) v = rng.normal();
    for (auto& v : k.data()) v = rng.normal();
    Var kv = parameter(k);
    Var loss = mean(relu(conv2d(constant(x), kv, Padding::same)));
    backward(loss);
    return std::make_pair(loss.value(), kv.grad());
  };
  auto a = run();
  auto b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(Sgd, PlainStep) {
  Var w = parameter(Tensor::vector({1}));
  w.mutable_grad()[0] = 0.5;
  std::vector<ParamRef> ps{{w, nullptr}};
  SgdState s{1.0, 0.0, 0.0, false, {}};
  sgd_step(ps, s);
  EXPECT_DOUBLE_EQ(w.value()[0], 0.5);
  EXPECT_FALSE(w.has_grad());
}

TEST(Sgd, ZeroLearningRateIsIdentity) {
  Var w = parameter(Tensor::vector({1, -2}));
  w.mutable_grad().fill(3.0);
  std::vector<ParamRef> ps{{w, nullptr}};
  SgdState s{0.0, 0.9, 1e-4, true, {}};
  sgd_step(ps, s);
  EXPECT_EQ(w.value(), Tensor::vector({1, -2}));
}

TEST(Sgd, MomentumTwoSteps) {
  // Oracle: v1 = g, w1 = -lr v1; v2 = mu v1 + g, w2 = w1 - lr v2.
  double mu = 0.9, g = 1.0, lr = 1.0, v = 0.0, w_ref = 0.0;
  std::vector<double> expected;
  for (int i = 0; i < 2; ++i) {
    v = mu * v + g;
    w_ref -= lr * v;
    expected.push_back(w_ref);
  }
  EXPECT_DOUBLE_EQ(expected[0], -1.0);
  EXPECT_DOUBLE_EQ(expected[1], -2.9);

  Var w = parameter(Tensor::vector({0}));
  std::vector<ParamRef> ps{{w, nullptr}};
  SgdState s{lr, mu, 0.0, false, {}};
  for (int i = 0; i < 2; ++i) {
    w.mutable_grad()[0] = g;
    sgd_step(ps, s);
    EXPECT_DOUBLE_EQ(w.value()[0], expected[static_cast<std::size_t>(i)]);
  }
}

TEST(Sgd, MaskedEntriesStayZero) {
  Var w = parameter(Tensor::vector({1, 2, 3}));
  Tensor mask = Tensor::vector({1, 0, 1});
  std::vector<ParamRef> ps{{w, &mask}};
  SgdState s{0.1, 0.9, 0.01, true, {}};
  for (int i = 0; i < 5; ++i) {
    w.mutable_grad().fill(-1.0);
    sgd_step(ps, s);
    EXPECT_EQ(w.value()[1], 0.0);
    EXPECT_EQ(s.velocity[0][1], 0.0);
  }
}

TEST(Sgd, MissingGradientIsAnError) {
  Var w = parameter(Tensor::vector({1}));
  std::vector<ParamRef> ps{{w, nullptr}};
  SgdState s;
  EXPECT_THROW(sgd_step(ps, s), Error);
}

TEST(LrSchedule, WarmupThenDecay) {
  LrSchedule s{0.1, 2.0, {4, 6}, 0.1};
  EXPECT_NEAR(s.at(0, 0, 10), 0.1 * 0.1 / 2.0, 1e-15);
  EXPECT_NEAR(s.at(1, 9, 10), 0.1, 1e-15);
  EXPECT_NEAR(s.at(3, 0, 10), 0.1, 1e-15);
  EXPECT_NEAR(s.at(4, 0, 10), 0.01, 1e-15);
  EXPECT_NEAR(s.at(7, 5, 10), 0.001, 1e-15);
}

}  // namespace
}  // namespace prunelab

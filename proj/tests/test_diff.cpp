#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "owmmd/diff.hpp"

using namespace owmmd;

namespace {

Tensor mat(std::initializer_list<std::initializer_list<double>> rows) {
  Tensor t(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index r = 0;
  for (const auto& row : rows) {
    Eigen::Index c = 0;
    for (double v : row) t(r, c++) = v;
    ++r;
  }
  return t;
}

Tensor random_tensor(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(r, c);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = u(rng);
  return t;
}

}  // namespace

TEST(Matmul, IdentityAndHandArithmetic) {
  const Tensor m = mat({{1.5, -2}, {0.25, 7}});
  EXPECT_EQ(matmul(Node::constant(Tensor::Identity(2, 2)), Node::constant(m)).value(), m);
  const Tensor got = matmul(Node::constant(mat({{1, 2}, {3, 4}})), Node::constant(mat({{1}, {1}}))).value();
  EXPECT_EQ(got, mat({{3}, {7}}));
}

TEST(Matmul, InnerDimensionMismatch) {
  try {
    matmul(Node::constant(Tensor::Zero(2, 3)), Node::constant(Tensor::Zero(2, 3)));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(1);
  const double err = finite_diff_check<double>(
      [](std::span<const Node> p) { return sum(matmul(p[0], p[1])); },
      {random_tensor(4, 3, rng), random_tensor(3, 5, rng)}, 1e-5);
  EXPECT_LT(err, 1e-6);
}

TEST(Elementwise, Examples) {
  const Tensor r = elementwise<double>(ElementwiseOp::relu, std::vector{Node::constant(mat({{-1, 0, 2}}))}).value();
  EXPECT_EQ(r, mat({{0, 0, 2}}));
  EXPECT_EQ(exp(Node::constant(mat({{0}}))).value()(0, 0), 1.0);

  Node x = Node::variable(mat({{1, 2}}));
  Node loss = sum(square(x));
  backward(loss);
  EXPECT_EQ(x.gradient(), mat({{2, 4}}));
}

TEST(Elementwise, ReluSubgradientAtZeroIsZero) {
  Node x = Node::variable(mat({{0, -0.0, 1e-300}}));
  Node loss = sum(relu(x));
  backward(loss);
  EXPECT_EQ(x.gradient(), mat({{0, 0, 1}}));
}

TEST(Elementwise, LogRejectsNonPositive) {
  for (double bad : {0.0, -1.0}) {
    try {
      log(Node::constant(mat({{1, bad}})));
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::DomainError);
    }
  }
}

TEST(Elementwise, BinaryShapeMismatch) {
  const Node a = Node::constant(Tensor::Zero(2, 2)), b = Node::constant(Tensor::Zero(2, 3));
  for (auto op : {ElementwiseOp::add, ElementwiseOp::sub, ElementwiseOp::mul}) {
    try {
      elementwise<double>(op, std::vector{a, b});
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
    }
  }
}

TEST(Elementwise, OverflowRaisesNumericError) {
  try {
    exp(Node::constant(mat({{1000}})));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NumericError);
  }
}

// Every op against central differences on random shapes up to 16 x 16.
TEST(Gradients, EveryOpRandomShapes) {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<Eigen::Index> dim(1, 16);
  using Fn = std::function<Node(std::span<const Node>)>;
  for (int trial = 0; trial < 6; ++trial) {
    const Eigen::Index r = dim(rng), c = dim(rng), k = dim(rng);
    const Tensor a = random_tensor(r, c, rng), b = random_tensor(r, c, rng), w = random_tensor(r, c, rng);
    const Tensor pos = random_tensor(r, c, rng, 0.5, 2.0);
    const Tensor m = random_tensor(c, k, rng), bias = random_tensor(1, c, rng);
    // Weighted sums so that every output coordinate carries a distinct upstream gradient.
    auto wsum = [w](const Node& n) { return sum(mul(n, Node::constant(w))); };
    const std::vector<std::pair<Fn, std::vector<Tensor>>> cases{
        {[&](auto p) { return wsum(add(p[0], p[1])); }, {a, b}},
        {[&](auto p) { return wsum(sub(p[0], p[1])); }, {a, b}},
        {[&](auto p) { return wsum(mul(p[0], p[1])); }, {a, b}},
        {[&](auto p) { return wsum(scale(p[0], -2.5)); }, {a}},
        {[&](auto p) { return wsum(relu(p[0])); }, {a}},
        {[&](auto p) { return wsum(exp(p[0])); }, {a}},
        {[&](auto p) { return wsum(log(p[0])); }, {pos}},
        {[&](auto p) { return wsum(square(p[0])); }, {a}},
        {[&](auto p) { return wsum(add_bias(p[0], p[1])); }, {a, bias}},
        {[&](auto p) { return wsum(softmax_rows(p[0])); }, {a}},
        {[&](auto p) { return sum(square(matmul(p[0], p[1]))); }, {a, m}},
        {[&](auto p) { return sum(square(sum(p[0], 0))); }, {a}},
        {[&](auto p) { return sum(square(sum(p[0], 1))); }, {a}},
        {[&](auto p) { return sum(square(mean(p[0], 0))); }, {a}},
        {[&](auto p) { return sum(square(mean(p[0], 1))); }, {a}},
        {[&](auto p) { return square(pick(p[0], r - 1, c - 1)); }, {a}},
    };
    for (std::size_t i = 0; i < cases.size(); ++i) {
      EXPECT_LT(finite_diff_check<double>(cases[i].first, cases[i].second, 1e-5), 1e-6)
          << "case " << i << " shape " << r << "x" << c;
    }
  }
}

TEST(Reduce, Examples) {
  EXPECT_EQ(reduce(ReduceOp::sum, Node::constant(mat({{1, 2, 3}}))).item(), 6.0);
  EXPECT_DOUBLE_EQ(reduce(ReduceOp::mean, Node::constant(Tensor::Constant(1, 7, 0.3))).item(), 0.3);
  Node x = Node::variable(mat({{1, 2, 3, 4}}));
  Node loss = mean(x);
  backward(loss);
  EXPECT_EQ(x.gradient(), Tensor::Constant(1, 4, 0.25));
}

TEST(Reduce, AxisShapes) {
  const Node x = Node::constant(mat({{1, 2, 3}, {4, 5, 6}}));
  EXPECT_EQ(sum(x, 0).value(), mat({{5, 7, 9}}));
  EXPECT_EQ(sum(x, 1).value(), mat({{6}, {15}}));
  EXPECT_EQ(mean(x, 1).value(), mat({{2}, {5}}));
}

TEST(Reduce, InvalidAxis) {
  for (int axis : {-1, 2}) {
    try {
      sum(Node::constant(Tensor::Zero(2, 2)), axis);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::InvalidAxis);
    }
  }
}

TEST(Backward, LeafAndScaledScalar) {
  Node x = Node::variable(mat({{5}}));
  backward(x);
  EXPECT_EQ(x.gradient()(0, 0), 1.0);

  Node y = Node::variable(mat({{5}}));
  Node loss = 3.0 * y;
  backward(loss);
  EXPECT_EQ(y.gradient()(0, 0), 3.0);
}

TEST(Backward, NonScalarLoss) {
  Node x = Node::variable(Tensor::Zero(2, 1));
  try {
    backward(x);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonScalarLoss);
  }
}

TEST(Backward, GradientShapeMatchesValue) {
  Node a = Node::variable(Tensor::Ones(3, 4)), b = Node::variable(Tensor::Ones(4, 2));
  Node loss = sum(matmul(a, b));
  backward(loss);
  EXPECT_EQ(a.gradient().rows(), 3);
  EXPECT_EQ(a.gradient().cols(), 4);
  EXPECT_EQ(b.gradient().rows(), 4);
  EXPECT_EQ(b.gradient().cols(), 2);
}

TEST(Backward, AccumulatesAcrossPaths) {
  std::mt19937_64 rng(3);
  const Tensor v = random_tensor(3, 3, rng);
  auto path1 = [](const Node& x) { return sum(square(x)); };
  auto path2 = [](const Node& x) { return sum(exp(x)); };

  Node shared = Node::variable(v);
  Node both = add(path1(shared), path2(shared));
  backward(both);

  Node x1 = Node::variable(v), x2 = Node::variable(v);
  Node l1 = path1(x1), l2 = path2(x2);
  backward(l1);
  backward(l2);
  EXPECT_TRUE(shared.gradient().isApprox(x1.gradient() + x2.gradient(), 1e-15));
}

TEST(Backward, ConstantsReceiveNoGradient) {
  Node c = Node::constant(Tensor::Ones(2, 2));
  Node v = Node::variable(Tensor::Ones(2, 2));
  Node loss = sum(mul(c, v));
  backward(loss);
  EXPECT_FALSE(c.has_gradient());
  EXPECT_EQ(v.gradient(), Tensor::Ones(2, 2));
}

TEST(Backward, DeterministicValuesAndGradients) {
  std::mt19937_64 rng(11);
  const Tensor a = random_tensor(8, 5, rng), m = random_tensor(5, 4, rng);
  auto run = [&] {
    Node x = Node::variable(a), w = Node::variable(m);
    Node loss = sum(softmax_rows(relu(matmul(x, w))));
    backward(loss);
    return std::make_tuple(loss.item(), x.gradient(), w.gradient());
  };
  const auto r1 = run(), r2 = run();
  EXPECT_EQ(std::get<0>(r1), std::get<0>(r2));
  EXPECT_EQ(std::get<1>(r1), std::get<1>(r2));
  EXPECT_EQ(std::get<2>(r1), std::get<2>(r2));
}

TEST(FiniteDiffCheck, Examples) {
  std::mt19937_64 rng(8);
  EXPECT_LT(finite_diff_check<double>([](auto p) { return sum(square(p[0])); }, {random_tensor(4, 4, rng)}, 1e-5),
            1e-8);
  EXPECT_EQ(finite_diff_check<double>([](auto) { return Node::scalar(2.0); }, {random_tensor(2, 2, rng)}, 1e-5), 0.0);

  // Cross-entropy of softmax, composed from primitive ops.
  const Tensor onehot = mat({{0, 1, 0}, {1, 0, 0}});
  const double err = finite_diff_check<double>(
      [&](auto p) {
        return scale(sum(mul(Node::constant(onehot), log(softmax_rows(p[0])))), -0.5);
      },
      {random_tensor(2, 3, rng)}, 1e-5);
  EXPECT_LT(err, 1e-6);
}

TEST(FiniteDiffCheck, RejectsNonPositiveStep) {
  EXPECT_THROW(finite_diff_check<double>([](auto p) { return sum(p[0]); }, {Tensor::Ones(1, 1)}, 0.0), Error);
}

TEST(Scalar, SinglePrecisionInstantiation) {
  using F = BasicNode<float>;
  MatrixX<float> v(1, 2);
  v << 1.0f, 2.0f;
  F x = F::variable(v);
  F loss = sum(square(x));
  backward(loss);
  EXPECT_FLOAT_EQ(x.gradient()(0, 1), 4.0f);
}

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "owmmd/mlfmm.hpp"

using namespace owmmd;

namespace {

Tensor gaussian(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Tensor t(r, c);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = n(rng);
  return t;
}

// Positive biases keep every relu feature row nonzero, so cosine is defined.
ModelParams model(std::size_t k, std::uint64_t seed, double bias = 0.1) {
  std::mt19937_64 rng(seed);
  const std::vector<Eigen::Index> widths(k, 6);
  ModelParams m = ModelParams::init(4, widths, 3, rng);
  for (std::size_t i = 0; i < k; ++i) m.set_parameter(2 * i + 1, Tensor::Constant(1, 6, bias));
  return m;
}

ModelParams perturbed(const ModelParams& m, std::uint64_t seed, double sd = 0.2) {
  std::mt19937_64 rng(seed);
  ModelParams out = m;
  for (std::size_t i = 0; i < out.parameter_count(); ++i) {
    const Tensor& p = out.parameter(i);
    out.set_parameter(i, p + gaussian(p.rows(), p.cols(), rng, sd));
  }
  return out;
}

// Brute-force unbiased MMD with the median heuristic computed independently.
double oracle_layer_mmd(const Tensor& t, const Tensor& s, const std::vector<double>& multipliers) {
  const Eigen::Index n = t.rows();
  Tensor pooled(2 * n, t.cols());
  pooled << t, s;
  std::vector<double> d;
  for (Eigen::Index i = 0; i < 2 * n; ++i) {
    for (Eigen::Index j = i + 1; j < 2 * n; ++j) d.push_back((pooled.row(i) - pooled.row(j)).norm());
  }
  std::sort(d.begin(), d.end());
  double med = d.size() % 2 ? d[d.size() / 2] : 0.5 * (d[d.size() / 2 - 1] + d[d.size() / 2]);
  if (med <= 0.0) med = 1.0;
  auto k = [&](const Tensor& a, Eigen::Index i, const Tensor& b, Eigen::Index j) {
    double v = 0.0;
    for (double m : multipliers) v += std::exp(-(a.row(i) - b.row(j)).squaredNorm() / (2 * m * m * med * med));
    return v;
  };
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i != j) sum += k(t, i, t, j) + k(s, i, s, j) - k(t, i, s, j) - k(t, j, s, i);
    }
  }
  return sum / double(n * (n - 1));
}

Tensor col(std::initializer_list<double> v) {
  Tensor t(static_cast<Eigen::Index>(v.size()), 1);
  Eigen::Index i = 0;
  for (double x : v) t(i++, 0) = x;
  return t;
}

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::IoError;
}

}  // namespace

TEST(NormalizeWeights, Examples) {
  const Tensor u = normalize_weights(Tensor(Tensor::Zero(5, 1)));
  for (Eigen::Index i = 0; i < 5; ++i) EXPECT_EQ(u(i, 0), 0.2);

  const Tensor w = normalize_weights(col({std::log(2.0), 0, 0}));
  EXPECT_NEAR(w(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(w(1, 0), 0.25, 1e-15);
  EXPECT_NEAR(w(2, 0), 0.25, 1e-15);

  std::mt19937_64 rng(1);
  const Tensor raw = gaussian(6, 1, rng, 3.0);
  const Tensor shifted = (raw.array() + 41.5).matrix();
  EXPECT_LT((normalize_weights(raw) - normalize_weights(shifted)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(NormalizeWeights, LargeInputsDoNotOverflow) {
  const Tensor w = normalize_weights(col({800, 799, -800}));
  EXPECT_TRUE(w.allFinite());
  EXPECT_NEAR(w.sum(), 1.0, 1e-12);
}

TEST(NormalizeWeights, MaskGivesExactZeros) {
  const Node w = normalize_weights(Node::constant(col({0.3, -1, 2, 0.7})), {true, false, true, false});
  EXPECT_EQ(w.value()(1, 0), 0.0);
  EXPECT_EQ(w.value()(3, 0), 0.0);
  EXPECT_NEAR(w.value().sum(), 1.0, 1e-15);
  const double e0 = std::exp(0.3), e2 = std::exp(2.0);
  EXPECT_NEAR(w.value()(0, 0), e0 / (e0 + e2), 1e-15);
}

TEST(NormalizeWeights, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(2);
  const Tensor coef = gaussian(5, 1, rng);
  for (const std::vector<bool>& mask : {std::vector<bool>(5, true), std::vector<bool>{true, false, true, true, false}}) {
    const double err = finite_diff_check<double>(
        [&](std::span<const Node> p) { return sum(mul(normalize_weights(p[0], mask), Node::constant(coef))); },
        {gaussian(5, 1, rng)}, 1e-5);
    EXPECT_LT(err, 1e-8);
  }
}

TEST(LayerInclusion, Errors) {
  RegularizerConfig cfg;
  EXPECT_EQ(code_of([&] { layer_inclusion(cfg, 3); }), ErrorCode::InvalidSpec);
  cfg.layer_mask = {0};
  EXPECT_EQ(code_of([&] { layer_inclusion(cfg, 3); }), ErrorCode::InvalidSpec);
  cfg.layer_mask = {4};
  EXPECT_EQ(code_of([&] { layer_inclusion(cfg, 3); }), ErrorCode::InvalidSpec);
  cfg.layer_mask = {3, 1};
  EXPECT_EQ(layer_inclusion(cfg, 3), (std::vector<bool>{true, false, true}));
}

TEST(AdaptiveWeights, UniformInitRange) {
  std::mt19937_64 rng(3);
  const AdaptiveWeights w = AdaptiveWeights::uniform_init(5, rng);
  EXPECT_EQ(w.size(), 5u);
  EXPECT_GE(w.raw().minCoeff(), 0.0);
  EXPECT_LT(w.raw().maxCoeff(), 1.0);
}

TEST(AdaptiveWeights, DistributionInvariantUnderManySteps) {
  std::mt19937_64 rng(4);
  AdaptiveWeights w = AdaptiveWeights::uniform_init(5, rng);
  for (int step = 0; step < 500; ++step) {
    Node raw = w.bind();
    Node loss = sum(mul(normalize_weights(raw, std::vector<bool>(5, true)), Node::constant(gaussian(5, 1, rng, 5.0))));
    backward(loss);
    w.gradient_step(0.5);
    const Tensor n = w.normalized();
    ASSERT_NEAR(n.sum(), 1.0, 1e-12);
    ASSERT_GT(n.minCoeff(), 0.0);
  }
}

TEST(AdaptiveWeights, MissingGradient) {
  AdaptiveWeights w(Tensor::Zero(3, 1));
  EXPECT_EQ(code_of([&] { w.gradient_step(0.1); }), ErrorCode::MissingGradient);
  w.bind();
  w.gradient_step(0.1);  // bound but unreached: zero gradient
  EXPECT_EQ(w.raw(), Tensor::Zero(3, 1));
  EXPECT_EQ(code_of([&] { weight_gradient_step(w, 0.1); }), ErrorCode::MissingGradient);
}

TEST(RegLoss, ZeroWhenStudentEqualsTeacher) {
  const ModelParams student = model(3, 5);
  const ModelParams teacher = student.snapshot();
  std::mt19937_64 rng(6);
  const Tensor x = gaussian(8, 4, rng);
  AdaptiveWeights w(gaussian(3, 1, rng));
  for (DistanceKind d : {DistanceKind::mmd, DistanceKind::l2, DistanceKind::cosine}) {
    for (bool adaptive : {true, false}) {
      RegularizerConfig cfg = RegularizerConfig::all_layers(3);
      cfg.distance = d;
      cfg.adaptive = adaptive;
      EXPECT_NEAR(reg_loss(teacher, student, w, x, cfg), 0.0, 1e-12);
    }
  }
}

TEST(RegLoss, SingleLayerMaskIsThatLayersDistance) {
  const ModelParams teacher = model(3, 7).snapshot();
  const ModelParams student = perturbed(model(3, 7), 8);
  std::mt19937_64 rng(9);
  const Tensor x = gaussian(10, 4, rng);
  const auto tf = forward_features(teacher, x), sf = forward_features(student, x);
  for (int k = 1; k <= 3; ++k) {
    RegularizerConfig cfg = RegularizerConfig::all_layers(3);
    cfg.layer_mask = {k};
    cfg.adaptive = false;
    const double want = oracle_layer_mmd(tf[k - 1], sf[k - 1], cfg.kernel.bandwidths);
    EXPECT_NEAR(reg_loss(teacher, student, AdaptiveWeights(Tensor::Zero(3, 1)), x, cfg), want, 1e-12);
  }
}

TEST(RegLoss, PerLayerDecomposition) {
  const ModelParams teacher = model(4, 10).snapshot();
  const ModelParams student = perturbed(model(4, 10), 11);
  std::mt19937_64 rng(12);
  const Tensor x = gaussian(12, 4, rng);
  const AdaptiveWeights w(gaussian(4, 1, rng));
  const RegularizerConfig cfg = RegularizerConfig::all_layers(4);
  const auto tf = forward_features(teacher, x), sf = forward_features(student, x);
  const Tensor wn = w.normalized();
  double want = 0.0;
  for (int k = 0; k < 4; ++k) want += wn(k, 0) * oracle_layer_mmd(tf[k], sf[k], cfg.kernel.bandwidths);
  EXPECT_NEAR(reg_loss(teacher, student, w, x, cfg), want, 1e-12);
}

TEST(RegLoss, MaskConsistency) {
  const ModelParams teacher = model(5, 13).snapshot();
  const ModelParams student = perturbed(model(5, 13), 14);
  std::mt19937_64 rng(15);
  const Tensor x = gaussian(9, 4, rng);
  const AdaptiveWeights w(gaussian(5, 1, rng));
  for (DistanceKind d : {DistanceKind::mmd, DistanceKind::l2, DistanceKind::cosine}) {
    RegularizerConfig full = RegularizerConfig::all_layers(5);
    full.distance = d;
    const auto dists = layer_distances(teacher, bind_constants(student), x, full);
    RegularizerConfig masked = full;
    masked.layer_mask = {2, 5};
    // Weights outside the mask forced to zero, then renormalised over it.
    const double e2 = std::exp(w.raw()(1, 0)), e5 = std::exp(w.raw()(4, 0));
    const double want = (e2 * dists[1].item() + e5 * dists[4].item()) / (e2 + e5);
    EXPECT_NEAR(reg_loss(teacher, student, w, x, masked), want, 1e-12);
  }
}

TEST(RegLoss, Errors) {
  const ModelParams live = model(2, 16);
  std::mt19937_64 rng(17);
  const AdaptiveWeights w(Tensor::Zero(2, 1));
  RegularizerConfig cfg = RegularizerConfig::all_layers(2);
  EXPECT_EQ(code_of([&] { reg_loss(live, live, w, gaussian(4, 4, rng), cfg); }), ErrorCode::FrozenViolation);
  EXPECT_EQ(code_of([&] { reg_loss(live.snapshot(), live, w, gaussian(1, 4, rng), cfg); }), ErrorCode::BatchTooSmall);
  cfg.distance = DistanceKind::l2;
  EXPECT_NO_THROW(reg_loss(live.snapshot(), live, w, gaussian(1, 4, rng), cfg));
}

TEST(RegLoss, GradientsOverThetaAndWeights) {
  const ModelParams teacher = model(3, 18).snapshot();
  const ModelParams student = perturbed(model(3, 18), 19, 0.3);
  std::mt19937_64 rng(20);
  const Tensor x = gaussian(8, 4, rng);
  const Tensor raw = gaussian(3, 1, rng);
  for (DistanceKind d : {DistanceKind::mmd, DistanceKind::l2, DistanceKind::cosine}) {
    RegularizerConfig cfg = RegularizerConfig::all_layers(3);
    cfg.distance = d;
    BandwidthMemo memo;
    std::vector<Tensor> params;
    for (std::size_t i = 0; i < student.parameter_count(); ++i) params.push_back(student.parameter(i));
    params.push_back(raw);
    const std::vector<Activation> acts{Activation::relu, Activation::relu, Activation::relu, Activation::identity};
    const double err = finite_diff_check<double>(
        [&](std::span<const Node> p) {
          return reg_loss(teacher, BoundModel{{p.begin(), p.end() - 1}, acts}, p.back(), x, cfg, &memo);
        },
        params, 1e-5);
    EXPECT_LT(err, 1e-4) << "distance " << static_cast<int>(d);
  }
}

TEST(RegLoss, EqualLayerDistancesKeepWeightsUniform) {
  // Layer 2 is the identity on relu outputs, so Z2 == Z1 for both networks.
  ModelParams base = model(2, 21);
  base.set_parameter(2, Tensor::Identity(6, 6));
  base.set_parameter(3, Tensor::Zero(1, 6));
  ModelParams student = perturbed(base, 22);
  student.set_parameter(2, Tensor::Identity(6, 6));
  student.set_parameter(3, Tensor::Zero(1, 6));
  std::mt19937_64 rng(23);
  const Tensor x = gaussian(8, 4, rng);
  AdaptiveWeights w(Tensor::Constant(2, 1, 0.4));
  const RegularizerConfig cfg = RegularizerConfig::all_layers(2);
  Node raw = w.bind();
  Node loss = reg_loss(base.snapshot(), bind_variables(student), raw, x, cfg);
  backward(loss);
  EXPECT_EQ(raw.gradient()(0, 0), raw.gradient()(1, 0));
  w.gradient_step(0.5);
  EXPECT_NEAR(w.normalized()(0, 0), 0.5, 1e-15);
}

// One small step against the gradient does not increase the loss.
TEST(RegLoss, DescentSanity) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const ModelParams teacher = model(3, 100 + seed, 0.5).snapshot();
    ModelParams student = perturbed(model(3, 100 + seed, 0.5), 200 + seed, 0.1);
    std::mt19937_64 rng(300 + seed);
    const Tensor x = gaussian(8, 4, rng);
    const AdaptiveWeights w(gaussian(3, 1, rng));
    bool cosine_defined = true;
    for (const ModelParams* m : {&teacher, static_cast<const ModelParams*>(&student)}) {
      for (const Tensor& f : forward_features(*m, x)) cosine_defined &= (f.rowwise().norm().array() > 0).all();
    }
    for (DistanceKind d : {DistanceKind::mmd, DistanceKind::l2, DistanceKind::cosine}) {
      if (d == DistanceKind::cosine && !cosine_defined) continue;
      RegularizerConfig cfg = RegularizerConfig::all_layers(3);
      cfg.distance = d;
      BandwidthMemo memo;
      const BoundModel b = bind_variables(student);
      Node loss = reg_loss(teacher, b, Node::constant(w.raw()), x, cfg, &memo);
      backward(loss);
      std::vector<Tensor> g;
      for (const Node& p : b.params) g.push_back(p.gradient());
      for (double step : {1e-4, 1e-5}) {
        ModelParams next = student;
        next.sgd_update(g, step);
        const double after =
            reg_loss(teacher, bind_constants(next), Node::constant(w.raw()), x, cfg, &memo).item();
        EXPECT_LE(after, loss.item() + 1e-9);
      }
    }
  }
}

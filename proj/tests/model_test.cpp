#include <gtest/gtest.h>

#include <limits>
#include <random>

#include "crl/model.hpp"
#include "oracle.hpp"

using namespace crl;

namespace {

// Scalar probe sum(A .* logits) + sum(F .* features) whose gradients w.r.t.
// logits and features are A and F.
double probe(const ModelParams& params, const Matrix& x, const Matrix& a, const Matrix& f) {
  const ForwardTrace t = forward(params, x);
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a.data()[k] * t.logits.data()[k];
  for (std::size_t k = 0; k < f.size(); ++k) s += f.data()[k] * t.features().data()[k];
  return s;
}

Vector flatten(ModelParams& params, const GradSet& grads, bool take_grads) {
  Vector out;
  for_each_tensor(params, grads, [&](Vector& w, const Vector& g) {
    const Vector& src = take_grads ? g : w;
    out.insert(out.end(), src.begin(), src.end());
  });
  return out;
}

void unflatten(ModelParams& params, const GradSet& grads, const Vector& flat) {
  std::size_t at = 0;
  for_each_tensor(params, grads, [&](Vector& w, const Vector&) {
    for (double& v : w) v = flat[at++];
  });
}

double min_abs_pre_activation(const ModelParams& params, const Matrix& x) {
  double m = std::numeric_limits<double>::infinity();
  for (const Matrix& z : forward(params, x).pre_activations)
    for (double v : z.data()) m = std::min(m, std::abs(v));
  return m;
}

}  // namespace

TEST(InitModel, ShapesAndDeterminism) {
  const ModelParams a = init_model({2, 4, 3}, 1);
  ASSERT_EQ(a.encoder.size(), 1u);
  EXPECT_EQ(a.encoder[0].fan_in(), 2u);
  EXPECT_EQ(a.encoder[0].fan_out(), 4u);
  EXPECT_EQ(a.classifier.fan_in(), 4u);
  EXPECT_EQ(a.classifier.fan_out(), 3u);
  EXPECT_EQ(a.layer_sizes(), (std::vector<std::size_t>{2, 4, 3}));
  EXPECT_EQ(init_model({2, 4, 3}, 1), a);
  EXPECT_NE(init_model({2, 4, 3}, 2), a);
  for (double b : a.encoder[0].bias) EXPECT_EQ(b, 0.0);
  const double limit = std::sqrt(6.0 / 2.0);
  for (double w : a.encoder[0].weight.data()) EXPECT_LE(std::abs(w), limit);
}

TEST(InitModel, TooFewSizes) {
  try {
    init_model({2, 3}, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
  }
}

TEST(Forward, ZeroWeightsGiveUniformSoftmax) {
  ModelParams p = init_model({3, 5, 4}, 0);
  for (auto* layer : {&p.encoder[0], &p.classifier}) {
    for (double& w : layer->weight.data()) w = 0.0;
  }
  const Matrix probs = predict_proba(p, Matrix(2, 3, 1.5));
  for (double v : probs.data()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Forward, BatchIndependence) {
  const ModelParams p = init_model({3, 6, 4, 2}, 4);
  const Matrix one(1, 3, Vector{0.3, -1.2, 2.0});
  const Matrix two(2, 3, Vector{0.3, -1.2, 2.0, 0.3, -1.2, 2.0});
  const Matrix a = predict_logits(p, one), b = predict_logits(p, two);
  for (std::size_t c = 0; c < 2; ++c) {
    EXPECT_EQ(a(0, c), b(0, c));
    EXPECT_EQ(a(0, c), b(1, c));
  }
}

TEST(Forward, HandComputedNet) {
  // 2 -> 2 (identity, ReLU) -> 2 (identity) with biases.
  ModelParams p = init_model({2, 2, 2}, 0);
  p.encoder[0].weight = Matrix(2, 2, Vector{1.0, 0.0, 0.0, 1.0});
  p.encoder[0].bias = {0.5, -1.0};
  p.classifier.weight = Matrix(2, 2, Vector{2.0, 0.0, 0.0, 3.0});
  p.classifier.bias = {0.1, 0.2};
  const ForwardTrace t = forward(p, Matrix(1, 2, Vector{1.0, 0.5}));
  // hidden = relu([1.5, -0.5]) = [1.5, 0]; logits = [3.1, 0.2]
  EXPECT_DOUBLE_EQ(t.features()(0, 0), 1.5);
  EXPECT_DOUBLE_EQ(t.features()(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(t.logits(0, 0), 3.1);
  EXPECT_DOUBLE_EQ(t.logits(0, 1), 0.2);
}

TEST(Forward, ZeroInputUsesBiasPath) {
  ModelParams p = init_model({3, 4, 2}, 9);
  p.encoder[0].bias = {0.2, -0.3, 0.4, 0.0};
  p.classifier.bias = {0.7, -0.1};
  const Matrix logits = predict_logits(p, Matrix(1, 3));
  // relu(bias) through the classifier.
  const Vector h{0.2, 0.0, 0.4, 0.0};
  for (std::size_t c = 0; c < 2; ++c) {
    double expect = p.classifier.bias[c];
    for (std::size_t k = 0; k < 4; ++k) expect += h[k] * p.classifier.weight(k, c);
    EXPECT_NEAR(logits(0, c), expect, 1e-15);
  }
}

TEST(Forward, DimensionMismatch) {
  const ModelParams p = init_model({3, 4, 2}, 0);
  try {
    forward(p, Matrix(1, 2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Dimension);
  }
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  ModelParams p = init_model({2, 8, 4, 3}, 1);
  std::mt19937_64 rng(1);
  const Matrix x = oracle::random_matrix(5, 2, rng);
  const ForwardTrace t = forward(p, x);
  const GradSet g = backward(p, t, Matrix(5, 3), Matrix(5, 4), true);
  for (double v : flatten(p, g, true)) EXPECT_EQ(v, 0.0);
  for (double v : g.input->data()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, ParameterGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(2024);
  for (int draw = 0; draw < 20; ++draw) {
    ModelParams p = init_model({2, 8, 4, 3}, static_cast<std::uint64_t>(draw));
    Matrix x = oracle::random_matrix(6, 2, rng);
    // Finite differences are invalid across a ReLU kink; redraw inputs that
    // put a pre-activation within 1e-3 of zero.
    while (min_abs_pre_activation(p, x) < 1e-3) x = oracle::random_matrix(6, 2, rng);
    const Matrix a = oracle::random_matrix(6, 3, rng);
    const Matrix f = oracle::random_matrix(6, 4, rng);
    const GradSet g = backward(p, forward(p, x), a, f, true);
    const Vector analytic = flatten(p, g, true);
    const Vector theta = flatten(p, g, false);
    const Vector fd = oracle::central_diff(
        [&](const Vector& v) {
          ModelParams q = p;
          unflatten(q, g, v);
          return probe(q, x, a, f);
        },
        theta);
    EXPECT_LT(oracle::rel_error(analytic, fd), 1e-4) << "draw " << draw;

    const Vector fdx = oracle::central_diff(
        [&](const Vector& v) { return probe(p, Matrix(x.rows(), x.cols(), v), a, f); }, x.data());
    EXPECT_LT(oracle::rel_error(g.input->data(), fdx), 1e-4) << "draw " << draw;
  }
}

TEST(Backward, FeatureGradientOnlyReachesEncoder) {
  ModelParams p = init_model({3, 5, 4, 2}, 3);
  std::mt19937_64 rng(3);
  const Matrix x = oracle::random_matrix(4, 3, rng);
  const GradSet g = backward(p, forward(p, x), std::nullopt, oracle::random_matrix(4, 4, rng));
  for (double v : g.classifier.weight.data()) EXPECT_EQ(v, 0.0);
  for (double v : g.classifier.bias) EXPECT_EQ(v, 0.0);
  double encoder_mass = 0.0;
  for (double v : g.encoder[0].weight.data()) encoder_mass += std::abs(v);
  EXPECT_GT(encoder_mass, 0.0);
}

TEST(SgdStep, Examples) {
  ModelParams p = init_model({1, 1, 2}, 0);
  p.encoder[0].weight = Matrix(1, 1, Vector{1.0});
  GradSet g;
  g.encoder = {{Matrix(1, 1, Vector{2.0}), Vector{0.0}}};
  g.classifier = {Matrix(1, 2), Vector(2, 0.0)};
  const ModelParams before = p;
  sgd_step(p, g, 0.1);
  EXPECT_DOUBLE_EQ(p.encoder[0].weight(0, 0), 0.8);
  EXPECT_EQ(p.classifier, before.classifier);

  try {
    sgd_step(p, g, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
  }
}

TEST(SgdOptimizer, PlainMatchesSgdStep) {
  std::mt19937_64 rng(8);
  ModelParams a = init_model({3, 4, 2}, 5), b = a;
  SgdOptimizer opt;
  for (int k = 0; k < 3; ++k) {
    const Matrix x = oracle::random_matrix(2, 3, rng);
    const GradSet ga = backward(a, forward(a, x), oracle::random_matrix(2, 2, rng), std::nullopt);
    opt.step(a, ga, 0.05);
    sgd_step(b, ga, 0.05);
    EXPECT_EQ(a, b);
  }
}

TEST(SgdOptimizer, MomentumAccumulates) {
  ModelParams p = init_model({1, 1, 2}, 0);
  p.encoder[0].weight = Matrix(1, 1, Vector{1.0});
  GradSet g;
  g.encoder = {{Matrix(1, 1, Vector{1.0}), Vector{0.0}}};
  g.classifier = {Matrix(1, 2), Vector(2, 0.0)};
  SgdOptimizer opt(0.5);
  opt.step(p, g, 0.1);  // v = 1, w = 0.9
  opt.step(p, g, 0.1);  // v = 1.5, w = 0.75
  EXPECT_NEAR(p.encoder[0].weight(0, 0), 0.75, 1e-15);
}

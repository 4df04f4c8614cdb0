#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "iif/dataset.hpp"
#include "iif/error.hpp"
#include "iif/margins.hpp"
#include "iif/model.hpp"
#include "iif/random.hpp"
#include "oracles.hpp"

namespace {

using iif::ClassifierModel;
using iif::ClassWeights;
using iif::HeadKind;
using iif::LabeledSample;
using iif::LossKind;
using iif::Vector;

double vector_relative_error(const Vector& a, const Vector& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
}

Vector numeric_logit_gradient(const std::function<double(const std::vector<double>&)>& f, const Vector& z) {
  Vector g(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) g[i] = oracle::central_difference(f, z, i);
  return g;
}

TEST(LogitLoss, IifCeWorkedExample) {
  const auto kind = LossKind::iif_ce(ClassWeights{{std::log(2.0), std::log(2.0)}});
  const auto l = iif::logit_loss_and_grad(std::vector{0.0, 0.0}, 1, kind);
  EXPECT_NEAR(l.loss, 0.6931471805599453, 1e-15);
  EXPECT_NEAR(l.grad[1], std::log(2.0) * (0.5 - 1.0), 1e-15);
  EXPECT_NEAR(l.grad[0], std::log(2.0) * 0.5, 1e-15);
}

TEST(LogitLoss, OneHotPredictionHasZeroGradient) {
  const auto kind = LossKind::iif_ce(ClassWeights{{1.0, 2.0, 3.0}});
  const auto l = iif::logit_loss_and_grad(std::vector{-400.0, 400.0, -400.0}, 1, kind);
  EXPECT_EQ(l.loss, 0.0);
  for (double g : l.grad) EXPECT_EQ(g, 0.0);
}

TEST(LogitLoss, IifCeMatchesFiniteDifferences) {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<std::size_t> classes(2, 12);
  for (int i = 0; i < 200; ++i) {
    const auto c = classes(rng);
    const auto z = oracle::uniform_vector(rng, c, -4.0, 4.0);
    const auto w = oracle::uniform_vector(rng, c, 0.1, 6.0);
    const std::size_t y = rng() % c;
    const auto l = iif::logit_loss_and_grad(z, y, LossKind::iif_ce(ClassWeights{w}));
    EXPECT_NEAR(l.loss, oracle::iif_ce(z, w, y), 1e-12);
    const auto fd = numeric_logit_gradient([&](const auto& v) { return oracle::iif_ce(v, w, y); }, z);
    ASSERT_LT(vector_relative_error(l.grad, fd), 1e-5) << "case " << i;
  }
}

TEST(LogitLoss, CslMatchesFiniteDifferences) {
  std::mt19937_64 rng(22);
  for (int i = 0; i < 200; ++i) {
    const std::size_t c = 2 + rng() % 10;
    const auto z = oracle::uniform_vector(rng, c, -4.0, 4.0);
    const auto a = oracle::uniform_vector(rng, c, 0.1, 6.0);
    const std::size_t y = rng() % c;
    const auto l = iif::logit_loss_and_grad(z, y, LossKind::csl(ClassWeights{a}));
    EXPECT_NEAR(l.loss, oracle::csl(z, a, y), 1e-12);
    const auto fd = numeric_logit_gradient([&](const auto& v) { return oracle::csl(v, a, y); }, z);
    ASSERT_LT(vector_relative_error(l.grad, fd), 1e-5) << "case " << i;
  }
}

TEST(LogitLoss, LdamMatchesFiniteDifferences) {
  const auto table = iif::ClassFrequencyTable::from_counts({400, 90, 16, 3});
  const auto kind = LossKind::ldam(table, 0.5);
  EXPECT_NEAR(kind.margins[2], 0.25, 1e-15);
  std::mt19937_64 rng(23);
  for (int i = 0; i < 100; ++i) {
    const auto z = oracle::uniform_vector(rng, 4, -3.0, 3.0);
    const std::size_t y = rng() % 4;
    auto f = [&](const std::vector<double>& v) {
      auto shifted = v;
      shifted[y] -= 0.5 / std::pow(static_cast<double>(table.image_freq()[y]), 0.25);
      return -std::log(oracle::naive_softmax(shifted)[y]);
    };
    const auto l = iif::logit_loss_and_grad(z, y, kind);
    EXPECT_NEAR(l.loss, f(z), 1e-12);
    ASSERT_LT(vector_relative_error(l.grad, numeric_logit_gradient(f, z)), 1e-5);
  }
}

TEST(LogitLoss, UnitWeightsReduceToSoftmaxCe) {
  std::mt19937_64 rng(24);
  for (int i = 0; i < 200; ++i) {
    const std::size_t c = 2 + rng() % 20;
    const auto z = oracle::uniform_vector(rng, c, -10.0, 10.0);
    const std::size_t y = rng() % c;
    const auto a = iif::logit_loss_and_grad(z, y, LossKind::iif_ce(ClassWeights::uniform(c)));
    const auto b = iif::logit_loss_and_grad(z, y, LossKind::softmax_ce());
    ASSERT_NEAR(a.loss, b.loss, 1e-10);
    for (std::size_t k = 0; k < c; ++k) ASSERT_NEAR(a.grad[k], b.grad[k], 1e-10);
  }
}

TEST(LogitLoss, CslAndIifCeAgreeOnTheTargetAndDifferOnNegatives) {
  const Vector w{0.8, 2.5, 4.0};
  const Vector z{0.3, -0.2, 0.1};
  const std::size_t y = 1;
  const auto iif_ce = iif::logit_loss_and_grad(z, y, LossKind::iif_ce(ClassWeights{w}));
  // CSL on the weighted logits with alpha_y = w_y: same positive-class gradient.
  Vector wz(3);
  for (std::size_t k = 0; k < 3; ++k) wz[k] = w[k] * z[k];
  const auto csl = iif::logit_loss_and_grad(wz, y, LossKind::csl(ClassWeights{w}));
  EXPECT_NEAR(iif_ce.grad[y], csl.grad[y], 1e-14);
  for (std::size_t i : {0u, 2u}) {
    EXPECT_NEAR(iif_ce.grad[i], csl.grad[i] * w[i] / w[y], 1e-14);
    EXPECT_GT(std::abs(iif_ce.grad[i] - csl.grad[i]), 1e-3);
  }
}

TEST(LogitLoss, LossIsNonNegativeAndGrowsWithTargetWeight) {
  std::mt19937_64 rng(25);
  for (int i = 0; i < 200; ++i) {
    const auto z = oracle::uniform_vector(rng, 5, -5.0, 5.0);
    auto w = oracle::uniform_vector(rng, 5, 0.0, 8.0);
    EXPECT_GE(iif::logit_loss_and_grad(z, 2, LossKind::iif_ce(ClassWeights{w})).loss, 0.0);
  }
  // With q held fixed the target gradient is w_y (q_y - 1).
  double prev = 0.0;
  for (double wy : {0.5, 1.0, 2.0, 4.0}) {
    const auto l = iif::logit_loss_and_grad(std::vector{0.0, 0.0}, 1, LossKind::iif_ce(ClassWeights{{1.0, wy}}));
    EXPECT_GT(std::abs(l.grad[1]), prev);
    prev = std::abs(l.grad[1]);
  }
}

TEST(LogitLoss, Errors) {
  EXPECT_THROW(iif::logit_loss_and_grad(std::vector{1.0, 2.0}, 2, LossKind::softmax_ce()), iif::DomainError);
  EXPECT_THROW(iif::logit_loss_and_grad(std::vector{1.0, 2.0}, 0, LossKind::iif_ce(ClassWeights::uniform(3))),
               iif::DimensionError);
}

// ---- model level ----------------------------------------------------------

ClassifierModel random_model(std::mt19937_64& rng, std::size_t in, std::size_t c, std::size_t hidden,
                             HeadKind head) {
  iif::Rng r(rng());
  auto m = iif::init_model({in, c, hidden, head, 16.0}, r);
  std::normal_distribution<double> g(0.0, 0.3);
  for (auto& v : m.head.bias) v = g(rng);
  if (m.hidden)
    for (auto& v : m.hidden->bias) v = g(rng);
  return m;
}

std::vector<double*> parameters(ClassifierModel& m) {
  std::vector<double*> p;
  if (m.hidden) {
    for (auto& v : m.hidden->weight.flat()) p.push_back(&v);
    for (auto& v : m.hidden->bias) p.push_back(&v);
  }
  for (auto& v : m.head.weight.flat()) p.push_back(&v);
  for (auto& v : m.head.bias) p.push_back(&v);
  return p;
}

Vector flatten(const iif::Gradients& g) {
  Vector out;
  if (g.hidden) {
    out.insert(out.end(), g.hidden->weight.flat().begin(), g.hidden->weight.flat().end());
    out.insert(out.end(), g.hidden->bias.begin(), g.hidden->bias.end());
  }
  out.insert(out.end(), g.head.weight.flat().begin(), g.head.weight.flat().end());
  out.insert(out.end(), g.head.bias.begin(), g.head.bias.end());
  return out;
}

bool near_relu_kink(const ClassifierModel& m, const std::vector<LabeledSample>& batch) {
  if (!m.hidden) return false;
  for (const auto& s : batch)
    for (double v : iif::forward_trace(m, s.features).pre_activation)
      if (std::abs(v) < 1e-3) return true;
  return false;
}

bool dead_feature(const ClassifierModel& m, const std::vector<LabeledSample>& batch) {
  for (const auto& s : batch) {
    bool any = false;
    for (std::size_t j = 0; j < m.hidden->weight.rows(); ++j) {
      double a = m.hidden->bias[j];
      for (std::size_t k = 0; k < s.features.size(); ++k) a += m.hidden->weight(j, k) * s.features[k];
      any = any || a > 0.0;
    }
    if (!any) return true;
  }
  return false;
}

void check_parameter_gradients(HeadKind head, std::size_t hidden, const LossKind& kind, std::size_t c,
                               std::uint64_t seed, int cases) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  int checked = 0;
  while (checked < cases) {
    auto model = random_model(rng, 4, c, hidden, head);
    std::vector<LabeledSample> batch(3);
    for (auto& s : batch) {
      s.features = {g(rng), g(rng), g(rng), g(rng)};
      s.label = rng() % c;
    }
    if (head == HeadKind::Cosine && hidden > 0 && dead_feature(model, batch)) continue;
    if (near_relu_kink(model, batch)) continue;
    const auto analytic = flatten(iif::loss_and_grad(model, batch, kind).grads);
    auto params = parameters(model);
    Vector numeric(params.size());
    const double h = 1e-5;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double p0 = *params[i];
      *params[i] = p0 + h;
      const double up = iif::loss_and_grad(model, batch, kind).loss;
      *params[i] = p0 - h;
      const double down = iif::loss_and_grad(model, batch, kind).loss;
      *params[i] = p0;
      numeric[i] = (up - down) / (2.0 * h);
    }
    ASSERT_LT(vector_relative_error(analytic, numeric), 1e-5) << "case " << checked;
    ++checked;
  }
}

LossKind iif_kind(std::size_t c) {
  Vector w(c);
  for (std::size_t k = 0; k < c; ++k) w[k] = 1.0 + 0.7 * static_cast<double>(k);
  return LossKind::iif_ce(ClassWeights{w});
}

TEST(ParameterGradients, DotHead) {
  check_parameter_gradients(HeadKind::Dot, 0, iif_kind(3), 3, 31, 25);
  check_parameter_gradients(HeadKind::Dot, 0, LossKind::csl(ClassWeights{{2.0, 1.0, 0.5}}), 3, 32, 25);
}

TEST(ParameterGradients, CosineHead) {
  check_parameter_gradients(HeadKind::Cosine, 0, iif_kind(4), 4, 33, 25);
  check_parameter_gradients(HeadKind::Cosine, 0, LossKind::csl(ClassWeights{{2.0, 1.0, 0.5, 3.0}}), 4, 34, 25);
}

TEST(ParameterGradients, HiddenLayer) {
  check_parameter_gradients(HeadKind::Dot, 5, iif_kind(3), 3, 35, 15);
  check_parameter_gradients(HeadKind::Cosine, 5, iif_kind(3), 3, 36, 15);
  check_parameter_gradients(HeadKind::Dot, 5,
                            LossKind::ldam(iif::ClassFrequencyTable::from_counts({50, 10, 2}), 0.5), 3, 37, 15);
}

TEST(Forward, IdentityWeights) {
  ClassifierModel m;
  m.head.weight = iif::Matrix(3, 3);
  for (std::size_t i = 0; i < 3; ++i) m.head.weight(i, i) = 1.0;
  m.head.bias.assign(3, 0.0);
  EXPECT_EQ(iif::forward(m, std::vector{1.0, 0.0, 0.0}), (Vector{1.0, 0.0, 0.0}));
  EXPECT_THROW(iif::forward(m, std::vector{1.0, 0.0}), iif::DimensionError);
}

TEST(Forward, CosineHeadParallelWeightGivesScale) {
  ClassifierModel m;
  m.head_kind = HeadKind::Cosine;
  m.cosine_scale = 16.0;
  m.head.weight = iif::Matrix(2, 2);
  m.head.weight(0, 0) = 3.0;
  m.head.weight(0, 1) = 4.0;
  m.head.weight(1, 0) = -1.0;
  const auto z = iif::forward(m, std::vector{0.6, 0.8});
  EXPECT_NEAR(z[0], 16.0, 1e-12);
  EXPECT_THROW(iif::forward(m, std::vector{0.0, 0.0}), iif::DomainError);
}

TEST(Forward, BatchEqualsSingles) {
  std::mt19937_64 rng(40);
  const auto m = random_model(rng, 4, 3, 6, HeadKind::Dot);
  const std::vector<LabeledSample> batch = {{{0.1, 0.2, -0.3, 1.0}, 0}, {{-1.0, 0.5, 0.0, 2.0}, 2}};
  const auto out = iif::forward_batch(m, batch);
  EXPECT_EQ(out[0], iif::forward(m, batch[0].features));
  EXPECT_EQ(out[1], iif::forward(m, batch[1].features));
}

TEST(LossAndGrad, NonFiniteLossReportsTheBatch) {
  std::mt19937_64 rng(41);
  auto m = random_model(rng, 2, 2, 0, HeadKind::Dot);
  m.head.weight(0, 0) = INFINITY;
  const std::vector<LabeledSample> batch = {{{1.0, 1.0}, 1}};
  try {
    iif::loss_and_grad(m, batch, LossKind::softmax_ce(), 17);
    FAIL() << "expected a training error";
  } catch (const iif::TrainingError& e) {
    EXPECT_EQ(e.index(), 17u);
  }
}

// ---- optimiser ------------------------------------------------------------

ClassifierModel tiny_model() {
  ClassifierModel m;
  m.head.weight = iif::Matrix(1, 2);
  m.head.weight(0, 0) = 1.0;
  m.head.weight(0, 1) = -2.0;
  m.head.bias = {0.5};
  return m;
}

iif::Gradients gradient_of(const ClassifierModel& m, double gw0, double gw1, double gb) {
  auto g = iif::Gradients::zeros_like(m);
  g.head.weight(0, 0) = gw0;
  g.head.weight(0, 1) = gw1;
  g.head.bias[0] = gb;
  return g;
}

TEST(Sgd, ZeroGradientLeavesParameters) {
  auto m = tiny_model();
  const auto before = m;
  iif::SgdState st;
  iif::sgd_step(m, iif::Gradients::zeros_like(m), {0.1, 0.0, 0.9}, st);
  EXPECT_EQ(m, before);
}

TEST(Sgd, PlainStep) {
  auto m = tiny_model();
  iif::SgdState st;
  iif::sgd_step(m, gradient_of(m, 0.25, 1.0, -0.5), {1.0, 0.0, 0.0}, st);
  EXPECT_EQ(m.head.weight(0, 0), 0.75);
  EXPECT_EQ(m.head.weight(0, 1), -3.0);
  EXPECT_EQ(m.head.bias[0], 1.0);
}

TEST(Sgd, MomentumRecurrence) {
  auto m = tiny_model();
  iif::SgdState st;
  const double lr = 0.1, mu = 0.9, wd = 0.01;
  double p = 1.0, v = 0.0;
  for (double g : {0.5, -0.2, 0.3}) {
    iif::sgd_step(m, gradient_of(m, g, 0.0, 0.0), {lr, wd, mu}, st);
    v = mu * v + g + wd * p;
    p = p - lr * v;
    EXPECT_NEAR(m.head.weight(0, 0), p, 1e-15);
  }
  EXPECT_THROW(iif::sgd_step(m, gradient_of(m, 0, 0, 0), {0.0, 0.0, 0.0}, st), iif::DomainError);
}

TEST(Sgd, FrozenHiddenLayer) {
  std::mt19937_64 rng(42);
  auto m = random_model(rng, 3, 2, 4, HeadKind::Dot);
  const auto hidden = *m.hidden;
  auto g = iif::Gradients::zeros_like(m);
  for (auto& v : g.hidden->weight.flat()) v = 1.0;
  for (auto& v : g.head.weight.flat()) v = 1.0;
  iif::SgdState st;
  iif::sgd_step(m, g, {0.1, 0.1, 0.9}, st, false);
  EXPECT_EQ(*m.hidden, hidden);
}

TEST(WeightNorms, ZeroAndOrthonormalRows) {
  ClassifierModel m;
  m.head.weight = iif::Matrix(3, 3);
  EXPECT_EQ(iif::weight_norms(m), Vector(3, 0.0));
  const double s = 1.0 / std::sqrt(2.0);
  m.head.weight(0, 0) = s;
  m.head.weight(0, 1) = s;
  m.head.weight(1, 0) = s;
  m.head.weight(1, 1) = -s;
  m.head.weight(2, 2) = 1.0;
  for (double n : iif::weight_norms(m)) EXPECT_NEAR(n, 1.0, 1e-15);
}

TEST(InitModel, DeterministicAndScaled) {
  iif::Rng a(5), b(5);
  const auto m1 = iif::init_model({50, 40, 0, HeadKind::Dot, 16.0}, a);
  const auto m2 = iif::init_model({50, 40, 0, HeadKind::Dot, 16.0}, b);
  EXPECT_EQ(m1, m2);
  double ss = 0.0;
  for (double v : m1.head.weight.flat()) ss += v * v;
  const double var = ss / static_cast<double>(m1.head.weight.flat().size());
  EXPECT_NEAR(var, 2.0 / 50.0, 0.2 * 2.0 / 50.0);
  EXPECT_EQ(m1.head.bias, Vector(40, 0.0));
}

}  // namespace

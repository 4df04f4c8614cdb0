#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "iif/dataset.hpp"
#include "iif/error.hpp"
#include "iif/eval.hpp"
#include "iif/margins.hpp"
#include "oracles.hpp"

namespace {

using iif::ClassFrequencyTable;
using iif::GroupSplit;
using iif::MarginScheme;
using iif::Vector;

const ClassFrequencyTable kTable = ClassFrequencyTable::from_counts({300, 120, 40, 15, 6, 2});

std::vector<std::size_t> balanced_labels(std::size_t c, std::size_t per_class) {
  std::vector<std::size_t> l;
  for (std::size_t y = 0; y < c; ++y)
    for (std::size_t i = 0; i < per_class; ++i) l.push_back(y);
  return l;
}

TEST(EvaluateLogits, PerfectModelUnderPositiveWeights) {
  const auto labels = balanced_labels(6, 5);
  std::vector<Vector> logits;
  for (auto y : labels) {
    Vector z(6, 0.0);
    z[y] = 10.0;
    logits.push_back(z);
  }
  const auto scheme = MarginScheme::multiplicative(iif::compute_weights(kTable, iif::Variant::Smooth));
  const auto r = iif::evaluate_logits(logits, labels, scheme, GroupSplit::terciles(kTable), 6);
  EXPECT_EQ(r.overall_top1, 1.0);
  EXPECT_EQ(r.group(iif::Group::Few), 1.0);
  EXPECT_TRUE(r.balanced_test);
}

TEST(EvaluateLogits, ConstantModelScoresOneOverC) {
  const auto labels = balanced_labels(6, 7);
  const std::vector<Vector> logits(labels.size(), Vector(6, 0.25));
  const auto r = iif::evaluate_logits(logits, labels, MarginScheme::identity(), GroupSplit::terciles(kTable), 6);
  EXPECT_DOUBLE_EQ(r.overall_top1, 1.0 / 6.0);
  EXPECT_EQ(r.per_class_top1[0], 1.0);
  EXPECT_EQ(r.per_class_top1[3], 0.0);
}

TEST(EvaluateLogits, AbsentClassIsUndefinedAndExcluded) {
  const std::vector<std::size_t> labels = {0, 1, 2, 3, 4};
  std::vector<Vector> logits;
  for (auto y : labels) {
    Vector z(6, 0.0);
    z[y] = 1.0;
    logits.push_back(z);
  }
  const auto r = iif::evaluate_logits(logits, labels, MarginScheme::identity(), GroupSplit::terciles(kTable), 6);
  EXPECT_FALSE(r.per_class_top1[5].has_value());
  EXPECT_EQ(r.group(iif::Group::Few), 1.0);
  EXPECT_FALSE(r.balanced_test);
}

TEST(EvaluateLogits, LogBaseVariantsGiveIdenticalReports) {
  std::mt19937_64 rng(2);
  const auto labels = balanced_labels(6, 50);
  std::vector<Vector> logits;
  for (std::size_t i = 0; i < labels.size(); ++i) logits.push_back(oracle::uniform_vector(rng, 6, -3.0, 3.0));
  const auto split = GroupSplit::terciles(kTable);
  const auto raw = iif::evaluate_logits(
      logits, labels, MarginScheme::multiplicative(iif::compute_weights(kTable, iif::Variant::Raw)), split, 6);
  const auto b10 = iif::evaluate_logits(
      logits, labels, MarginScheme::multiplicative(iif::compute_weights(kTable, iif::Variant::Base10)), split, 6);
  EXPECT_EQ(raw.overall_top1, b10.overall_top1);
  EXPECT_EQ(raw.per_class_top1, b10.per_class_top1);
  EXPECT_EQ(raw.group_top1, b10.group_top1);
}

TEST(EvaluateLogits, PositiveRescalingLeavesAccuracyUnchanged) {
  std::mt19937_64 rng(3);
  const auto labels = balanced_labels(6, 40);
  std::vector<Vector> logits;
  for (std::size_t i = 0; i < labels.size(); ++i) logits.push_back(oracle::uniform_vector(rng, 6, -3.0, 3.0));
  const auto split = GroupSplit::terciles(kTable);
  for (const auto& scheme : {MarginScheme::identity(),
                             MarginScheme::multiplicative(iif::compute_weights(kTable, iif::Variant::Smooth))}) {
    const auto base = iif::evaluate_logits(logits, labels, scheme, split, 6);
    for (double lambda : {0.01, 0.5, 3.0, 1e4}) {
      auto scaled = logits;
      for (auto& z : scaled)
        for (auto& v : z) v *= lambda;
      const auto r = iif::evaluate_logits(scaled, labels, scheme, split, 6);
      EXPECT_EQ(r.per_class_top1, base.per_class_top1) << lambda;
    }
  }
}

TEST(EvaluateLogits, OverallIsTheMeanOfPerClassOnBalancedTest) {
  std::mt19937_64 rng(4);
  const auto labels = balanced_labels(6, 33);
  std::vector<Vector> logits;
  for (std::size_t i = 0; i < labels.size(); ++i) logits.push_back(oracle::uniform_vector(rng, 6, -1.0, 1.0));
  const auto r = iif::evaluate_logits(logits, labels, MarginScheme::identity(), GroupSplit::terciles(kTable), 6);
  double mean = 0.0;
  for (const auto& a : r.per_class_top1) mean += *a;
  EXPECT_NEAR(r.overall_top1, mean / 6.0, 1e-12);
  EXPECT_NEAR(r.balanced_top1(), r.overall_top1, 1e-12);
}

TEST(EvaluateLogits, Errors) {
  const auto split = GroupSplit::terciles(kTable);
  EXPECT_THROW(iif::evaluate_logits(std::vector<Vector>{Vector(6)}, std::vector<std::size_t>{}, MarginScheme::identity(),
                                    split, 6),
               iif::DimensionError);
  EXPECT_THROW(iif::evaluate_logits(std::vector<Vector>{Vector(6)}, std::vector<std::size_t>{9},
                                    MarginScheme::identity(), split, 6),
               iif::DomainError);
  EXPECT_THROW(iif::evaluate_logits(std::vector<Vector>{Vector(6)}, std::vector<std::size_t>{0},
                                    MarginScheme::multiplicative(iif::ClassWeights::uniform(5)), split, 6),
               iif::DimensionError);
}

TEST(NormStats, PopulationStd) {
  const auto s = iif::norm_stats({1.0, 2.0, 3.0, 4.0});
  EXPECT_EQ(s.mean, 2.5);
  EXPECT_NEAR(s.std, std::sqrt(1.25), 1e-15);
}

iif::ClassifierModel linear_model(std::mt19937_64& rng) {
  iif::ClassifierModel m;
  m.head.weight = iif::Matrix(6, 3);
  std::normal_distribution<double> g(0.0, 1.0);
  for (auto& v : m.head.weight.flat()) v = g(rng);
  m.head.bias.assign(6, 0.0);
  return m;
}

std::vector<iif::LabeledSample> random_test(std::mt19937_64& rng) {
  std::vector<iif::LabeledSample> t;
  std::normal_distribution<double> g(0.0, 1.0);
  for (auto y : balanced_labels(6, 20)) t.push_back({{g(rng), g(rng), g(rng)}, y});
  return t;
}

TEST(CompareSchemes, IdentityPairsHaveZeroDeltas) {
  std::mt19937_64 rng(6);
  const auto model = linear_model(rng);
  const auto test = random_test(rng);
  const auto split = GroupSplit::terciles(kTable);
  const std::vector<iif::NamedScheme> schemes = {
      {"none", MarginScheme::identity()},
      {"none", MarginScheme::identity()},
      {"ones", MarginScheme::multiplicative(iif::ClassWeights::uniform(6))}};
  const auto t = iif::compare_schemes(model, test, schemes, split);
  ASSERT_EQ(t.rows.size(), 3u);
  for (const auto& r : t.rows) {
    EXPECT_EQ(r.delta_overall, 0.0);
    for (const auto& d : r.delta_group) EXPECT_EQ(d, 0.0);
  }
}

TEST(CompareSchemes, SingleSchemeAndEmptyList) {
  std::mt19937_64 rng(7);
  const auto model = linear_model(rng);
  const auto test = random_test(rng);
  const auto split = GroupSplit::terciles(kTable);
  const std::vector<iif::NamedScheme> one = {{"iif", MarginScheme::multiplicative(
                                                        iif::compute_weights(kTable, iif::Variant::Smooth))}};
  EXPECT_EQ(iif::compare_schemes(model, test, one, split).rows.size(), 1u);
  EXPECT_THROW(iif::compare_schemes(model, test, std::vector<iif::NamedScheme>{}, split), iif::DomainError);
}

}  // namespace

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "iif/dataset.hpp"
#include "iif/error.hpp"
#include "iif/eval.hpp"
#include "iif/training.hpp"

namespace {

using iif::TrainPlan;

struct Fixture {
  iif::SyntheticData data;
  iif::ClassFrequencyTable freq;
};

Fixture small_data(std::uint64_t seed = 0) {
  iif::DatasetSpec spec;
  spec.num_classes = 4;
  spec.dim = 4;
  spec.max_count = 120;
  spec.imbalance_factor = 20;
  spec.test_per_class = 30;
  spec.seed = seed;
  Fixture f{iif::generate_synthetic(spec), {}};
  f.freq = iif::count_frequencies(f.data.train);
  return f;
}

TrainPlan quick_plan() {
  TrainPlan p;
  p.epochs = 8;
  p.batch_size = 16;
  return p;
}

TEST(LrSchedule, Shapes) {
  iif::LrSchedule c{iif::ScheduleKind::Constant};
  EXPECT_EQ(c.lr_at(0.1, 50, 100), 0.1);
  iif::LrSchedule s{iif::ScheduleKind::Step, 10, 0.5};
  EXPECT_EQ(s.lr_at(0.1, 9, 100), 0.1);
  EXPECT_EQ(s.lr_at(0.1, 10, 100), 0.05);
  EXPECT_EQ(s.lr_at(0.1, 25, 100), 0.025);
  iif::LrSchedule k{iif::ScheduleKind::Cosine};
  EXPECT_EQ(k.lr_at(0.1, 0, 100), 0.1);
  EXPECT_NEAR(k.lr_at(0.1, 50, 100), 0.05, 1e-15);
  EXPECT_NEAR(k.lr_at(0.1, 25, 100), 0.05 * (1.0 + std::cos(std::numbers::pi / 4.0)), 1e-15);
}

TEST(SampleEpoch, RandomIsAPermutationInBatches) {
  const auto f = small_data();
  iif::Rng rng(1);
  const auto batches = iif::sample_epoch(iif::SamplerKind::Random, f.data.train.samples, f.freq, rng, 16);
  std::vector<std::size_t> all;
  for (const auto& b : batches) {
    EXPECT_LE(b.size(), 16u);
    all.insert(all.end(), b.begin(), b.end());
  }
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size(); ++i) ASSERT_EQ(all[i], i);
  EXPECT_EQ(all.size(), f.data.train.size());
}

TEST(SampleEpoch, FixedSeedGivesIdenticalStream) {
  const auto f = small_data();
  for (auto kind : {iif::SamplerKind::Random, iif::SamplerKind::ClassBalanced}) {
    iif::Rng a(9), b(9);
    EXPECT_EQ(iif::sample_epoch(kind, f.data.train.samples, f.freq, a, 8),
              iif::sample_epoch(kind, f.data.train.samples, f.freq, b, 8));
  }
}

TEST(SampleEpoch, ClassBalancedFrequenciesWithinThreeSigma) {
  iif::DatasetSpec spec;
  spec.num_classes = 10;
  spec.dim = 2;
  spec.imbalance_factor = 100;
  spec.max_count = 2000;
  spec.test_per_class = 1;
  const auto data = iif::generate_synthetic(spec);
  const auto freq = iif::count_frequencies(data.train);
  iif::Rng rng(3);
  std::vector<std::size_t> hits(10, 0);
  std::size_t draws = 0;
  while (draws < 10000) {
    for (const auto& b : iif::sample_epoch(iif::SamplerKind::ClassBalanced, data.train.samples, freq, rng, 64)) {
      for (auto i : b) {
        if (draws == 10000) break;
        hits[data.train.samples[i].label] += 1;
        ++draws;
      }
    }
  }
  const double p = 0.1;
  const double sigma = std::sqrt(10000.0 * p * (1.0 - p));
  for (std::size_t c = 0; c < 10; ++c) {
    EXPECT_LT(std::abs(static_cast<double>(hits[c]) - 10000.0 * p), 3.0 * sigma) << "class " << c;
  }
}

TEST(SampleEpoch, BalancedDataSamplersCoincideInExpectation) {
  iif::DatasetSpec spec;
  spec.num_classes = 3;
  spec.dim = 2;
  spec.profile = iif::CountProfile::Explicit;
  spec.explicit_counts = {50, 50, 50};
  const auto data = iif::generate_synthetic(spec);
  const auto freq = iif::count_frequencies(data.train);
  iif::Rng rng(5);
  std::vector<double> hits(3, 0.0);
  for (int e = 0; e < 40; ++e)
    for (const auto& b : iif::sample_epoch(iif::SamplerKind::ClassBalanced, data.train.samples, freq, rng, 32))
      for (auto i : b) hits[data.train.samples[i].label] += 1.0;
  const double n = 40.0 * 150.0;
  for (double h : hits) EXPECT_NEAR(h / n, 1.0 / 3.0, 3.0 * std::sqrt((1.0 / 3.0) * (2.0 / 3.0) / n));
}

TEST(SampleEpoch, RejectsZeroBatch) {
  const auto f = small_data();
  iif::Rng rng(1);
  EXPECT_THROW(iif::sample_epoch(iif::SamplerKind::Random, f.data.train.samples, f.freq, rng, 0), iif::DomainError);
}

TEST(RunPlan, ReproducibleForFixedSeed) {
  const auto f = small_data();
  auto plan = quick_plan();
  plan.strategy = iif::EndToEnd{{iif::LossType::IIFCE}};
  const auto a = iif::run_plan(plan, f.data.train, f.data.test, f.freq);
  const auto b = iif::run_plan(plan, f.data.train, f.data.test, f.freq);
  EXPECT_EQ(a.model, b.model);
  EXPECT_EQ(a.log.epoch_loss, b.log.epoch_loss);
  EXPECT_EQ(a.log.epoch_balanced_accuracy, b.log.epoch_balanced_accuracy);
  plan.seed = 1;
  EXPECT_NE(iif::run_plan(plan, f.data.train, f.data.test, f.freq).model, a.model);
}

TEST(RunPlan, PostHocTrainsTheSameParametersAsSoftmaxCe) {
  const auto f = small_data();
  auto plan = quick_plan();
  plan.strategy = iif::EndToEnd{};
  const auto ce = iif::run_plan(plan, f.data.train, f.data.test, f.freq);
  plan.strategy = iif::PostHoc{};
  const auto post = iif::run_plan(plan, f.data.train, f.data.test, f.freq);
  EXPECT_EQ(ce.model, post.model);
  EXPECT_EQ(post.inference_scheme.form, iif::MarginForm::MultiplicativeIIF);
  EXPECT_TRUE(ce.inference_scheme.is_identity());
}

TEST(RunPlan, PostHocWithUnitWeightsEvaluatesLikePlainSoftmax) {
  const auto f = small_data();
  auto plan = quick_plan();
  plan.strategy = iif::PostHoc{};
  const auto r = iif::run_plan(plan, f.data.train, f.data.test, f.freq);
  const auto split = iif::GroupSplit::terciles(f.freq);
  const auto ones = iif::MarginScheme::multiplicative(iif::ClassWeights::uniform(4));
  const auto a = iif::evaluate(r.model, f.data.test.samples, ones, split);
  const auto b = iif::evaluate(r.model, f.data.test.samples, split);
  EXPECT_EQ(a.overall_top1, b.overall_top1);
  EXPECT_EQ(a.per_class_top1, b.per_class_top1);
}

TEST(RunPlan, DecoupledWithoutStageTwoIsStageOne) {
  const auto f = small_data();
  auto plan = quick_plan();
  plan.strategy = iif::EndToEnd{};
  const auto ce = iif::run_plan(plan, f.data.train, f.data.test, f.freq);
  iif::Decoupled d;
  d.stage2_epochs = 0;
  plan.strategy = d;
  const auto dec = iif::run_plan(plan, f.data.train, f.data.test, f.freq);
  EXPECT_EQ(dec.model, ce.model);
  EXPECT_EQ(dec.log.stage_boundaries, (std::vector<std::size_t>{0}));
}

TEST(RunPlan, DecoupledStageTwoFreezesTheFeatureLayer) {
  const auto f = small_data();
  auto plan = quick_plan();
  plan.hidden_width = 6;
  iif::Decoupled d;
  d.stage2_epochs = 0;
  plan.strategy = d;
  const auto stage1 = iif::run_plan(plan, f.data.train, f.data.test, f.freq);
  d.stage2_epochs = 3;
  plan.strategy = d;
  const auto both = iif::run_plan(plan, f.data.train, f.data.test, f.freq);
  ASSERT_TRUE(both.model.hidden);
  EXPECT_EQ(*both.model.hidden, *stage1.model.hidden);
  EXPECT_NE(both.model.head, stage1.model.head);
  EXPECT_EQ(both.log.stage_boundaries, (std::vector<std::size_t>{0, 8}));
  EXPECT_EQ(both.log.epoch_loss.size(), 11u);
  EXPECT_EQ(both.final_loss.type, iif::LossType::IIFCE);
}

TEST(RunPlan, DecoupledDefaultStageTwoLength) {
  iif::Decoupled d;
  EXPECT_EQ(d.resolved_stage1(200), 200u);
  EXPECT_EQ(d.resolved_stage2(200), 40u);
  EXPECT_EQ(d.resolved_stage2(3), 1u);
}

TEST(RunPlan, LossTrendsDownForDefaultConfigs) {
  const auto f = small_data();
  for (auto type : {iif::LossType::SoftmaxCE, iif::LossType::IIFCE, iif::LossType::CSL, iif::LossType::LDAM}) {
    TrainPlan plan;
    plan.epochs = 40;
    plan.strategy = iif::EndToEnd{{type}};
    const auto r = iif::run_plan(plan, f.data.train, f.data.test, f.freq);
    auto median = [](std::vector<double> v) {
      std::sort(v.begin(), v.end());
      return v[v.size() / 2];
    };
    const auto& l = r.log.epoch_loss;
    const std::vector<double> head(l.begin(), l.begin() + 4), tail(l.end() - 4, l.end());
    EXPECT_LT(median(tail), median(head)) << to_string(type);
  }
}

TEST(RunPlan, DivergenceReportsTheEpoch) {
  const auto f = small_data();
  auto plan = quick_plan();
  plan.lr = 1e300;
  plan.weight_decay = 1e10;
  plan.schedule.kind = iif::ScheduleKind::Constant;
  try {
    iif::run_plan(plan, f.data.train, f.data.test, f.freq);
    FAIL() << "expected divergence";
  } catch (const iif::TrainingError& e) {
    EXPECT_LT(e.index(), plan.epochs);
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
  }
}

TEST(RunPlan, RejectsInconsistentTable) {
  const auto f = small_data();
  auto plan = quick_plan();
  EXPECT_THROW(iif::run_plan(plan, f.data.train, f.data.test, iif::ClassFrequencyTable::from_counts({5, 5})),
               iif::DomainError);
  plan.lr = 0.0;
  EXPECT_THROW(iif::run_plan(plan, f.data.train, f.data.test, f.freq), iif::DomainError);
}

TEST(ParseNames, SamplerAndSchedule) {
  EXPECT_EQ(iif::parse_sampler("class_balanced"), iif::SamplerKind::ClassBalanced);
  EXPECT_EQ(iif::parse_schedule("step"), iif::ScheduleKind::Step);
  EXPECT_THROW(iif::parse_sampler("square_root"), iif::Error);
}

}  // namespace

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "iif/dataset.hpp"
#include "iif/error.hpp"
#include "iif/eval.hpp"
#include "iif/margins.hpp"
#include "iif/model.hpp"
#include "iif/random.hpp"

namespace iif {

enum class SamplerKind { Random, ClassBalanced };

inline std::string_view to_string(SamplerKind s) {
  return s == SamplerKind::Random ? "random" : "class_balanced";
}

inline SamplerKind parse_sampler(std::string_view s) {
  if (s == "random") return SamplerKind::Random;
  if (s == "class_balanced") return SamplerKind::ClassBalanced;
  throw Error("unknown sampler '" + std::string(s) + "' (expected random|class_balanced)");
}

enum class ScheduleKind { Constant, Step, Cosine };

inline std::string_view to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::Constant: return "constant";
    case ScheduleKind::Step: return "step";
    case ScheduleKind::Cosine: return "cosine";
  }
  return "?";
}

inline ScheduleKind parse_schedule(std::string_view s) {
  if (s == "constant") return ScheduleKind::Constant;
  if (s == "step") return ScheduleKind::Step;
  if (s == "cosine") return ScheduleKind::Cosine;
  throw Error("unknown schedule '" + std::string(s) + "' (expected constant|step|cosine)");
}

struct LrSchedule {
  ScheduleKind kind = ScheduleKind::Cosine;
  std::size_t step_epochs = 30;  // Step: decay every this many epochs
  double gamma = 0.1;            // Step: decay factor

  double lr_at(double base, std::size_t epoch, std::size_t total_epochs) const {
    switch (kind) {
      case ScheduleKind::Constant: return base;
      case ScheduleKind::Step:
        return base * std::pow(gamma, static_cast<double>(epoch / std::max<std::size_t>(step_epochs, 1)));
      case ScheduleKind::Cosine: {
        if (total_epochs <= 1) return base;
        const double t = static_cast<double>(epoch) / static_cast<double>(total_epochs);
        return 0.5 * base * (1.0 + std::cos(std::numbers::pi * t));
      }
    }
    return base;
  }
};

// Loss selection before it is bound to a frequency table.
struct LossConfig {
  LossType type = LossType::SoftmaxCE;
  Variant variant = Variant::Smooth;
  CountSource source = CountSource::Image;
  double ldam_c = 0.5;
};

inline LossKind make_loss(const LossConfig& c, const ClassFrequencyTable& table) {
  switch (c.type) {
    case LossType::SoftmaxCE: return LossKind::softmax_ce();
    case LossType::IIFCE: return LossKind::iif_ce(compute_weights(table, c.variant, c.source));
    case LossType::CSL: return LossKind::csl(compute_weights(table, c.variant, c.source));
    case LossType::LDAM: return LossKind::ldam(table, c.ldam_c, c.source);
  }
  return LossKind::softmax_ce();
}

struct EndToEnd {
  LossConfig loss;
};

// Stage 1 trains everything, stage 2 continues from the stage-1 head with the
// feature layers frozen and the learning rate scaled by stage2_lr_factor.
struct Decoupled {
  LossConfig stage1_loss;
  LossConfig stage2_loss{LossType::IIFCE};
  std::size_t stage1_epochs = 0;               // 0: use TrainPlan::epochs
  std::optional<std::size_t> stage2_epochs;    // default: 20% of stage 1, at least 1
  double stage2_lr_factor = 1e-3;

  std::size_t resolved_stage1(std::size_t plan_epochs) const {
    return stage1_epochs ? stage1_epochs : plan_epochs;
  }
  std::size_t resolved_stage2(std::size_t plan_epochs) const {
    if (stage2_epochs) return *stage2_epochs;
    return std::max<std::size_t>(1, resolved_stage1(plan_epochs) / 5);
  }
};

// Conventional training; the scheme is injected at evaluation time only.
struct PostHoc {
  LossConfig train_loss;
  SchemeConfig inference_scheme{"iif", Variant::Smooth, CountSource::Image, 1.0};
};

using Strategy = std::variant<EndToEnd, Decoupled, PostHoc>;

struct TrainPlan {
  Strategy strategy = EndToEnd{};
  SamplerKind sampler = SamplerKind::Random;
  std::size_t epochs = 200;
  std::size_t batch_size = 64;
  double lr = 0.1;
  LrSchedule schedule;
  double weight_decay = 1e-3;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  std::size_t hidden_width = 0;
  HeadKind head = HeadKind::Dot;
  double cosine_scale = 16.0;
};

struct TrainLog {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_balanced_accuracy;
  std::vector<std::size_t> stage_boundaries;  // first epoch index of each stage
};

struct TrainResult {
  ClassifierModel model;
  TrainLog log;
  LossKind final_loss;
  MarginScheme inference_scheme;
};

// Mini-batches of indices into `train` for one epoch.
//
// Random: a uniform shuffle cut into batches. ClassBalanced: |train| draws,
// each picking a class uniformly among those present and then a member of
// it uniformly, with replacement.
inline std::vector<std::vector<std::size_t>> sample_epoch(SamplerKind sampler,
                                                          std::span<const LabeledSample> train,
                                                          const ClassFrequencyTable& table, Rng& rng,
                                                          std::size_t batch_size) {
  if (batch_size == 0) throw DomainError("batch_size must be positive");
  std::vector<std::size_t> order;
  if (sampler == SamplerKind::Random) {
    order.resize(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
  } else {
    std::vector<std::vector<std::size_t>> by_class(table.num_classes());
    for (std::size_t i = 0; i < train.size(); ++i) {
      if (train[i].label >= by_class.size()) throw DomainError("frequency table does not cover label " + std::to_string(train[i].label));
      by_class[train[i].label].push_back(i);
    }
    std::vector<std::size_t> present;
    for (std::size_t c = 0; c < by_class.size(); ++c)
      if (!by_class[c].empty()) present.push_back(c);
    if (present.empty()) return {};
    std::uniform_int_distribution<std::size_t> pick_class(0, present.size() - 1);
    order.reserve(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) {
      const auto& members = by_class[present[pick_class(rng)]];
      std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
      order.push_back(members[pick(rng)]);
    }
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch_size)));
  }
  return batches;
}

namespace detail {

struct StageConfig {
  LossKind loss;
  std::size_t epochs = 0;
  double lr = 0.0;
  bool train_hidden = true;
  std::string_view sampler_stream;
};

inline void run_stage(const TrainPlan& plan, const StageConfig& stage, ClassifierModel& model,
                      const SampleSet& train, const SampleSet& test, const ClassFrequencyTable& table,
                      TrainLog& log) {
  auto rng = make_rng(plan.seed, stage.sampler_stream);
  SgdState opt;
  const auto eval_scheme = stage.loss.inference_scheme();
  const auto split = GroupSplit::terciles(table);
  for (std::size_t epoch = 0; epoch < stage.epochs; ++epoch) {
    const SgdConfig sgd{plan.schedule.lr_at(stage.lr, epoch, stage.epochs), plan.weight_decay, plan.momentum};
    const auto batches = sample_epoch(plan.sampler, train.samples, table, rng, plan.batch_size);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      GradientReport r;
      try {
        r = loss_and_grad(model, train.samples, batches[b], stage.loss, b);
      } catch (const TrainingError& e) {
        const auto global_epoch = log.epoch_loss.size();
        throw TrainingError("training diverged at epoch " + std::to_string(global_epoch) + ": " + e.what(),
                            global_epoch);
      }
      sgd_step(model, r.grads, sgd, opt, stage.train_hidden);
      loss_sum += r.loss * static_cast<double>(batches[b].size());
      seen += batches[b].size();
    }
    log.epoch_loss.push_back(seen ? loss_sum / static_cast<double>(seen) : 0.0);
    log.epoch_balanced_accuracy.push_back(
        test.empty() ? 0.0 : evaluate(model, test.samples, eval_scheme, split).balanced_top1());
  }
}

}  // namespace detail

// Trains a fresh model per the plan. Deterministic in plan.seed: the
// initialisation and each stage's sampler draw from independent streams, so
// PostHoc and EndToEnd(ce) produce bit-identical parameters.
inline TrainResult run_plan(const TrainPlan& plan, const SampleSet& train, const SampleSet& test,
                            const ClassFrequencyTable& table) {
  if (train.empty()) throw DomainError("run_plan: empty training set");
  if (!(plan.lr > 0.0)) throw DomainError("learning rate must be > 0");
  const std::size_t c = table.num_classes();
  for (const auto& s : train.samples) {
    if (s.label >= c || table.image_freq()[s.label] == 0) {
      throw DomainError("frequency table inconsistent with training label " + std::to_string(s.label));
    }
  }

  auto init_rng = make_rng(plan.seed, "model.init");
  const ModelConfig mc{train.samples.front().features.size(), c, plan.hidden_width, plan.head, plan.cosine_scale};
  TrainResult out;
  out.model = init_model(mc, init_rng);

  std::visit(
      [&](const auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, EndToEnd> || std::is_same_v<S, PostHoc>) {
          LossConfig loss_cfg;
          if constexpr (std::is_same_v<S, EndToEnd>) loss_cfg = s.loss;
          else loss_cfg = s.train_loss;
          if (plan.epochs == 0) throw DomainError("epochs must be >= 1");
          out.final_loss = make_loss(loss_cfg, table);
          out.log.stage_boundaries = {0};
          detail::run_stage(plan, {out.final_loss, plan.epochs, plan.lr, true, "train.sampler"}, out.model,
                            train, test, table, out.log);
          if constexpr (std::is_same_v<S, PostHoc>) {
            out.inference_scheme = make_scheme(s.inference_scheme, table);
          } else {
            out.inference_scheme = out.final_loss.inference_scheme();
          }
        } else {
          const auto e1 = s.resolved_stage1(plan.epochs);
          const auto e2 = s.resolved_stage2(plan.epochs);
          if (e1 == 0) throw DomainError("stage 1 epochs must be >= 1");
          const auto loss1 = make_loss(s.stage1_loss, table);
          out.log.stage_boundaries = {0};
          detail::run_stage(plan, {loss1, e1, plan.lr, true, "train.sampler"}, out.model, train, test, table,
                            out.log);
          out.final_loss = loss1;
          if (e2 > 0) {
            out.final_loss = make_loss(s.stage2_loss, table);
            out.log.stage_boundaries.push_back(e1);
            detail::run_stage(plan, {out.final_loss, e2, plan.lr * s.stage2_lr_factor, false, "train.sampler.stage2"},
                              out.model, train, test, table, out.log);
          }
          out.inference_scheme = out.final_loss.inference_scheme();
        }
      },
      plan.strategy);
  return out;
}

}  // namespace iif

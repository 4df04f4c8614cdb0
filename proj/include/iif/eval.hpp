#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "iif/dataset.hpp"
#include "iif/margins.hpp"
#include "iif/model.hpp"

namespace iif {

struct NormStats {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  Vector per_class;
};

inline NormStats norm_stats(const Vector& norms) {
  NormStats s;
  s.per_class = norms;
  if (norms.empty()) return s;
  for (double v : norms) s.mean += v;
  s.mean /= static_cast<double>(norms.size());
  for (double v : norms) s.std += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(s.std / static_cast<double>(norms.size()));
  return s;
}

struct EvalReport {
  double overall_top1 = 0.0;
  std::array<std::optional<double>, kNumGroups> group_top1;  // indexed by Group
  std::vector<std::optional<double>> per_class_top1;         // nullopt: class absent from test
  std::vector<std::size_t> per_class_count;
  std::size_t num_samples = 0;
  bool balanced_test = true;
  NormStats weight_norms;
  std::string scheme = "none";

  std::optional<double> group(Group g) const { return group_top1[static_cast<std::size_t>(g)]; }

  // Unweighted mean over classes present in the test set.
  double balanced_top1() const {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& a : per_class_top1) {
      if (a) {
        s += *a;
        ++n;
      }
    }
    return n ? s / static_cast<double>(n) : 0.0;
  }
};

// Scores precomputed logits. Predictions are the argmax of the adjusted
// logits with ties going to the lowest class index.
inline EvalReport evaluate_logits(std::span<const Vector> logits, std::span<const std::size_t> labels,
                                  const MarginScheme& scheme, const GroupSplit& split,
                                  std::size_t num_classes) {
  if (logits.size() != labels.size()) throw DimensionError("evaluate labels", logits.size(), labels.size());
  if (split.num_classes() != num_classes) throw DimensionError("group split", num_classes, split.num_classes());
  const std::size_t slots = scheme.num_slots();
  if (slots != 0 && slots != num_classes) throw DimensionError("scheme " + scheme.description, num_classes, slots);

  std::vector<std::size_t> correct(num_classes, 0);
  EvalReport r;
  r.per_class_count.assign(num_classes, 0);
  r.num_samples = labels.size();
  r.scheme = scheme.description;
  std::size_t total_correct = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (labels[i] >= num_classes) throw DomainError("test label " + std::to_string(labels[i]) + " out of range");
    if (logits[i].size() != num_classes) throw DimensionError("logits", num_classes, logits[i].size());
    const auto pred = argmax(scheme.apply(logits[i]));
    r.per_class_count[labels[i]] += 1;
    if (pred == labels[i]) {
      correct[labels[i]] += 1;
      ++total_correct;
    }
  }
  r.overall_top1 = labels.empty() ? 0.0 : static_cast<double>(total_correct) / static_cast<double>(labels.size());
  r.per_class_top1.resize(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (r.per_class_count[c] > 0) {
      r.per_class_top1[c] = static_cast<double>(correct[c]) / static_cast<double>(r.per_class_count[c]);
    }
    if (r.per_class_count[c] != r.per_class_count[0]) r.balanced_test = false;
  }
  for (std::size_t g = 0; g < kNumGroups; ++g) {
    double s = 0.0;
    std::size_t n = 0;
    for (auto c : split.members(static_cast<Group>(g))) {
      if (r.per_class_top1[c]) {
        s += *r.per_class_top1[c];
        ++n;
      }
    }
    if (n) r.group_top1[g] = s / static_cast<double>(n);
  }
  return r;
}

inline EvalReport evaluate(const ClassifierModel& model, std::span<const LabeledSample> test,
                           const MarginScheme& scheme, const GroupSplit& split) {
  std::vector<Vector> logits;
  std::vector<std::size_t> labels;
  logits.reserve(test.size());
  labels.reserve(test.size());
  for (const auto& s : test) {
    logits.push_back(forward(model, s.features));
    labels.push_back(s.label);
  }
  auto r = evaluate_logits(logits, labels, scheme, split, model.num_classes());
  r.weight_norms = norm_stats(weight_norms(model));
  return r;
}

inline EvalReport evaluate(const ClassifierModel& model, std::span<const LabeledSample> test,
                           const GroupSplit& split) {
  return evaluate(model, test, MarginScheme::identity(), split);
}

struct NamedScheme {
  std::string name;
  MarginScheme scheme;
};

struct ComparisonRow {
  std::string name;
  EvalReport report;
  double delta_overall = 0.0;
  std::array<std::optional<double>, kNumGroups> delta_group;
};

struct ComparisonTable {
  std::vector<ComparisonRow> rows;
};

// One report per scheme, deltas relative to the first.
inline ComparisonTable compare_schemes(const ClassifierModel& model, std::span<const LabeledSample> test,
                                       std::span<const NamedScheme> schemes, const GroupSplit& split) {
  if (schemes.empty()) throw DomainError("compare_schemes: empty scheme list");
  std::vector<Vector> logits;
  std::vector<std::size_t> labels;
  for (const auto& s : test) {
    logits.push_back(forward(model, s.features));
    labels.push_back(s.label);
  }
  const auto norms = norm_stats(weight_norms(model));
  ComparisonTable t;
  for (const auto& ns : schemes) {
    ComparisonRow row;
    row.name = ns.name;
    row.report = evaluate_logits(logits, labels, ns.scheme, split, model.num_classes());
    row.report.weight_norms = norms;
    t.rows.push_back(std::move(row));
  }
  const auto& base = t.rows.front().report;
  for (auto& row : t.rows) {
    row.delta_overall = row.report.overall_top1 - base.overall_top1;
    for (std::size_t g = 0; g < kNumGroups; ++g) {
      if (row.report.group_top1[g] && base.group_top1[g]) {
        row.delta_group[g] = *row.report.group_top1[g] - *base.group_top1[g];
      }
    }
  }
  return t;
}

}  // namespace iif

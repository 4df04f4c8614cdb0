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
#include <vector>

#include "iif/error.hpp"
#include "iif/linalg.hpp"
#include "iif/random.hpp"

namespace iif {

struct LabeledSample {
  Vector features;
  std::size_t label = 0;
  std::uint32_t instance_count = 1;  // objects of `label` in this image

  friend bool operator==(const LabeledSample&, const LabeledSample&) = default;
};

// A sample list together with the class count it was declared against.
struct SampleSet {
  std::size_t num_classes = 0;
  std::size_t dim = 0;
  std::vector<LabeledSample> samples;

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }

  friend bool operator==(const SampleSet&, const SampleSet&) = default;
};

// Which count a frequency-derived quantity is built from: images containing
// the class (IIF) or object instances of the class (IOF).
enum class CountSource { Image, Object };

inline std::string_view to_string(CountSource s) {
  return s == CountSource::Image ? "image" : "object";
}

inline CountSource parse_count_source(std::string_view s) {
  if (s == "image") return CountSource::Image;
  if (s == "object") return CountSource::Object;
  throw Error("unknown count source '" + std::string(s) + "' (expected image|object)");
}

// Per-class image and object frequencies of a training set.
//
// `total()` for the image source is K = sum of IF(y); p(y) = IF(y) / K.
class ClassFrequencyTable {
 public:
  ClassFrequencyTable() = default;

  ClassFrequencyTable(std::vector<std::uint64_t> image_freq, std::vector<std::uint64_t> object_freq)
      : image_freq_(std::move(image_freq)), object_freq_(std::move(object_freq)) {
    if (image_freq_.size() != object_freq_.size()) {
      throw DimensionError("object_freq length", image_freq_.size(), object_freq_.size());
    }
  }

  // Classification-style table: one object per image.
  static ClassFrequencyTable from_counts(std::vector<std::uint64_t> counts) {
    auto copy = counts;
    return ClassFrequencyTable(std::move(counts), std::move(copy));
  }

  std::size_t num_classes() const noexcept { return image_freq_.size(); }
  const std::vector<std::uint64_t>& image_freq() const noexcept { return image_freq_; }
  const std::vector<std::uint64_t>& object_freq() const noexcept { return object_freq_; }

  const std::vector<std::uint64_t>& counts(CountSource s) const noexcept {
    return s == CountSource::Image ? image_freq_ : object_freq_;
  }

  std::uint64_t total(CountSource s = CountSource::Image) const noexcept {
    const auto& c = counts(s);
    return std::accumulate(c.begin(), c.end(), std::uint64_t{0});
  }

  double probability(std::size_t y, CountSource s = CountSource::Image) const {
    const auto k = total(s);
    if (k == 0) throw DomainError("probability of an empty frequency table");
    return static_cast<double>(counts(s).at(y)) / static_cast<double>(k);
  }

  std::vector<double> probabilities(CountSource s = CountSource::Image) const {
    std::vector<double> p(num_classes());
    for (std::size_t y = 0; y < p.size(); ++y) p[y] = probability(y, s);
    return p;
  }

  // max / min over classes with a nonzero count.
  double imbalance_factor(CountSource s = CountSource::Image) const {
    std::uint64_t lo = 0, hi = 0;
    for (auto c : counts(s)) {
      if (c == 0) continue;
      lo = lo == 0 ? c : std::min(lo, c);
      hi = std::max(hi, c);
    }
    if (lo == 0) throw DomainError("imbalance factor of an empty frequency table");
    return static_cast<double>(hi) / static_cast<double>(lo);
  }

  friend bool operator==(const ClassFrequencyTable&, const ClassFrequencyTable&) = default;

 private:
  std::vector<std::uint64_t> image_freq_;
  std::vector<std::uint64_t> object_freq_;
};

// Counts image and object frequencies. With `num_classes == 0` the class count
// is inferred as max(label) + 1. Order of the samples does not matter, and
// classes without samples get zero counts.
inline ClassFrequencyTable count_frequencies(std::span<const LabeledSample> samples,
                                             std::size_t num_classes = 0) {
  if (num_classes == 0) {
    for (const auto& s : samples) num_classes = std::max(num_classes, s.label + 1);
  }
  std::vector<std::uint64_t> image(num_classes, 0), object(num_classes, 0);
  for (const auto& s : samples) {
    if (s.label >= num_classes) {
      throw DomainError("count_frequencies: label " + std::to_string(s.label) +
                        " >= num_classes " + std::to_string(num_classes));
    }
    image[s.label] += 1;
    object[s.label] += s.instance_count;
  }
  return ClassFrequencyTable(std::move(image), std::move(object));
}

inline ClassFrequencyTable count_frequencies(const SampleSet& set) {
  return count_frequencies(set.samples, set.num_classes);
}

// ---------------------------------------------------------------------------
// Synthetic long-tailed data

enum class CountProfile { Exponential, Pareto, Explicit };

inline std::string_view to_string(CountProfile p) {
  switch (p) {
    case CountProfile::Exponential: return "exponential";
    case CountProfile::Pareto: return "pareto";
    case CountProfile::Explicit: return "explicit";
  }
  return "?";
}

inline CountProfile parse_count_profile(std::string_view s) {
  if (s == "exponential") return CountProfile::Exponential;
  if (s == "pareto") return CountProfile::Pareto;
  if (s == "explicit") return CountProfile::Explicit;
  throw Error("unknown profile '" + std::string(s) + "' (expected exponential|pareto|explicit)");
}

struct DatasetSpec {
  std::size_t num_classes = 10;
  std::size_t dim = 10;
  double imbalance_factor = 100.0;  // n_max / n_min; ignored for Explicit
  CountProfile profile = CountProfile::Exponential;
  std::vector<std::uint64_t> explicit_counts;  // used when profile == Explicit
  std::uint64_t max_count = 500;               // n_max for the generated profiles
  std::uint64_t test_per_class = 200;
  double class_separation = 3.0;  // pairwise distance between class means
  std::uint64_t seed = 0;
};

// Per-class training counts for a spec. Class 0 is the head.
//
//   exponential: n_y = n_max * beta^(-y / (C - 1))
//   pareto:      n_y = n_max * (y + 1)^(-a),  a = ln(beta) / ln(C)
inline std::vector<std::uint64_t> profile_counts(const DatasetSpec& spec) {
  if (spec.num_classes < 2) throw DomainError("dataset needs at least 2 classes");
  if (spec.profile == CountProfile::Explicit) {
    if (spec.explicit_counts.size() != spec.num_classes) {
      throw DimensionError("explicit_counts length", spec.num_classes, spec.explicit_counts.size());
    }
    for (std::size_t y = 0; y < spec.explicit_counts.size(); ++y) {
      if (spec.explicit_counts[y] == 0) {
        throw DomainError("explicit count for class " + std::to_string(y) + " is not positive");
      }
    }
    return spec.explicit_counts;
  }
  if (!(spec.imbalance_factor >= 1.0) || !std::isfinite(spec.imbalance_factor)) {
    throw DomainError("imbalance factor must be >= 1, got " + std::to_string(spec.imbalance_factor));
  }
  if (spec.max_count == 0) throw DomainError("max_count must be positive");

  const double beta = spec.imbalance_factor;
  const auto c = static_cast<double>(spec.num_classes);
  const double n_max = static_cast<double>(spec.max_count);
  std::vector<std::uint64_t> counts(spec.num_classes);
  for (std::size_t y = 0; y < spec.num_classes; ++y) {
    const auto yd = static_cast<double>(y);
    double n = 0.0;
    if (spec.profile == CountProfile::Exponential) {
      n = n_max * std::pow(beta, -yd / (c - 1.0));
    } else {
      const double a = std::log(beta) / std::log(c);
      n = n_max * std::pow(yd + 1.0, -a);
    }
    counts[y] = static_cast<std::uint64_t>(std::llround(n));
    if (counts[y] == 0) {
      throw DomainError("class " + std::to_string(y) +
                        " would receive no samples; raise max_count or lower the imbalance factor");
    }
  }
  return counts;
}

// Class means: scaled simplex vertices when dim >= C, otherwise seeded random
// directions with the same norm.
inline Matrix class_means(const DatasetSpec& spec) {
  Matrix means(spec.num_classes, spec.dim, 0.0);
  const double radius = spec.class_separation / std::numbers::sqrt2;
  if (spec.dim >= spec.num_classes) {
    for (std::size_t y = 0; y < spec.num_classes; ++y) means(y, y) = radius;
    return means;
  }
  auto rng = make_rng(spec.seed, "dataset.means");
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t y = 0; y < spec.num_classes; ++y) {
    auto row = means.row(y);
    for (auto& v : row) v = gauss(rng);
    const double n = l2_norm(row);
    for (auto& v : row) v *= radius / n;
  }
  return means;
}

struct SyntheticData {
  SampleSet train;
  SampleSet test;
  ClassFrequencyTable truth;
};

// Long-tailed train split following the spec's profile, balanced test split,
// isotropic unit-variance Gaussian features. Deterministic in spec.seed.
inline SyntheticData generate_synthetic(const DatasetSpec& spec) {
  if (spec.dim == 0) throw DomainError("dataset dim must be positive");
  if (!(spec.class_separation >= 0.0)) throw DomainError("class_separation must be >= 0");
  const auto counts = profile_counts(spec);
  const Matrix means = class_means(spec);

  std::normal_distribution<double> gauss(0.0, 1.0);
  auto draw_split = [&](std::string_view stream, auto count_of) {
    auto rng = make_rng(spec.seed, stream);
    SampleSet set{spec.num_classes, spec.dim, {}};
    for (std::size_t y = 0; y < spec.num_classes; ++y) {
      const auto mean = means.row(y);
      for (std::uint64_t i = 0; i < count_of(y); ++i) {
        LabeledSample s;
        s.label = y;
        s.features.resize(spec.dim);
        for (std::size_t k = 0; k < spec.dim; ++k) s.features[k] = mean[k] + gauss(rng);
        set.samples.push_back(std::move(s));
      }
    }
    // Interleave classes so file order carries no label information.
    std::shuffle(set.samples.begin(), set.samples.end(), rng);
    return set;
  };

  SyntheticData out;
  out.train = draw_split("dataset.train", [&](std::size_t y) { return counts[y]; });
  out.test = draw_split("dataset.test", [&](std::size_t) { return spec.test_per_class; });
  out.truth = ClassFrequencyTable::from_counts(counts);
  return out;
}

// ---------------------------------------------------------------------------
// Frequency groups

enum class Group { Few = 0, Medium = 1, Many = 2 };

inline constexpr std::size_t kNumGroups = 3;

inline std::string_view to_string(Group g) {
  switch (g) {
    case Group::Few: return "few";
    case Group::Medium: return "medium";
    case Group::Many: return "many";
  }
  return "?";
}

// Assignment of every class to exactly one of few / medium / many.
class GroupSplit {
 public:
  GroupSplit() = default;
  explicit GroupSplit(std::vector<Group> assignment) : assignment_(std::move(assignment)) {}

  // Bottom third of classes by frequency are few, top third many.
  // Ties are broken by class index (higher index ranks rarer).
  static GroupSplit terciles(const ClassFrequencyTable& table,
                             CountSource source = CountSource::Image) {
    const auto& c = table.counts(source);
    const std::size_t n = c.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return c[a] > c[b]; });
    const std::size_t third = n / 3;
    std::vector<Group> g(n, Group::Medium);
    for (std::size_t r = 0; r < third; ++r) {
      g[order[r]] = Group::Many;
      g[order[n - 1 - r]] = Group::Few;
    }
    return GroupSplit(std::move(g));
  }

  // Absolute thresholds: IF <= few_max is few, IF > many_above is many.
  static GroupSplit thresholds(const ClassFrequencyTable& table, std::uint64_t few_max,
                               std::uint64_t many_above, CountSource source = CountSource::Image) {
    if (many_above < few_max) throw DomainError("group thresholds: many_above < few_max");
    std::vector<Group> g;
    for (auto c : table.counts(source)) {
      g.push_back(c <= few_max ? Group::Few : (c > many_above ? Group::Many : Group::Medium));
    }
    return GroupSplit(std::move(g));
  }

  std::size_t num_classes() const noexcept { return assignment_.size(); }
  Group group_of(std::size_t y) const { return assignment_.at(y); }
  const std::vector<Group>& assignment() const noexcept { return assignment_; }

  std::vector<std::size_t> members(Group g) const {
    std::vector<std::size_t> m;
    for (std::size_t y = 0; y < assignment_.size(); ++y)
      if (assignment_[y] == g) m.push_back(y);
    return m;
  }

 private:
  std::vector<Group> assignment_;
};

}  // namespace iif

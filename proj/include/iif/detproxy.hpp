#pragma once

// Detection surrogate: scored proposals over C foreground classes plus a
// background class at index 0, thresholded on the softmax score of the best
// foreground class. Counts false positives directly instead of computing AP.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "iif/csv.hpp"
#include "iif/dataset.hpp"
#include "iif/error.hpp"
#include "iif/margins.hpp"
#include "iif/random.hpp"

namespace iif {

struct Proposal {
  Vector logits;          // C + 1 entries, index 0 is background
  std::size_t truth = 0;  // 0 = background

  friend bool operator==(const Proposal&, const Proposal&) = default;
};

struct ProposalSpec {
  std::size_t num_fg = 100;
  std::size_t num_bg = 500;
  Vector fg_class_dist;   // probability of each foreground class 1..C
  Vector fg_logit_mean;   // mean of the true-class logit per foreground class (or one value for all)
  double neg_logit_mean = -2.0;  // mean of every other foreground logit
  double logit_noise = 1.0;
  std::uint64_t seed = 0;
};

// Background logit is fixed at 0, so "foreground logit exceeds background"
// and "foreground logit is positive" coincide.
inline std::vector<Proposal> simulate_proposals(const ProposalSpec& spec) {
  const std::size_t c = spec.fg_class_dist.size();
  if (c == 0) throw DomainError("simulate_proposals: fg_class_dist is empty");
  if (!(spec.logit_noise >= 0.0)) throw DomainError("logit_noise must be >= 0");
  if (spec.fg_logit_mean.size() != 1 && spec.fg_logit_mean.size() != c) {
    throw DimensionError("fg_logit_mean", c, spec.fg_logit_mean.size());
  }
  auto rng = make_rng(spec.seed, "detproxy.proposals");
  std::normal_distribution<double> noise(0.0, 1.0);
  std::discrete_distribution<std::size_t> pick(spec.fg_class_dist.begin(), spec.fg_class_dist.end());
  auto draw = [&](double mean) { return mean + spec.logit_noise * noise(rng); };

  std::vector<Proposal> out;
  out.reserve(spec.num_fg + spec.num_bg);
  for (std::size_t i = 0; i < spec.num_bg; ++i) {
    Proposal p{Vector(c + 1, 0.0), 0};
    for (std::size_t k = 1; k <= c; ++k) p.logits[k] = draw(spec.neg_logit_mean);
    out.push_back(std::move(p));
  }
  for (std::size_t i = 0; i < spec.num_fg; ++i) {
    const std::size_t y = pick(rng) + 1;
    const double mean = spec.fg_logit_mean.size() == 1 ? spec.fg_logit_mean[0] : spec.fg_logit_mean[y - 1];
    Proposal p{Vector(c + 1, 0.0), y};
    for (std::size_t k = 1; k <= c; ++k) p.logits[k] = draw(k == y ? mean : spec.neg_logit_mean);
    out.push_back(std::move(p));
  }
  return out;
}

struct ScoredProposal {
  std::size_t best_class = 0;  // best foreground class (1..C)
  double score = 0.0;          // its softmax score over all C + 1 adjusted logits
};

struct DetectionOutcome {
  std::vector<ScoredProposal> scored;
  std::vector<bool> detected;
  double threshold = 0.5;
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;  // background proposal detected as foreground
  std::size_t misclassified = 0;    // foreground detected as the wrong class
  std::size_t missed = 0;           // foreground with no detection
  std::size_t true_negatives = 0;
  std::vector<std::size_t> tp_per_class;  // index 0 unused
  std::vector<std::size_t> fg_per_class;
  std::uint64_t proposal_fingerprint = 0;

  double recall(std::size_t cls) const {
    return fg_per_class.at(cls) ? static_cast<double>(tp_per_class[cls]) / static_cast<double>(fg_per_class[cls]) : 0.0;
  }
};

inline std::uint64_t fingerprint(std::span<const Proposal> proposals) {
  std::uint64_t h = mix64(proposals.size());
  for (const auto& p : proposals) {
    h = mix64(h ^ p.truth);
    for (double v : p.logits) h = mix64(h ^ std::bit_cast<std::uint64_t>(v));
  }
  return h;
}

// The scheme must leave slot 0 untouched: weight 1 / shift 0.
inline void check_background_rule(const MarginScheme& scheme, std::size_t slots) {
  if (scheme.is_identity()) return;
  if (scheme.background_index != std::size_t{0}) throw Error("detection scheme needs a background slot at index 0");
  if (scheme.num_slots() != slots) throw DimensionError("detection scheme", slots, scheme.num_slots());
  if (!scheme.scale.empty() && scheme.scale[0] != 1.0) throw Error("background weight must be 1");
  if (!scheme.shift.empty() && scheme.shift[0] != 0.0) throw Error("background shift must be 0");
}

inline std::vector<ScoredProposal> score_proposals(std::span<const Proposal> proposals, const MarginScheme& scheme) {
  std::vector<ScoredProposal> out;
  out.reserve(proposals.size());
  for (const auto& p : proposals) {
    if (p.logits.size() < 2) throw DimensionError("proposal logits", 2, p.logits.size());
    check_background_rule(scheme, p.logits.size());
    const auto q = softmax(scheme.apply(p.logits));
    ScoredProposal s{1, q[1]};
    for (std::size_t k = 2; k < q.size(); ++k)
      if (q[k] > s.score) s = {k, q[k]};
    out.push_back(s);
  }
  return out;
}

inline DetectionOutcome tally(std::span<const Proposal> proposals, std::vector<ScoredProposal> scored,
                              double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw DomainError("threshold must lie in (0, 1)");
  DetectionOutcome o;
  o.threshold = threshold;
  std::size_t c = 0;
  for (const auto& p : proposals) c = std::max(c, p.logits.size() - 1);
  o.tp_per_class.assign(c + 1, 0);
  o.fg_per_class.assign(c + 1, 0);
  o.detected.resize(proposals.size());
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    const auto& p = proposals[i];
    const bool hit = scored[i].score > threshold;
    o.detected[i] = hit;
    if (p.truth == 0) {
      (hit ? o.false_positives : o.true_negatives) += 1;
      continue;
    }
    o.fg_per_class.at(p.truth) += 1;
    if (!hit) {
      ++o.missed;
    } else if (scored[i].best_class == p.truth) {
      ++o.true_positives;
      ++o.tp_per_class[p.truth];
    } else {
      ++o.misclassified;
    }
  }
  o.scored = std::move(scored);
  o.proposal_fingerprint = fingerprint(proposals);
  return o;
}

inline DetectionOutcome detect(std::span<const Proposal> proposals, const MarginScheme& scheme, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw DomainError("threshold must lie in (0, 1)");
  return tally(proposals, score_proposals(proposals, scheme), threshold);
}

// Among thresholds whose tail-class true positives are within `tolerance` of
// `target_tp`, the one with the fewest false positives (highest threshold on
// ties). Candidate thresholds are the distinct proposal scores themselves.
inline std::optional<DetectionOutcome> match_tail_recall(std::span<const Proposal> proposals,
                                                         const MarginScheme& scheme, std::size_t tail_class,
                                                         std::size_t target_tp, std::size_t tolerance = 1) {
  const auto scored = score_proposals(proposals, scheme);
  std::vector<double> candidates;
  for (const auto& s : scored)
    if (s.score > 0.0 && s.score < 1.0) candidates.push_back(s.score);
  candidates.push_back(0.5);
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  // Also consider a threshold just below the lowest score.
  if (!candidates.empty() && candidates.front() > 0.0) {
    const double below = std::nextafter(candidates.front(), 0.0);
    if (below > 0.0) candidates.insert(candidates.begin(), below);
  }
  std::optional<DetectionOutcome> best;
  for (double t : candidates) {
    auto o = tally(proposals, scored, t);
    const auto tp = o.tp_per_class.at(tail_class);
    const auto gap = tp > target_tp ? tp - target_tp : target_tp - tp;
    if (gap > tolerance) continue;
    if (!best || o.false_positives < best->false_positives ||
        (o.false_positives == best->false_positives && t > best->threshold)) {
      best = std::move(o);
    }
  }
  return best;
}

struct NamedOutcome {
  std::string scheme;
  DetectionOutcome outcome;
};

// Compares schemes at a common tail recall: the lowest tail-class true
// positive count any scheme reaches at `threshold`. Each scheme then gets its
// own fewest-false-positive threshold within `tolerance` of that count.
// Returns nullopt when some scheme cannot reach it.
inline std::optional<std::vector<NamedOutcome>> match_common_recall(
    std::span<const Proposal> proposals, std::span<const std::pair<std::string, MarginScheme>> schemes,
    std::size_t tail_class, double threshold = 0.5, std::size_t tolerance = 1) {
  if (schemes.empty()) return std::vector<NamedOutcome>{};
  std::size_t target = SIZE_MAX;
  for (const auto& [name, scheme] : schemes) {
    const auto o = detect(proposals, scheme, threshold);
    target = std::min(target, tail_class < o.tp_per_class.size() ? o.tp_per_class[tail_class] : 0);
  }
  std::vector<NamedOutcome> out;
  for (const auto& [name, scheme] : schemes) {
    auto o = match_tail_recall(proposals, scheme, tail_class, target, tolerance);
    if (!o) return std::nullopt;
    out.push_back({name, std::move(*o)});
  }
  return out;
}

struct FpRow {
  std::string scheme;
  double threshold = 0.0;
  std::size_t false_positives = 0;
  std::size_t true_positives = 0;
  std::size_t tail_true_positives = 0;
  double tail_recall = 0.0;
};

inline std::vector<FpRow> fp_report(std::span<const NamedOutcome> outcomes, std::size_t tail_class) {
  std::vector<FpRow> rows;
  for (const auto& n : outcomes) {
    if (n.outcome.proposal_fingerprint != outcomes.front().outcome.proposal_fingerprint) {
      throw Error("fp_report: outcome '" + n.scheme + "' was computed on a different proposal set");
    }
    const auto& o = n.outcome;
    rows.push_back({n.scheme, o.threshold, o.false_positives, o.true_positives,
                    tail_class < o.tp_per_class.size() ? o.tp_per_class[tail_class] : 0,
                    tail_class < o.fg_per_class.size() ? o.recall(tail_class) : 0.0});
  }
  return rows;
}

inline void write_fp_report(std::ostream& os, std::span<const FpRow> rows) {
  csv::write_row(os, {"scheme", "threshold", "false_positives", "true_positives", "tail_true_positives", "tail_recall"});
  for (const auto& r : rows) {
    csv::write_row(os, {r.scheme, csv::format_double(r.threshold), std::to_string(r.false_positives),
                        std::to_string(r.true_positives), std::to_string(r.tail_true_positives),
                        csv::format_double(r.tail_recall)});
  }
}

// Proposal files: "truth,z_0,...,z_C" rows after a header line.
inline void write_proposals(std::ostream& os, std::span<const Proposal> proposals) {
  const std::size_t n = proposals.empty() ? 0 : proposals.front().logits.size();
  std::vector<std::string> row = {"truth"};
  for (std::size_t k = 0; k < n; ++k) row.push_back("z_" + std::to_string(k));
  csv::write_row(os, row);
  for (const auto& p : proposals) {
    if (p.logits.size() != n) throw DimensionError("proposal logits", n, p.logits.size());
    row.assign(1, std::to_string(p.truth));
    for (double v : p.logits) row.push_back(csv::format_double(v));
    csv::write_row(os, row);
  }
}

inline std::vector<Proposal> read_proposals(std::istream& is) {
  std::vector<Proposal> out;
  std::size_t width = 0;
  csv::for_each_line(is, [&](std::string_view line, std::size_t row) {
    if (line.empty() || line.front() == '#') return;
    const auto f = csv::split_row(line, row);
    if (f.front() == "truth") return;
    if (f.size() < 3) throw ParseError(row, "proposal needs truth and at least two logits");
    if (width == 0) width = f.size();
    if (f.size() != width) throw DimensionError("row " + std::to_string(row) + " width", width, f.size());
    Proposal p;
    p.truth = csv::parse_uint(f[0], row);
    if (p.truth >= width - 1) throw ParseError(row, "truth class out of range");
    for (std::size_t k = 1; k < f.size(); ++k) p.logits.push_back(csv::parse_double(f[k], row));
    if (!all_finite(p.logits)) throw ParseError(row, "non-finite logit");
    out.push_back(std::move(p));
  });
  return out;
}

// The reference false-positive scenario: 500 background and 100 foreground
// proposals over three foreground classes whose training frequencies follow
// an exponential profile with imbalance factor 50. The simulated detector is
// biased the way a softmax-trained one is: true-class logits are lower for
// rarer classes. Foreground proposals are class-balanced so tail recall is
// measurable.
struct DetScenario {
  ProposalSpec spec;
  ClassFrequencyTable train_freq;
  std::size_t tail_class = 3;  // proposal index of the rarest class
};

inline DetScenario reference_scenario(std::uint64_t seed = 0) {
  DatasetSpec ds;
  ds.num_classes = 3;
  ds.imbalance_factor = 50.0;
  ds.max_count = 1000;
  DetScenario s;
  s.train_freq = ClassFrequencyTable::from_counts(profile_counts(ds));
  s.spec.num_bg = 500;
  s.spec.num_fg = 100;
  s.spec.fg_class_dist = {1.0, 1.0, 1.0};
  s.spec.fg_logit_mean = {2.5, 2.0, 1.5};
  s.spec.neg_logit_mean = -2.0;
  s.spec.logit_noise = 1.0;
  s.spec.seed = seed;
  return s;
}

}  // namespace iif

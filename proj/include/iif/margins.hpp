#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "iif/dataset.hpp"
#include "iif/error.hpp"
#include "iif/linalg.hpp"
#include "iif/normal_quantile.hpp"

namespace iif {

// ---------------------------------------------------------------------------
// Inverse frequency variants

enum class Variant { Raw, Smooth, Relative, Base2, Base10, Gombit, Normit };

inline constexpr Variant kAllVariants[] = {Variant::Raw,    Variant::Smooth, Variant::Relative,
                                           Variant::Base2,  Variant::Base10, Variant::Gombit,
                                           Variant::Normit};

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::Raw: return "raw";
    case Variant::Smooth: return "smooth";
    case Variant::Relative: return "relative";
    case Variant::Base2: return "base2";
    case Variant::Base10: return "base10";
    case Variant::Gombit: return "gombit";
    case Variant::Normit: return "normit";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  for (auto v : kAllVariants)
    if (to_string(v) == s) return v;
  throw Error("unknown variant '" + std::string(s) +
              "' (expected raw|smooth|relative|base2|base10|gombit|normit)");
}

// Weight of a class seen `freq` times out of `total`:
//
//   raw       ln(K / IF)
//   smooth    ln((K + 1) / (IF + 1)) + 1
//   relative  ln((K - IF) / IF)
//   base2     log2(K / IF)
//   base10    log10(K / IF)
//   gombit    -ln(-ln(1 - IF / K))
//   normit    Phi^-1(1 - IF / K)
//
// Only smooth accepts IF = 0. Relative, gombit and normit diverge at IF = K.
inline double variant_weight(Variant v, double freq, double total) {
  if (!(total > 0.0)) throw DomainError("frequency total K must be positive");
  if (freq < 0.0 || freq > total) throw DomainError("frequency outside [0, K]");
  if (v == Variant::Smooth) return std::log((total + 1.0) / (freq + 1.0)) + 1.0;
  if (freq == 0.0) {
    throw DomainError(std::string("zero frequency under the ") + std::string(to_string(v)) +
                      " variant (use smooth)");
  }
  const double p = freq / total;
  switch (v) {
    case Variant::Raw: return std::log(total / freq);
    case Variant::Base2: return std::log2(total / freq);
    case Variant::Base10: return std::log10(total / freq);
    case Variant::Relative:
      if (freq == total) throw DomainError("relative variant is infinite at IF = K");
      return std::log((total - freq) / freq);
    case Variant::Gombit:
      if (freq == total) throw DomainError("gombit variant is infinite at IF = K");
      return -std::log(-std::log1p(-p));
    case Variant::Normit:
      if (freq == total) throw DomainError("normit variant is infinite at IF = K");
      return normal_quantile(1.0 - p);
    case Variant::Smooth: break;
  }
  return 0.0;
}

// Per-class multiplicative weights. With a background slot the vector has
// C + 1 entries and the background entry is exactly 1.
struct ClassWeights {
  Vector weights;
  CountSource source = CountSource::Image;
  Variant variant = Variant::Raw;
  std::optional<std::size_t> background_index{};

  std::size_t size() const noexcept { return weights.size(); }
  double operator[](std::size_t i) const { return weights[i]; }

  // Prepends a background slot at index 0.
  ClassWeights with_background() const {
    if (background_index) throw Error("weights already carry a background slot");
    ClassWeights out = *this;
    out.weights.insert(out.weights.begin(), 1.0);
    out.background_index = 0;
    return out;
  }

  static ClassWeights uniform(std::size_t n, double value = 1.0) {
    ClassWeights w;
    w.weights.assign(n, value);
    return w;
  }
};

inline ClassWeights compute_weights(const ClassFrequencyTable& table, Variant variant,
                                    CountSource source = CountSource::Image) {
  const auto& counts = table.counts(source);
  const auto total = static_cast<double>(table.total(source));
  if (!(total > 0.0)) throw DomainError("compute_weights: K = 0");
  ClassWeights w;
  w.source = source;
  w.variant = variant;
  w.weights.resize(counts.size());
  for (std::size_t y = 0; y < counts.size(); ++y) {
    try {
      w.weights[y] = variant_weight(variant, static_cast<double>(counts[y]), total);
    } catch (const DomainError& e) {
      throw DomainError("class " + std::to_string(y) + ": " + e.what());
    }
  }
  return w;
}

// ---------------------------------------------------------------------------
// Softmax family

inline double log_sum_exp(std::span<const double> z) {
  if (z.empty()) throw DomainError("log_sum_exp of an empty vector");
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

inline Vector softmax(std::span<const double> z) {
  if (z.empty()) throw DomainError("softmax of an empty vector");
  if (!all_finite(z)) throw DomainError("softmax: non-finite logits");
  const double m = *std::max_element(z.begin(), z.end());
  Vector q(z.size());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) s += (q[i] = std::exp(z[i] - m));
  for (auto& v : q) v /= s;
  return q;
}

inline Vector adjust_multiplicative(std::span<const double> logits, const ClassWeights& weights) {
  if (logits.size() != weights.size()) {
    throw DimensionError("adjust_multiplicative", weights.size(), logits.size());
  }
  Vector out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = weights[i] * logits[i];
  return out;
}

// softmax(w * z): each class gets its own exponential base (1/p)^z.
inline Vector iif_softmax(std::span<const double> logits, const ClassWeights& weights) {
  if (!all_finite(logits) || !all_finite(weights.weights)) {
    throw DomainError("iif_softmax: non-finite input");
  }
  return softmax(adjust_multiplicative(logits, weights));
}

// Lowest index wins ties.
inline std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw DomainError("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

// ---------------------------------------------------------------------------
// Additive label-shift compensation

struct TargetDistribution {
  Vector probs;

  static TargetDistribution uniform(std::size_t n) {
    return {Vector(n, 1.0 / static_cast<double>(n))};
  }

  void validate() const {
    double s = 0.0;
    for (double p : probs) {
      if (!(p >= 0.0) || !std::isfinite(p)) throw DomainError("target probability must be >= 0");
      s += p;
    }
    if (probs.empty() || std::abs(s - 1.0) > 1e-9) throw DomainError("target distribution must sum to 1");
  }
};

// z_y + ln p_t(y) - ln p_s(y) with p_s = IF / K.
inline Vector adjust_additive_posthoc(std::span<const double> logits,
                                      const ClassFrequencyTable& table,
                                      const TargetDistribution& target,
                                      CountSource source = CountSource::Image) {
  target.validate();
  if (logits.size() != table.num_classes()) {
    throw DimensionError("adjust_additive_posthoc logits", table.num_classes(), logits.size());
  }
  if (target.probs.size() != table.num_classes()) {
    throw DimensionError("adjust_additive_posthoc target", table.num_classes(), target.probs.size());
  }
  Vector out(logits.size());
  for (std::size_t y = 0; y < logits.size(); ++y) {
    const double ps = table.probability(y, source);
    if (ps <= 0.0) {
      throw DomainError("class " + std::to_string(y) + ": zero source probability");
    }
    out[y] = logits[y] + std::log(target.probs[y]) - std::log(ps);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Margin schemes

enum class MarginForm {
  Identity,
  MultiplicativeIIF,  // w_i z_i
  AdditivePosthoc,    // z_i - ln p_s(i) [+ ln p_t(i)]
  AdditiveLoss,       // z_i + ln p_s(i)
  BalancedSoftmax,    // z_i + ln IF(i)
  LDAMStyle,          // z_i - c / IF(i)^(1/4)
  LearnableScale,     // alpha_i z_i            (LWS)
  LearnableAffine,    // alpha_i z_i + beta_i   (DisAlign)
  CSLWeight,          // loss-side weights; logits pass through
};

inline std::string_view to_string(MarginForm f) {
  switch (f) {
    case MarginForm::Identity: return "identity";
    case MarginForm::MultiplicativeIIF: return "multiplicative_iif";
    case MarginForm::AdditivePosthoc: return "additive_posthoc";
    case MarginForm::AdditiveLoss: return "additive_loss";
    case MarginForm::BalancedSoftmax: return "balanced_softmax";
    case MarginForm::LDAMStyle: return "ldam";
    case MarginForm::LearnableScale: return "learnable_scale";
    case MarginForm::LearnableAffine: return "learnable_affine";
    case MarginForm::CSLWeight: return "csl";
  }
  return "?";
}

inline MarginForm parse_margin_form(std::string_view s) {
  for (auto f : {MarginForm::Identity, MarginForm::MultiplicativeIIF, MarginForm::AdditivePosthoc,
                 MarginForm::AdditiveLoss, MarginForm::BalancedSoftmax, MarginForm::LDAMStyle,
                 MarginForm::LearnableScale, MarginForm::LearnableAffine, MarginForm::CSLWeight}) {
    if (to_string(f) == s) return f;
  }
  throw Error("unknown margin form '" + std::string(s) + "'");
}

// Shared per-class scale/offset for the learnable forms. Readers take a
// snapshot; writers hold the lock exclusively.
class LearnableParameters {
 public:
  struct Values {
    Vector scale;
    Vector offset;
  };

  explicit LearnableParameters(std::size_t n) : values_{Vector(n, 1.0), Vector(n, 0.0)} {}
  explicit LearnableParameters(Values v) : values_(std::move(v)) {}

  Values snapshot() const {
    std::shared_lock lock(mutex_);
    return values_;
  }

  template <typename Fn>
  void update(Fn&& fn) {
    std::unique_lock lock(mutex_);
    fn(values_);
  }

 private:
  mutable std::shared_mutex mutex_;
  Values values_;
};

// A logit transformation. Dataset-dependent forms are precomputed into
// per-slot `scale` and `shift` vectors; learnable forms read the shared
// parameter handle at apply time.
struct MarginScheme {
  MarginForm form = MarginForm::Identity;
  Vector scale;  // empty means 1
  Vector shift;  // empty means 0
  std::optional<ClassWeights> weights;
  std::shared_ptr<LearnableParameters> learnable;
  double ldam_c = 0.0;
  std::optional<std::size_t> background_index{};
  std::string description = "none";

  // Number of logit slots the scheme expects; 0 for the identity, which
  // accepts any length.
  std::size_t num_slots() const {
    if (!scale.empty()) return scale.size();
    if (!shift.empty()) return shift.size();
    if (learnable) return learnable->snapshot().scale.size();
    return 0;
  }

  Vector apply(std::span<const double> logits) const {
    Vector out(logits.begin(), logits.end());
    if (form == MarginForm::Identity || form == MarginForm::CSLWeight) return out;
    if (form == MarginForm::LearnableScale || form == MarginForm::LearnableAffine) {
      if (!learnable) throw Error(std::string(to_string(form)) + ": missing learnable parameters");
      const auto p = learnable->snapshot();
      if (p.scale.size() != logits.size()) throw DimensionError("learnable scheme", p.scale.size(), logits.size());
      for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] *= p.scale[i];
        if (form == MarginForm::LearnableAffine) out[i] += p.offset.at(i);
      }
      return out;
    }
    const std::size_t n = num_slots();
    if (n != logits.size()) throw DimensionError(description, n, logits.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (!scale.empty()) out[i] *= scale[i];
      if (!shift.empty()) out[i] += shift[i];
    }
    return out;
  }

  // Extends the scheme with a background slot at index 0 that is left
  // unaltered: weight 1 for multiplicative forms, zero shift for additive.
  MarginScheme with_background() const {
    if (background_index) throw Error("scheme already has a background slot");
    MarginScheme out = *this;
    if (!out.scale.empty()) out.scale.insert(out.scale.begin(), 1.0);
    if (!out.shift.empty()) out.shift.insert(out.shift.begin(), 0.0);
    if (out.weights) *out.weights = out.weights->with_background();
    if (out.learnable) {
      auto p = out.learnable->snapshot();
      p.scale.insert(p.scale.begin(), 1.0);
      p.offset.insert(p.offset.begin(), 0.0);
      out.learnable = std::make_shared<LearnableParameters>(std::move(p));
    }
    out.background_index = 0;
    out.description += "+bg";
    return out;
  }

  bool is_identity() const { return form == MarginForm::Identity || form == MarginForm::CSLWeight; }

  // ---- factories

  static MarginScheme identity() { return {}; }

  static MarginScheme multiplicative(ClassWeights w) {
    MarginScheme s;
    s.form = MarginForm::MultiplicativeIIF;
    s.scale = w.weights;
    s.background_index = w.background_index;
    s.description = "iif[" + std::string(to_string(w.variant)) + "," + std::string(to_string(w.source)) + "]";
    s.weights = std::move(w);
    return s;
  }

  // z - ln p_s, optionally + ln p_t. Without a target this is the
  // uniform-target rule with the argmax-irrelevant constant dropped.
  static MarginScheme additive_posthoc(const ClassFrequencyTable& table,
                                       std::optional<TargetDistribution> target = std::nullopt,
                                       CountSource source = CountSource::Image) {
    MarginScheme s;
    s.form = MarginForm::AdditivePosthoc;
    s.shift.resize(table.num_classes());
    if (target) {
      target->validate();
      if (target->probs.size() != table.num_classes()) {
        throw DimensionError("additive_posthoc target", table.num_classes(), target->probs.size());
      }
    }
    for (std::size_t y = 0; y < table.num_classes(); ++y) {
      const double ps = table.probability(y, source);
      if (ps <= 0.0) throw DomainError("class " + std::to_string(y) + ": zero source probability");
      s.shift[y] = -std::log(ps) + (target ? std::log(target->probs[y]) : 0.0);
    }
    s.description = "additive_posthoc[" + std::string(to_string(source)) + "]";
    return s;
  }

  static MarginScheme additive_loss(const ClassFrequencyTable& table,
                                    CountSource source = CountSource::Image) {
    MarginScheme s = additive_posthoc(table, std::nullopt, source);
    for (auto& v : s.shift) v = -v;
    s.form = MarginForm::AdditiveLoss;
    s.description = "additive_loss[" + std::string(to_string(source)) + "]";
    return s;
  }

  static MarginScheme balanced_softmax(const ClassFrequencyTable& table,
                                       CountSource source = CountSource::Image) {
    MarginScheme s;
    s.form = MarginForm::BalancedSoftmax;
    const auto& c = table.counts(source);
    s.shift.resize(c.size());
    for (std::size_t y = 0; y < c.size(); ++y) {
      if (c[y] == 0) throw DomainError("class " + std::to_string(y) + ": balanced softmax needs IF > 0");
      s.shift[y] = std::log(static_cast<double>(c[y]));
    }
    s.description = "balanced_softmax[" + std::string(to_string(source)) + "]";
    return s;
  }

  static MarginScheme ldam(const ClassFrequencyTable& table, double c,
                           CountSource source = CountSource::Image) {
    if (!(c > 0.0)) throw DomainError("LDAM margin constant must be > 0");
    MarginScheme s;
    s.form = MarginForm::LDAMStyle;
    s.ldam_c = c;
    const auto& counts = table.counts(source);
    s.shift.resize(counts.size());
    for (std::size_t y = 0; y < counts.size(); ++y) {
      if (counts[y] == 0) throw DomainError("class " + std::to_string(y) + ": LDAM needs IF > 0");
      s.shift[y] = -c / std::pow(static_cast<double>(counts[y]), 0.25);
    }
    s.description = "ldam[c=" + std::to_string(c) + "]";
    return s;
  }

  static MarginScheme learnable_scale(std::size_t n) {
    MarginScheme s;
    s.form = MarginForm::LearnableScale;
    s.learnable = std::make_shared<LearnableParameters>(n);
    s.description = "lws";
    return s;
  }

  static MarginScheme learnable_affine(std::size_t n) {
    MarginScheme s = learnable_scale(n);
    s.form = MarginForm::LearnableAffine;
    s.description = "disalign";
    return s;
  }

  static MarginScheme csl(ClassWeights w) {
    MarginScheme s;
    s.form = MarginForm::CSLWeight;
    s.description = "csl[" + std::string(to_string(w.variant)) + "]";
    s.weights = std::move(w);
    return s;
  }
};

inline Vector adjust_table4(std::span<const double> logits, const MarginScheme& scheme) {
  return scheme.apply(logits);
}

// ---------------------------------------------------------------------------
// Textual scheme selection, e.g. "none", "iif:smooth", "iif:base10:object",
// "additive", "balanced_softmax", "ldam:0.5", "lws", "disalign".

struct SchemeConfig {
  std::string name = "none";
  Variant variant = Variant::Smooth;
  CountSource source = CountSource::Image;
  double ldam_c = 1.0;

  std::string label() const {
    if (name == "iif" || name == "csl") {
      return name + ":" + std::string(to_string(variant)) +
             (source == CountSource::Object ? ":object" : "");
    }
    return name;
  }
};

inline SchemeConfig parse_scheme_config(std::string_view text, Variant default_variant = Variant::Smooth,
                                        CountSource default_source = CountSource::Image) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto colon = text.find(':', start);
    parts.emplace_back(text.substr(start, colon == std::string_view::npos ? text.npos : colon - start));
    if (colon == std::string_view::npos) break;
    start = colon + 1;
  }
  SchemeConfig c;
  c.name = parts[0];
  c.variant = default_variant;
  c.source = default_source;
  static const std::vector<std::string> known = {"none", "iif", "additive", "additive_loss",
                                                 "balanced_softmax", "ldam", "lws", "disalign", "csl"};
  if (std::find(known.begin(), known.end(), c.name) == known.end()) {
    throw Error("unknown scheme '" + c.name + "'");
  }
  for (std::size_t i = 1; i < parts.size(); ++i) {
    const auto& p = parts[i];
    if (c.name == "ldam") {
      c.ldam_c = std::stod(p);
    } else if (p == "image" || p == "object") {
      c.source = parse_count_source(p);
    } else {
      c.variant = parse_variant(p);
    }
  }
  return c;
}

inline MarginScheme make_scheme(const SchemeConfig& c, const ClassFrequencyTable& table) {
  MarginScheme s;
  if (c.name == "none") return MarginScheme::identity();
  if (c.name == "iif") s = MarginScheme::multiplicative(compute_weights(table, c.variant, c.source));
  else if (c.name == "csl") s = MarginScheme::csl(compute_weights(table, c.variant, c.source));
  else if (c.name == "additive") s = MarginScheme::additive_posthoc(table, std::nullopt, c.source);
  else if (c.name == "additive_loss") s = MarginScheme::additive_loss(table, c.source);
  else if (c.name == "balanced_softmax") s = MarginScheme::balanced_softmax(table, c.source);
  else if (c.name == "ldam") s = MarginScheme::ldam(table, c.ldam_c, c.source);
  else if (c.name == "lws") s = MarginScheme::learnable_scale(table.num_classes());
  else if (c.name == "disalign") s = MarginScheme::learnable_affine(table.num_classes());
  else throw Error("unknown scheme '" + c.name + "'");
  return s;
}

}  // namespace iif

#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "iif/dataset.hpp"
#include "iif/error.hpp"
#include "iif/linalg.hpp"
#include "iif/margins.hpp"
#include "iif/random.hpp"

namespace iif {

enum class HeadKind { Dot, Cosine };

inline std::string_view to_string(HeadKind h) { return h == HeadKind::Dot ? "dot" : "cosine"; }

inline HeadKind parse_head_kind(std::string_view s) {
  if (s == "dot") return HeadKind::Dot;
  if (s == "cosine") return HeadKind::Cosine;
  throw Error("unknown head '" + std::string(s) + "' (expected dot|cosine)");
}

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out; empty for the cosine head

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

// Optional ReLU hidden layer followed by a linear or cosine classification
// head. Row y of `head.weight` is the weight vector of class y.
struct ClassifierModel {
  std::optional<DenseLayer> hidden;
  DenseLayer head;
  HeadKind head_kind = HeadKind::Dot;
  double cosine_scale = 16.0;

  std::size_t input_dim() const { return hidden ? hidden->weight.cols() : head.weight.cols(); }
  std::size_t feature_dim() const { return head.weight.cols(); }
  std::size_t num_classes() const { return head.weight.rows(); }

  friend bool operator==(const ClassifierModel&, const ClassifierModel&) = default;
};

struct ModelConfig {
  std::size_t input_dim = 0;
  std::size_t num_classes = 0;
  std::size_t hidden_width = 0;  // 0: no hidden layer
  HeadKind head = HeadKind::Dot;
  double cosine_scale = 16.0;
};

// Gaussian init with variance 2 / fan_in, zero biases.
inline ClassifierModel init_model(const ModelConfig& cfg, Rng& rng) {
  if (cfg.input_dim == 0 || cfg.num_classes == 0) throw DomainError("model dimensions must be positive");
  auto fill = [&](Matrix& m) {
    std::normal_distribution<double> g(0.0, std::sqrt(2.0 / static_cast<double>(m.cols())));
    for (auto& v : m.flat()) v = g(rng);
  };
  ClassifierModel m;
  m.head_kind = cfg.head;
  m.cosine_scale = cfg.cosine_scale;
  std::size_t feat = cfg.input_dim;
  if (cfg.hidden_width > 0) {
    m.hidden = DenseLayer{Matrix(cfg.hidden_width, cfg.input_dim), Vector(cfg.hidden_width, 0.0)};
    fill(m.hidden->weight);
    feat = cfg.hidden_width;
  }
  m.head.weight = Matrix(cfg.num_classes, feat);
  fill(m.head.weight);
  if (cfg.head == HeadKind::Dot) m.head.bias.assign(cfg.num_classes, 0.0);
  return m;
}

// Intermediate values of one forward pass, kept for backprop.
struct ForwardTrace {
  Vector pre_activation;  // hidden layer input to ReLU (empty without hidden)
  Vector features;        // head input
  Vector logits;
};

inline ForwardTrace forward_trace(const ClassifierModel& model, std::span<const double> x) {
  if (x.size() != model.input_dim()) throw DimensionError("forward features", model.input_dim(), x.size());
  ForwardTrace t;
  if (model.hidden) {
    t.pre_activation = matvec(model.hidden->weight, x);
    t.features.resize(t.pre_activation.size());
    for (std::size_t i = 0; i < t.features.size(); ++i) {
      t.pre_activation[i] += model.hidden->bias[i];
      t.features[i] = std::max(0.0, t.pre_activation[i]);
    }
  } else {
    t.features.assign(x.begin(), x.end());
  }
  if (model.head_kind == HeadKind::Dot) {
    t.logits = matvec(model.head.weight, t.features);
    for (std::size_t c = 0; c < t.logits.size(); ++c) t.logits[c] += model.head.bias[c];
  } else {
    const double fn = l2_norm(t.features);
    if (fn == 0.0) throw DomainError("cosine head: zero-norm feature");
    t.logits.resize(model.num_classes());
    for (std::size_t c = 0; c < t.logits.size(); ++c) {
      const auto w = model.head.weight.row(c);
      const double wn = l2_norm(w);
      if (wn == 0.0) throw DomainError("cosine head: zero-norm weight row " + std::to_string(c));
      t.logits[c] = model.cosine_scale * dot(w, t.features) / (wn * fn);
    }
  }
  return t;
}

inline Vector forward(const ClassifierModel& model, std::span<const double> x) {
  return forward_trace(model, x).logits;
}

inline std::vector<Vector> forward_batch(const ClassifierModel& model,
                                         std::span<const LabeledSample> batch) {
  std::vector<Vector> out;
  out.reserve(batch.size());
  for (const auto& s : batch) out.push_back(forward(model, s.features));
  return out;
}

// ---------------------------------------------------------------------------
// Losses

enum class LossType { SoftmaxCE, IIFCE, CSL, LDAM };

inline std::string_view to_string(LossType t) {
  switch (t) {
    case LossType::SoftmaxCE: return "ce";
    case LossType::IIFCE: return "iifce";
    case LossType::CSL: return "csl";
    case LossType::LDAM: return "ldam";
  }
  return "?";
}

inline LossType parse_loss_type(std::string_view s) {
  for (auto t : {LossType::SoftmaxCE, LossType::IIFCE, LossType::CSL, LossType::LDAM})
    if (to_string(t) == s) return t;
  throw Error("unknown loss '" + std::string(s) + "' (expected ce|iifce|csl|ldam)");
}

struct LossKind {
  LossType type = LossType::SoftmaxCE;
  std::optional<ClassWeights> weights;  // IIF-CE logit weights or CSL alpha
  Vector margins;                       // LDAM per-class target margin c / IF^(1/4)
  double ldam_c = 0.0;

  static LossKind softmax_ce() { return {}; }

  static LossKind iif_ce(ClassWeights w) {
    LossKind k;
    k.type = LossType::IIFCE;
    k.weights = std::move(w);
    return k;
  }

  static LossKind csl(ClassWeights alpha) {
    LossKind k;
    k.type = LossType::CSL;
    k.weights = std::move(alpha);
    return k;
  }

  // Margin subtracted from the target logit only.
  static LossKind ldam(const ClassFrequencyTable& table, double c,
                       CountSource source = CountSource::Image) {
    const auto scheme = MarginScheme::ldam(table, c, source);
    LossKind k;
    k.type = LossType::LDAM;
    k.ldam_c = c;
    k.margins.resize(scheme.shift.size());
    for (std::size_t i = 0; i < k.margins.size(); ++i) k.margins[i] = -scheme.shift[i];
    return k;
  }

  // Logit transformation a model trained with this loss is meant to be read
  // through at inference: the multiplicative weights for IIF-CE, identity
  // otherwise.
  MarginScheme inference_scheme() const {
    if (type == LossType::IIFCE) return MarginScheme::multiplicative(*weights);
    return MarginScheme::identity();
  }

  std::string description() const {
    std::string d(to_string(type));
    if (weights) d += "[" + std::string(to_string(weights->variant)) + "," + std::string(to_string(weights->source)) + "]";
    if (type == LossType::LDAM) d += "[c=" + std::to_string(ldam_c) + "]";
    return d;
  }
};

struct LogitLoss {
  double loss = 0.0;
  Vector grad;  // dL/dz
};

// Loss of one sample and its gradient with respect to the raw logits z.
//
//   ce      L = lse(z) - z_y                 dL/dz_i = q_i - [i = y]
//   iifce   L = lse(w z) - w_y z_y           dL/dz_i = w_i (q_i - [i = y]),  q = softmax(w z)
//   csl     L = a_y (lse(z) - z_y)           dL/dz_i = a_y (q_i - [i = y])
//   ldam    CE on z - m_y e_y
inline LogitLoss logit_loss_and_grad(std::span<const double> z, std::size_t y, const LossKind& kind) {
  const std::size_t n = z.size();
  if (y >= n) throw DomainError("label " + std::to_string(y) + " outside " + std::to_string(n) + " logits");
  Vector adjusted(z.begin(), z.end());
  switch (kind.type) {
    case LossType::IIFCE:
      if (!kind.weights || kind.weights->size() != n) {
        throw DimensionError("iifce weights", n, kind.weights ? kind.weights->size() : 0);
      }
      for (std::size_t i = 0; i < n; ++i) adjusted[i] *= (*kind.weights)[i];
      break;
    case LossType::LDAM:
      if (kind.margins.size() != n) throw DimensionError("ldam margins", n, kind.margins.size());
      adjusted[y] -= kind.margins[y];
      break;
    case LossType::CSL:
      if (!kind.weights || kind.weights->size() != n) {
        throw DimensionError("csl weights", n, kind.weights ? kind.weights->size() : 0);
      }
      break;
    case LossType::SoftmaxCE: break;
  }
  const double lse = log_sum_exp(adjusted);
  LogitLoss out;
  out.loss = lse - adjusted[y];
  out.grad.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.grad[i] = std::exp(adjusted[i] - lse) - (i == y ? 1.0 : 0.0);
  }
  if (kind.type == LossType::IIFCE) {
    for (std::size_t i = 0; i < n; ++i) out.grad[i] *= (*kind.weights)[i];
  } else if (kind.type == LossType::CSL) {
    const double a = (*kind.weights)[y];
    out.loss *= a;
    for (auto& g : out.grad) g *= a;
  }
  return out;
}

// Same shapes as the model's parameters.
struct Gradients {
  std::optional<DenseLayer> hidden;
  DenseLayer head;

  static Gradients zeros_like(const ClassifierModel& m) {
    Gradients g;
    if (m.hidden) {
      g.hidden = DenseLayer{Matrix(m.hidden->weight.rows(), m.hidden->weight.cols()),
                            Vector(m.hidden->bias.size(), 0.0)};
    }
    g.head = DenseLayer{Matrix(m.head.weight.rows(), m.head.weight.cols()),
                        Vector(m.head.bias.size(), 0.0)};
    return g;
  }
};

struct GradientReport {
  Gradients grads;
  double loss = 0.0;  // mean over the batch
};

// Adds dL/dtheta for one sample, given dL/dz, into `acc`.
inline void backprop(const ClassifierModel& model, std::span<const double> x,
                     const ForwardTrace& t, std::span<const double> dz, Gradients& acc) {
  const std::size_t c_count = model.num_classes();
  const std::size_t h = model.feature_dim();
  Vector df(h, 0.0);
  if (model.head_kind == HeadKind::Dot) {
    for (std::size_t c = 0; c < c_count; ++c) {
      auto gw = acc.head.weight.row(c);
      const auto w = model.head.weight.row(c);
      for (std::size_t k = 0; k < h; ++k) {
        gw[k] += dz[c] * t.features[k];
        df[k] += dz[c] * w[k];
      }
      acc.head.bias[c] += dz[c];
    }
  } else {
    const double fn = l2_norm(t.features);
    Vector u(h);
    for (std::size_t k = 0; k < h; ++k) u[k] = t.features[k] / fn;
    const double s = model.cosine_scale;
    for (std::size_t c = 0; c < c_count; ++c) {
      const auto w = model.head.weight.row(c);
      const double wn = l2_norm(w);
      const double cos = dot(w, u) / wn;
      auto gw = acc.head.weight.row(c);
      for (std::size_t k = 0; k < h; ++k) {
        const double v = w[k] / wn;
        gw[k] += dz[c] * s / wn * (u[k] - cos * v);
        df[k] += dz[c] * s / fn * (v - cos * u[k]);
      }
    }
  }
  if (model.hidden) {
    auto& gh = *acc.hidden;
    for (std::size_t j = 0; j < h; ++j) {
      if (t.pre_activation[j] <= 0.0) continue;
      auto gw = gh.weight.row(j);
      for (std::size_t k = 0; k < x.size(); ++k) gw[k] += df[j] * x[k];
      gh.bias[j] += df[j];
    }
  }
}

namespace detail {
template <typename SampleAt>
GradientReport accumulate_loss(const ClassifierModel& model, std::size_t n, SampleAt&& at,
                               const LossKind& kind, std::size_t batch_index) {
  if (n == 0) throw DomainError("loss_and_grad: empty batch");
  GradientReport r{Gradients::zeros_like(model), 0.0};
  for (std::size_t i = 0; i < n; ++i) {
    const LabeledSample& s = at(i);
    const auto t = forward_trace(model, s.features);
    const auto l = logit_loss_and_grad(t.logits, s.label, kind);
    if (!std::isfinite(l.loss)) {
      throw TrainingError("non-finite loss in batch " + std::to_string(batch_index), batch_index);
    }
    r.loss += l.loss;
    backprop(model, s.features, t, l.grad, r.grads);
  }
  const double inv = 1.0 / static_cast<double>(n);
  r.loss *= inv;
  auto scale = [inv](DenseLayer& d) {
    for (auto& v : d.weight.flat()) v *= inv;
    for (auto& v : d.bias) v *= inv;
  };
  scale(r.grads.head);
  if (r.grads.hidden) scale(*r.grads.hidden);
  return r;
}
}  // namespace detail

// Mean loss over the batch and its parameter gradients.
inline GradientReport loss_and_grad(const ClassifierModel& model, std::span<const LabeledSample> batch,
                                    const LossKind& kind, std::size_t batch_index = 0) {
  return detail::accumulate_loss(
      model, batch.size(), [&](std::size_t i) -> const LabeledSample& { return batch[i]; }, kind,
      batch_index);
}

// Batch given as indices into `samples`.
inline GradientReport loss_and_grad(const ClassifierModel& model, std::span<const LabeledSample> samples,
                                    std::span<const std::size_t> batch, const LossKind& kind,
                                    std::size_t batch_index = 0) {
  return detail::accumulate_loss(
      model, batch.size(), [&](std::size_t i) -> const LabeledSample& { return samples[batch[i]]; },
      kind, batch_index);
}

// ---------------------------------------------------------------------------
// Optimiser

struct SgdConfig {
  double lr = 0.1;
  double weight_decay = 0.0;
  double momentum = 0.0;
};

struct SgdState {
  std::optional<Gradients> velocity;
};

// v <- mu v + (g + wd p);  p <- p - lr v
inline void sgd_step(ClassifierModel& model, const Gradients& grads, const SgdConfig& cfg,
                     SgdState& state, bool update_hidden = true) {
  if (!(cfg.lr > 0.0)) throw DomainError("learning rate must be > 0");
  if (!state.velocity) state.velocity = Gradients::zeros_like(model);
  auto step = [&](std::vector<double>& p, const std::vector<double>& g, std::vector<double>& v) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = cfg.momentum * v[i] + g[i] + cfg.weight_decay * p[i];
      p[i] -= cfg.lr * v[i];
    }
  };
  auto step_layer = [&](DenseLayer& p, const DenseLayer& g, DenseLayer& v) {
    step(p.weight.flat(), g.weight.flat(), v.weight.flat());
    step(p.bias, g.bias, v.bias);
  };
  step_layer(model.head, grads.head, state.velocity->head);
  if (update_hidden && model.hidden) step_layer(*model.hidden, *grads.hidden, *state.velocity->hidden);
}

inline Vector weight_norms(const ClassifierModel& model) {
  Vector n(model.num_classes());
  for (std::size_t c = 0; c < n.size(); ++c) n[c] = l2_norm(model.head.weight.row(c));
  return n;
}

}  // namespace iif

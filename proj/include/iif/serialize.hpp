#pragma once

// JSON encodings for the library types. Readers fill missing keys with the
// struct defaults and reject keys they do not know.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "iif/dataset.hpp"
#include "iif/error.hpp"
#include "iif/eval.hpp"
#include "iif/margins.hpp"
#include "iif/model.hpp"
#include "iif/training.hpp"

namespace iif {

using Json = nlohmann::json;

namespace detail {

inline void check_keys(const Json& j, std::string_view what, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw Error(std::string(what) + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw Error(std::string(what) + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read_opt(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline Json matrix_to_json(const Matrix& m) {
  return Json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.flat()}};
}

inline Matrix matrix_from_json(const Json& j) {
  check_keys(j, "matrix", {"rows", "cols", "data"});
  const auto rows = j.at("rows").get<std::size_t>();
  const auto cols = j.at("cols").get<std::size_t>();
  const auto data = j.at("data").get<Vector>();
  if (data.size() != rows * cols) throw DimensionError("matrix data", rows * cols, data.size());
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = data[r * cols + c];
  return m;
}

inline Json layer_to_json(const DenseLayer& d) { return Json{{"weight", matrix_to_json(d.weight)}, {"bias", d.bias}}; }

inline DenseLayer layer_from_json(const Json& j) {
  check_keys(j, "layer", {"weight", "bias"});
  DenseLayer d{matrix_from_json(j.at("weight")), j.at("bias").get<Vector>()};
  if (!d.bias.empty() && d.bias.size() != d.weight.rows()) throw DimensionError("layer bias", d.weight.rows(), d.bias.size());
  return d;
}

inline Json optional_index(const std::optional<std::size_t>& i) { return i ? Json(*i) : Json(nullptr); }

inline std::optional<std::size_t> read_optional_index(const Json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<std::size_t>();
}

}  // namespace detail

// ---- frequency table ------------------------------------------------------

inline Json to_json(const ClassFrequencyTable& t) {
  return Json{{"image_freq", t.image_freq()}, {"object_freq", t.object_freq()}, {"K", t.total()}};
}

inline ClassFrequencyTable frequency_table_from_json(const Json& j) {
  detail::check_keys(j, "frequency table", {"image_freq", "object_freq", "K"});
  auto image = j.at("image_freq").get<std::vector<std::uint64_t>>();
  auto object = j.contains("object_freq") ? j.at("object_freq").get<std::vector<std::uint64_t>>() : image;
  ClassFrequencyTable t(std::move(image), std::move(object));
  if (j.contains("K") && j.at("K").get<std::uint64_t>() != t.total()) {
    throw Error("frequency table: K does not equal the sum of image_freq");
  }
  return t;
}

// ---- weights and schemes --------------------------------------------------

inline Json to_json(const ClassWeights& w) {
  return Json{{"variant", to_string(w.variant)},
              {"source", to_string(w.source)},
              {"weights", w.weights},
              {"background_index", detail::optional_index(w.background_index)}};
}

inline ClassWeights class_weights_from_json(const Json& j) {
  detail::check_keys(j, "class weights", {"variant", "source", "weights", "background_index"});
  ClassWeights w;
  w.variant = parse_variant(j.at("variant").get<std::string>());
  w.source = parse_count_source(j.value("source", std::string("image")));
  w.weights = j.at("weights").get<Vector>();
  w.background_index = detail::read_optional_index(j, "background_index");
  return w;
}

inline Json to_json(const MarginScheme& s) {
  Json j{{"form", to_string(s.form)},
         {"description", s.description},
         {"scale", s.scale},
         {"shift", s.shift},
         {"ldam_c", s.ldam_c},
         {"background_index", detail::optional_index(s.background_index)},
         {"weights", s.weights ? to_json(*s.weights) : Json(nullptr)},
         {"learnable", nullptr}};
  if (s.learnable) {
    const auto v = s.learnable->snapshot();
    j["learnable"] = Json{{"scale", v.scale}, {"offset", v.offset}};
  }
  return j;
}

inline MarginScheme margin_scheme_from_json(const Json& j) {
  detail::check_keys(j, "margin scheme",
                     {"form", "description", "scale", "shift", "ldam_c", "background_index", "weights", "learnable"});
  MarginScheme s;
  s.form = parse_margin_form(j.at("form").get<std::string>());
  detail::read_opt(j, "description", s.description);
  detail::read_opt(j, "scale", s.scale);
  detail::read_opt(j, "shift", s.shift);
  detail::read_opt(j, "ldam_c", s.ldam_c);
  s.background_index = detail::read_optional_index(j, "background_index");
  if (j.contains("weights") && !j.at("weights").is_null()) s.weights = class_weights_from_json(j.at("weights"));
  if (j.contains("learnable") && !j.at("learnable").is_null()) {
    const auto& l = j.at("learnable");
    detail::check_keys(l, "learnable parameters", {"scale", "offset"});
    LearnableParameters::Values v{l.at("scale").get<Vector>(), l.at("offset").get<Vector>()};
    if (v.scale.size() != v.offset.size()) throw DimensionError("learnable offset", v.scale.size(), v.offset.size());
    s.learnable = std::make_shared<LearnableParameters>(std::move(v));
  }
  return s;
}

// ---- losses and plans -----------------------------------------------------

inline Json to_json(const LossConfig& c) {
  return Json{{"type", to_string(c.type)},
              {"variant", to_string(c.variant)},
              {"source", to_string(c.source)},
              {"ldam_c", c.ldam_c}};
}

inline LossConfig loss_config_from_json(const Json& j) {
  if (j.is_string()) {
    LossConfig c;
    c.type = parse_loss_type(j.get<std::string>());
    return c;
  }
  detail::check_keys(j, "loss", {"type", "variant", "source", "ldam_c"});
  LossConfig c;
  if (j.contains("type")) c.type = parse_loss_type(j.at("type").get<std::string>());
  if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
  if (j.contains("source")) c.source = parse_count_source(j.at("source").get<std::string>());
  detail::read_opt(j, "ldam_c", c.ldam_c);
  return c;
}

inline Json to_json(const LossKind& k) {
  return Json{{"type", to_string(k.type)},
              {"weights", k.weights ? to_json(*k.weights) : Json(nullptr)},
              {"margins", k.margins},
              {"ldam_c", k.ldam_c}};
}

inline LossKind loss_kind_from_json(const Json& j) {
  detail::check_keys(j, "loss kind", {"type", "weights", "margins", "ldam_c"});
  LossKind k;
  k.type = parse_loss_type(j.at("type").get<std::string>());
  if (j.contains("weights") && !j.at("weights").is_null()) k.weights = class_weights_from_json(j.at("weights"));
  detail::read_opt(j, "margins", k.margins);
  detail::read_opt(j, "ldam_c", k.ldam_c);
  if ((k.type == LossType::IIFCE || k.type == LossType::CSL) && !k.weights) {
    throw Error("loss kind '" + std::string(to_string(k.type)) + "' requires weights");
  }
  return k;
}

inline Json to_json(const SchemeConfig& c) {
  return Json{{"name", c.name}, {"variant", to_string(c.variant)}, {"source", to_string(c.source)}, {"ldam_c", c.ldam_c}};
}

inline SchemeConfig scheme_config_from_json(const Json& j) {
  if (j.is_string()) return parse_scheme_config(j.get<std::string>());
  detail::check_keys(j, "scheme config", {"name", "variant", "source", "ldam_c"});
  auto c = parse_scheme_config(j.value("name", std::string("none")));
  if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
  if (j.contains("source")) c.source = parse_count_source(j.at("source").get<std::string>());
  detail::read_opt(j, "ldam_c", c.ldam_c);
  return c;
}

// Strategy encoding:
//   {"kind": "end_to_end", "loss": <loss>}
//   {"kind": "decoupled", "stage1_loss", "stage2_loss", "stage1_epochs",
//    "stage2_epochs" (null for the default), "stage2_lr_factor"}
//   {"kind": "post_hoc", "train_loss", "inference_scheme"}
// A loss is either a type string ("ce", "iifce", "csl", "ldam") or an object
// {"type", "variant", "source", "ldam_c"}.
inline Json to_json(const Strategy& strategy) {
  return std::visit(
      [](const auto& s) -> Json {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, EndToEnd>) {
          return Json{{"kind", "end_to_end"}, {"loss", to_json(s.loss)}};
        } else if constexpr (std::is_same_v<S, Decoupled>) {
          return Json{{"kind", "decoupled"},
                      {"stage1_loss", to_json(s.stage1_loss)},
                      {"stage2_loss", to_json(s.stage2_loss)},
                      {"stage1_epochs", s.stage1_epochs},
                      {"stage2_epochs", s.stage2_epochs ? Json(*s.stage2_epochs) : Json(nullptr)},
                      {"stage2_lr_factor", s.stage2_lr_factor}};
        } else {
          return Json{{"kind", "post_hoc"},
                      {"train_loss", to_json(s.train_loss)},
                      {"inference_scheme", to_json(s.inference_scheme)}};
        }
      },
      strategy);
}

inline Strategy strategy_from_json(const Json& j) {
  if (j.is_string()) {
    const auto kind = j.get<std::string>();
    if (kind == "end_to_end") return EndToEnd{};
    if (kind == "decoupled") return Decoupled{};
    if (kind == "post_hoc") return PostHoc{};
    throw Error("unknown strategy '" + kind + "' (expected end_to_end|decoupled|post_hoc)");
  }
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "end_to_end") {
    detail::check_keys(j, "end_to_end strategy", {"kind", "loss"});
    EndToEnd s;
    if (j.contains("loss")) s.loss = loss_config_from_json(j.at("loss"));
    return s;
  }
  if (kind == "decoupled") {
    detail::check_keys(j, "decoupled strategy",
                       {"kind", "stage1_loss", "stage2_loss", "stage1_epochs", "stage2_epochs", "stage2_lr_factor"});
    Decoupled s;
    if (j.contains("stage1_loss")) s.stage1_loss = loss_config_from_json(j.at("stage1_loss"));
    if (j.contains("stage2_loss")) s.stage2_loss = loss_config_from_json(j.at("stage2_loss"));
    detail::read_opt(j, "stage1_epochs", s.stage1_epochs);
    if (j.contains("stage2_epochs") && !j.at("stage2_epochs").is_null()) s.stage2_epochs = j.at("stage2_epochs").get<std::size_t>();
    detail::read_opt(j, "stage2_lr_factor", s.stage2_lr_factor);
    return s;
  }
  if (kind == "post_hoc") {
    detail::check_keys(j, "post_hoc strategy", {"kind", "train_loss", "inference_scheme"});
    PostHoc s;
    if (j.contains("train_loss")) s.train_loss = loss_config_from_json(j.at("train_loss"));
    if (j.contains("inference_scheme")) s.inference_scheme = scheme_config_from_json(j.at("inference_scheme"));
    return s;
  }
  throw Error("unknown strategy '" + kind + "' (expected end_to_end|decoupled|post_hoc)");
}

inline Json to_json(const TrainPlan& p) {
  return Json{{"strategy", to_json(p.strategy)},
              {"sampler", to_string(p.sampler)},
              {"epochs", p.epochs},
              {"batch_size", p.batch_size},
              {"lr", p.lr},
              {"schedule",
               Json{{"kind", to_string(p.schedule.kind)}, {"step_epochs", p.schedule.step_epochs}, {"gamma", p.schedule.gamma}}},
              {"weight_decay", p.weight_decay},
              {"momentum", p.momentum},
              {"seed", p.seed},
              {"hidden_width", p.hidden_width},
              {"head", to_string(p.head)},
              {"cosine_scale", p.cosine_scale}};
}

inline TrainPlan train_plan_from_json(const Json& j) {
  detail::check_keys(j, "train plan",
                     {"strategy", "sampler", "epochs", "batch_size", "lr", "schedule", "weight_decay", "momentum",
                      "seed", "hidden_width", "head", "cosine_scale"});
  TrainPlan p;
  if (j.contains("strategy")) p.strategy = strategy_from_json(j.at("strategy"));
  if (j.contains("sampler")) p.sampler = parse_sampler(j.at("sampler").get<std::string>());
  detail::read_opt(j, "epochs", p.epochs);
  detail::read_opt(j, "batch_size", p.batch_size);
  detail::read_opt(j, "lr", p.lr);
  if (j.contains("schedule")) {
    const auto& s = j.at("schedule");
    if (s.is_string()) {
      p.schedule.kind = parse_schedule(s.get<std::string>());
    } else {
      detail::check_keys(s, "schedule", {"kind", "step_epochs", "gamma"});
      if (s.contains("kind")) p.schedule.kind = parse_schedule(s.at("kind").get<std::string>());
      detail::read_opt(s, "step_epochs", p.schedule.step_epochs);
      detail::read_opt(s, "gamma", p.schedule.gamma);
    }
  }
  detail::read_opt(j, "weight_decay", p.weight_decay);
  detail::read_opt(j, "momentum", p.momentum);
  detail::read_opt(j, "seed", p.seed);
  detail::read_opt(j, "hidden_width", p.hidden_width);
  if (j.contains("head")) p.head = parse_head_kind(j.at("head").get<std::string>());
  detail::read_opt(j, "cosine_scale", p.cosine_scale);
  return p;
}

inline Json to_json(const DatasetSpec& s) {
  return Json{{"num_classes", s.num_classes},
              {"dim", s.dim},
              {"imbalance_factor", s.imbalance_factor},
              {"profile", to_string(s.profile)},
              {"explicit_counts", s.explicit_counts},
              {"max_count", s.max_count},
              {"test_per_class", s.test_per_class},
              {"class_separation", s.class_separation},
              {"seed", s.seed}};
}

inline DatasetSpec dataset_spec_from_json(const Json& j) {
  detail::check_keys(j, "dataset spec",
                     {"num_classes", "dim", "imbalance_factor", "profile", "explicit_counts", "max_count",
                      "test_per_class", "class_separation", "seed"});
  DatasetSpec s;
  detail::read_opt(j, "num_classes", s.num_classes);
  detail::read_opt(j, "dim", s.dim);
  detail::read_opt(j, "imbalance_factor", s.imbalance_factor);
  if (j.contains("profile")) s.profile = parse_count_profile(j.at("profile").get<std::string>());
  detail::read_opt(j, "explicit_counts", s.explicit_counts);
  detail::read_opt(j, "max_count", s.max_count);
  detail::read_opt(j, "test_per_class", s.test_per_class);
  detail::read_opt(j, "class_separation", s.class_separation);
  detail::read_opt(j, "seed", s.seed);
  return s;
}

// ---- model checkpoints ----------------------------------------------------

inline Json to_json(const ClassifierModel& m) {
  return Json{{"head_kind", to_string(m.head_kind)},
              {"cosine_scale", m.cosine_scale},
              {"hidden", m.hidden ? detail::layer_to_json(*m.hidden) : Json(nullptr)},
              {"head", detail::layer_to_json(m.head)}};
}

inline ClassifierModel model_from_json(const Json& j) {
  detail::check_keys(j, "model", {"head_kind", "cosine_scale", "hidden", "head"});
  ClassifierModel m;
  m.head_kind = parse_head_kind(j.at("head_kind").get<std::string>());
  detail::read_opt(j, "cosine_scale", m.cosine_scale);
  if (j.contains("hidden") && !j.at("hidden").is_null()) m.hidden = detail::layer_from_json(j.at("hidden"));
  m.head = detail::layer_from_json(j.at("head"));
  if (m.hidden && m.hidden->weight.rows() != m.head.weight.cols()) {
    throw DimensionError("head input", m.hidden->weight.rows(), m.head.weight.cols());
  }
  if (m.head_kind == HeadKind::Dot && m.head.bias.size() != m.head.weight.rows()) {
    throw DimensionError("head bias", m.head.weight.rows(), m.head.bias.size());
  }
  return m;
}

struct Checkpoint {
  ClassifierModel model;
  LossKind loss;
  MarginScheme inference_scheme;
  ClassFrequencyTable train_freq;
};

inline constexpr std::string_view kCheckpointFormat = "iif-checkpoint/1";

inline Json to_json(const Checkpoint& c) {
  return Json{{"format", kCheckpointFormat},
              {"model", to_json(c.model)},
              {"loss", to_json(c.loss)},
              {"inference_scheme", to_json(c.inference_scheme)},
              {"train_freq", to_json(c.train_freq)}};
}

inline Checkpoint checkpoint_from_json(const Json& j) {
  detail::check_keys(j, "checkpoint", {"format", "model", "loss", "inference_scheme", "train_freq"});
  if (j.at("format").get<std::string>() != kCheckpointFormat) {
    throw Error("unsupported checkpoint format '" + j.at("format").get<std::string>() + "'");
  }
  Checkpoint c{model_from_json(j.at("model")), loss_kind_from_json(j.at("loss")),
               margin_scheme_from_json(j.at("inference_scheme")), frequency_table_from_json(j.at("train_freq"))};
  if (c.train_freq.num_classes() != c.model.num_classes()) {
    throw DimensionError("checkpoint train_freq", c.model.num_classes(), c.train_freq.num_classes());
  }
  return c;
}

// ---- reports --------------------------------------------------------------

inline Json to_json(const NormStats& n) { return Json{{"mean", n.mean}, {"std", n.std}, {"per_class", n.per_class}}; }

inline Json to_json(const EvalReport& r) {
  Json groups = Json::object();
  for (std::size_t g = 0; g < kNumGroups; ++g) {
    const auto& v = r.group_top1[g];
    groups[std::string(to_string(static_cast<Group>(g)))] = v ? Json(*v) : Json(nullptr);
  }
  Json per_class = Json::array();
  for (const auto& a : r.per_class_top1) per_class.push_back(a ? Json(*a) : Json(nullptr));
  return Json{{"scheme", r.scheme},
              {"overall_top1", r.overall_top1},
              {"balanced_top1", r.balanced_top1()},
              {"group_top1", groups},
              {"per_class_top1", per_class},
              {"per_class_count", r.per_class_count},
              {"num_samples", r.num_samples},
              {"balanced_test", r.balanced_test},
              {"weight_norms", to_json(r.weight_norms)}};
}

inline EvalReport eval_report_from_json(const Json& j) {
  detail::check_keys(j, "eval report",
                     {"scheme", "overall_top1", "balanced_top1", "group_top1", "per_class_top1", "per_class_count",
                      "num_samples", "balanced_test", "weight_norms"});
  EvalReport r;
  detail::read_opt(j, "scheme", r.scheme);
  r.overall_top1 = j.at("overall_top1").get<double>();
  if (j.contains("group_top1")) {
    for (std::size_t g = 0; g < kNumGroups; ++g) {
      const auto key = std::string(to_string(static_cast<Group>(g)));
      const auto& gj = j.at("group_top1");
      if (gj.contains(key) && !gj.at(key).is_null()) r.group_top1[g] = gj.at(key).get<double>();
    }
  }
  if (j.contains("per_class_top1")) {
    for (const auto& a : j.at("per_class_top1")) {
      r.per_class_top1.push_back(a.is_null() ? std::nullopt : std::optional<double>(a.get<double>()));
    }
  }
  detail::read_opt(j, "per_class_count", r.per_class_count);
  detail::read_opt(j, "num_samples", r.num_samples);
  detail::read_opt(j, "balanced_test", r.balanced_test);
  if (j.contains("weight_norms")) {
    const auto& n = j.at("weight_norms");
    detail::check_keys(n, "weight norms", {"mean", "std", "per_class"});
    detail::read_opt(n, "mean", r.weight_norms.mean);
    detail::read_opt(n, "std", r.weight_norms.std);
    detail::read_opt(n, "per_class", r.weight_norms.per_class);
  }
  return r;
}

inline Json to_json(const TrainLog& l) {
  return Json{{"epoch_loss", l.epoch_loss},
              {"epoch_balanced_accuracy", l.epoch_balanced_accuracy},
              {"stage_boundaries", l.stage_boundaries}};
}

inline TrainLog train_log_from_json(const Json& j) {
  detail::check_keys(j, "train log", {"epoch_loss", "epoch_balanced_accuracy", "stage_boundaries"});
  TrainLog l;
  detail::read_opt(j, "epoch_loss", l.epoch_loss);
  detail::read_opt(j, "epoch_balanced_accuracy", l.epoch_balanced_accuracy);
  detail::read_opt(j, "stage_boundaries", l.stage_boundaries);
  return l;
}

// ---- experiment config ----------------------------------------------------

struct ExperimentConfig {
  DatasetSpec dataset;
  TrainPlan plan;
  std::vector<std::string> schemes{"none", "iif:smooth"};
  std::filesystem::path out_dir = "out";
  std::vector<std::uint64_t> seeds{0};

  void validate() const {
    if (seeds.empty()) throw Error("experiment config: seeds must be nonempty");
    if (schemes.empty()) throw Error("experiment config: schemes must be nonempty");
    for (const auto& s : schemes) parse_scheme_config(s);
  }
};

inline Json to_json(const ExperimentConfig& c) {
  return Json{{"dataset", to_json(c.dataset)},
              {"plan", to_json(c.plan)},
              {"schemes", c.schemes},
              {"out_dir", c.out_dir.string()},
              {"seeds", c.seeds}};
}

inline ExperimentConfig experiment_config_from_json(const Json& j) {
  detail::check_keys(j, "experiment config", {"dataset", "plan", "schemes", "out_dir", "seeds"});
  ExperimentConfig c;
  if (j.contains("dataset")) c.dataset = dataset_spec_from_json(j.at("dataset"));
  if (j.contains("plan")) c.plan = train_plan_from_json(j.at("plan"));
  detail::read_opt(j, "schemes", c.schemes);
  if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
  detail::read_opt(j, "seeds", c.seeds);
  c.validate();
  return c;
}

// ---- files ----------------------------------------------------------------

inline Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw Error("invalid JSON in '" + path.string() + "': " + e.what());
  }
}

inline void write_json_file(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

}  // namespace iif

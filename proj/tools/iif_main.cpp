#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "iif/commands.hpp"

namespace fs = std::filesystem;
using namespace iif;

namespace {

template <typename T>
void apply_flag(std::optional<T> const& flag, T& target) {
  if (flag) target = *flag;
}

fs::path test_file(const fs::path& data) { return fs::is_directory(data) ? data / "test.csv" : data; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Frequency-based logit adjustment for long-tailed classification"};
  app.fallthrough();
  app.require_subcommand(1);

  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> config_path;
  app.add_option("--seed", seed, "Run seed; every random stream is derived from it");
  app.add_option("--out", out, "Output directory");
  app.add_option("--config", config_path, "Experiment config JSON (dataset, plan, schemes, seeds)");

  // generate
  auto* gen = app.add_subcommand("generate", "Write a synthetic long-tailed dataset (train.csv, test.csv, freq.json)");
  std::optional<std::size_t> classes, dim;
  std::optional<double> beta, separation;
  std::optional<std::string> profile;
  std::optional<std::uint64_t> max_count, test_per_class;
  gen->add_option("--classes", classes, "Number of classes");
  gen->add_option("--dim", dim, "Feature dimension");
  gen->add_option("--beta", beta, "Imbalance factor n_max / n_min");
  gen->add_option("--profile", profile, "exponential|pareto")->check(CLI::IsMember({"exponential", "pareto"}));
  gen->add_option("--max-count", max_count, "Training count of the head class");
  gen->add_option("--test-per-class", test_per_class, "Balanced test samples per class");
  gen->add_option("--separation", separation, "Distance between class means");

  // train
  auto* tr = app.add_subcommand("train", "Train a classifier and write checkpoint.json, train_log.json, eval.json");
  std::string data_dir = "data";
  std::optional<std::string> plan_path, strategy, loss, variant, source, head, sampler, schedule;
  std::optional<double> scale, lr, weight_decay;
  std::optional<std::size_t> epochs, batch_size, hidden;
  tr->add_option("--data", data_dir, "Directory written by generate")->capture_default_str();
  tr->add_option("--plan", plan_path, "Train plan JSON");
  tr->add_option("--strategy", strategy, "end_to_end|decoupled|post_hoc");
  tr->add_option("--loss", loss, "ce|iifce|csl|ldam (stage-1 loss for decoupled)");
  tr->add_option("--variant", variant, "Weight variant for iifce/csl and post-hoc iif");
  tr->add_option("--source", source, "image|object counts");
  tr->add_option("--head", head, "dot|cosine");
  tr->add_option("--scale", scale, "Cosine head scale");
  tr->add_option("--sampler", sampler, "random|class_balanced");
  tr->add_option("--schedule", schedule, "constant|step|cosine");
  tr->add_option("--epochs", epochs, "Training epochs");
  tr->add_option("--batch-size", batch_size, "Mini-batch size");
  tr->add_option("--lr", lr, "Base learning rate");
  tr->add_option("--weight-decay", weight_decay, "L2 weight decay");
  tr->add_option("--hidden", hidden, "Hidden ReLU layer width (0: linear model)");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint and write eval.json");
  std::optional<std::string> checkpoint;
  std::string eval_data = "data";
  std::string eval_scheme = "model";
  ev->add_option("--checkpoint", checkpoint, "Checkpoint JSON (default <out>/checkpoint.json)");
  ev->add_option("--data", eval_data, "Test CSV or dataset directory")->capture_default_str();
  ev->add_option("--scheme", eval_scheme, "model|none|iif[:variant[:object]]|additive|balanced_softmax|ldam:<c>|...")
      ->capture_default_str();

  // compare
  auto* cmp = app.add_subcommand("compare", "Evaluate one checkpoint under several schemes and write compare.csv");
  std::string cmp_data = "data";
  std::string cmp_schemes = "none,iif:smooth";
  cmp->add_option("--checkpoint", checkpoint, "Checkpoint JSON (default <out>/checkpoint.json)");
  cmp->add_option("--data", cmp_data, "Test CSV or dataset directory")->capture_default_str();
  cmp->add_option("--schemes", cmp_schemes, "Comma-separated scheme list; deltas are against the first")
      ->capture_default_str();

  // detproxy
  auto* det = app.add_subcommand("detproxy", "Count false positives of adjusted detection scores");
  std::string det_schemes = "additive,multiplicative";
  double threshold = 0.5;
  bool match = false;
  std::optional<std::string> proposals;
  det->add_option("--schemes", det_schemes, "Comma-separated: none|additive|multiplicative|iif:<variant>")
      ->capture_default_str();
  det->add_option("--threshold", threshold, "Detection threshold in (0, 1)")->capture_default_str();
  det->add_flag("--match-recall", match, "Pick per-scheme thresholds at a common tail-class recall");
  det->add_option("--proposals", proposals, "Read proposals from CSV instead of simulating");

  // report
  auto* rep = app.add_subcommand("report", "Aggregate per-seed comparisons into mean and std tables");
  std::vector<std::string> inputs;
  rep->add_option("inputs", inputs, "compare.csv files, one per seed (omit to run the --config sweep)");

  CLI11_PARSE(app, argc, argv);

  try {
    std::optional<ExperimentConfig> config;
    if (config_path) config = experiment_config_from_json(read_json_file(*config_path));
    cmd::Paths written;

    if (*gen) {
      cmd::GenerateOptions o;
      if (config) o.spec = config->dataset;
      apply_flag(classes, o.spec.num_classes);
      apply_flag(dim, o.spec.dim);
      apply_flag(beta, o.spec.imbalance_factor);
      if (profile) o.spec.profile = parse_count_profile(*profile);
      apply_flag(max_count, o.spec.max_count);
      apply_flag(test_per_class, o.spec.test_per_class);
      apply_flag(separation, o.spec.class_separation);
      apply_flag(seed, o.spec.seed);
      o.out_dir = out.value_or("data");
      written = cmd::generate(o);
    } else if (*tr) {
      cmd::TrainOptions o;
      o.data_dir = data_dir;
      if (config) o.plan = config->plan;
      if (plan_path) o.plan = train_plan_from_json(read_json_file(*plan_path));
      if (strategy) o.plan.strategy = strategy_from_json(Json(*strategy));
      auto apply_loss = [&](LossConfig& c) {
        if (loss) c.type = parse_loss_type(*loss);
        if (variant) c.variant = parse_variant(*variant);
        if (source) c.source = parse_count_source(*source);
      };
      std::visit(
          [&](auto& s) {
            using S = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<S, EndToEnd>) apply_loss(s.loss);
            else if constexpr (std::is_same_v<S, Decoupled>) apply_loss(s.stage1_loss);
            else {
              apply_loss(s.train_loss);
              if (variant) s.inference_scheme.variant = parse_variant(*variant);
              if (source) s.inference_scheme.source = parse_count_source(*source);
            }
          },
          o.plan.strategy);
      if (head) o.plan.head = parse_head_kind(*head);
      apply_flag(scale, o.plan.cosine_scale);
      if (sampler) o.plan.sampler = parse_sampler(*sampler);
      if (schedule) o.plan.schedule.kind = parse_schedule(*schedule);
      apply_flag(epochs, o.plan.epochs);
      apply_flag(batch_size, o.plan.batch_size);
      apply_flag(lr, o.plan.lr);
      apply_flag(weight_decay, o.plan.weight_decay);
      apply_flag(hidden, o.plan.hidden_width);
      apply_flag(seed, o.plan.seed);
      o.out_dir = out.value_or("run");
      const auto r = cmd::train(o);
      written = r.paths;
      std::cout << "final balanced top-1 " << r.report.balanced_top1() << " under " << r.report.scheme << '\n';
    } else if (*ev) {
      cmd::EvalOptions o;
      o.out_dir = out.value_or("run");
      o.checkpoint = checkpoint ? fs::path(*checkpoint) : o.out_dir / "checkpoint.json";
      o.test_csv = test_file(eval_data);
      o.scheme = eval_scheme;
      const auto [paths, report] = cmd::eval(o);
      written = paths;
      std::cout << "overall " << report.overall_top1 << ", balanced " << report.balanced_top1() << '\n';
    } else if (*cmp) {
      cmd::CompareOptions o;
      o.out_dir = out.value_or("run");
      o.checkpoint = checkpoint ? fs::path(*checkpoint) : o.out_dir / "checkpoint.json";
      o.test_csv = test_file(cmp_data);
      o.schemes = cmd::split_list(cmp_schemes);
      written = cmd::compare(o).first;
    } else if (*det) {
      cmd::DetproxyOptions o;
      o.seed = seed.value_or(0);
      o.schemes = cmd::split_list(det_schemes);
      o.threshold = threshold;
      o.match_recall = match;
      if (proposals) o.proposals_csv = *proposals;
      o.out_dir = out.value_or("detproxy");
      const auto [paths, rows] = cmd::detproxy(o);
      written = paths;
      for (const auto& r : rows) {
        std::cout << r.scheme << ": threshold " << r.threshold << ", false positives " << r.false_positives
                  << ", tail TP " << r.tail_true_positives << '\n';
      }
    } else if (*rep) {
      cmd::ReportOptions o;
      if (inputs.empty()) {
        if (!config) throw Error("report: give compare.csv inputs or --config");
        if (seed) config->seeds = {*seed};
        o.config = config;
      }
      for (const auto& i : inputs) o.inputs.emplace_back(i);
      o.out_dir = out ? fs::path(*out) : (config ? config->out_dir : fs::path("report"));
      written = cmd::report(o).first;
    }
    for (const auto& p : written) std::cout << "wrote " << p.string() << '\n';
  } catch (const std::exception& e) {
    std::cerr << "iif: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

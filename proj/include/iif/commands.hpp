#pragma once

// Subcommand implementations behind the `iif` executable. Each takes a fully
// resolved options struct, writes its artifacts under `out_dir` and returns
// the paths it wrote. Errors surface as exceptions.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "iif/csv.hpp"
#include "iif/dataset.hpp"
#include "iif/detproxy.hpp"
#include "iif/error.hpp"
#include "iif/eval.hpp"
#include "iif/margins.hpp"
#include "iif/model.hpp"
#include "iif/serialize.hpp"
#include "iif/training.hpp"

namespace iif::cmd {

namespace fs = std::filesystem;

using Paths = std::vector<fs::path>;

inline std::vector<std::string> split_list(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    auto item = text.substr(start, comma == std::string_view::npos ? text.npos : comma - start);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    if (!item.empty()) out.emplace_back(item);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename Fn>
void write_text(const fs::path& path, Fn&& fn) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  fn(out);
  if (!out) throw Error("write to '" + path.string() + "' failed");
}

inline std::string opt_cell(const std::optional<double>& v) { return v ? csv::format_double(*v) : std::string(); }

// ---- generate -------------------------------------------------------------

struct GenerateOptions {
  DatasetSpec spec;
  fs::path out_dir = "data";
};

inline Paths generate(const GenerateOptions& o) {
  const auto data = generate_synthetic(o.spec);
  fs::create_directories(o.out_dir);
  const Paths paths = {o.out_dir / "train.csv", o.out_dir / "test.csv", o.out_dir / "freq.json"};
  csv::save_samples(data.train, paths[0].string());
  csv::save_samples(data.test, paths[1].string());
  write_json_file(paths[2], to_json(count_frequencies(data.train)));
  return paths;
}

// ---- data loading ---------------------------------------------------------

struct DataBundle {
  SampleSet train;
  SampleSet test;
  ClassFrequencyTable freq;
};

// Reads train.csv, test.csv and freq.json from a directory written by
// `generate`. A missing freq.json is recomputed from train.csv.
inline DataBundle load_data_dir(const fs::path& dir) {
  DataBundle b;
  b.train = csv::load_samples((dir / "train.csv").string());
  b.test = csv::load_samples((dir / "test.csv").string());
  if (fs::exists(dir / "freq.json")) {
    b.freq = frequency_table_from_json(read_json_file(dir / "freq.json"));
  } else {
    b.freq = count_frequencies(b.train);
  }
  const auto c = b.freq.num_classes();
  if (b.train.num_classes > c) throw DimensionError("freq.json classes", b.train.num_classes, c);
  b.train.num_classes = b.test.num_classes = c;
  if (!b.test.empty() && b.test.dim != b.train.dim) throw DimensionError("test.csv features", b.train.dim, b.test.dim);
  return b;
}

// ---- train ----------------------------------------------------------------

struct TrainOptions {
  fs::path data_dir = "data";
  TrainPlan plan;
  fs::path out_dir = "run";
};

struct TrainOutput {
  Paths paths;
  TrainResult result;
  EvalReport report;
};

inline TrainOutput train(const TrainOptions& o) {
  const auto data = load_data_dir(o.data_dir);
  TrainOutput out;
  out.result = run_plan(o.plan, data.train, data.test, data.freq);
  const auto split = GroupSplit::terciles(data.freq);
  out.report = evaluate(out.result.model, data.test.samples, out.result.inference_scheme, split);

  fs::create_directories(o.out_dir);
  out.paths = {o.out_dir / "checkpoint.json", o.out_dir / "train_log.json", o.out_dir / "eval.json",
               o.out_dir / "plan.json"};
  const Checkpoint ck{out.result.model, out.result.final_loss, out.result.inference_scheme, data.freq};
  write_json_file(out.paths[0], to_json(ck));
  write_json_file(out.paths[1], to_json(out.result.log));
  write_json_file(out.paths[2], to_json(out.report));
  write_json_file(out.paths[3], to_json(o.plan));
  return out;
}

// ---- eval -----------------------------------------------------------------

struct EvalOptions {
  fs::path checkpoint = "run/checkpoint.json";
  fs::path test_csv = "data/test.csv";
  std::string scheme = "model";  // "model": the checkpoint's inference scheme
  fs::path out_dir = "run";
};

inline MarginScheme resolve_scheme(const std::string& name, const Checkpoint& ck) {
  if (name == "model") return ck.inference_scheme;
  return make_scheme(parse_scheme_config(name), ck.train_freq);
}

inline std::pair<Paths, EvalReport> eval(const EvalOptions& o) {
  const auto ck = checkpoint_from_json(read_json_file(o.checkpoint));
  auto test = csv::load_samples(o.test_csv.string());
  const auto report =
      evaluate(ck.model, test.samples, resolve_scheme(o.scheme, ck), GroupSplit::terciles(ck.train_freq));
  fs::create_directories(o.out_dir);
  const Paths paths = {o.out_dir / "eval.json"};
  write_json_file(paths[0], to_json(report));
  return {paths, report};
}

// ---- compare --------------------------------------------------------------

struct CompareOptions {
  fs::path checkpoint = "run/checkpoint.json";
  fs::path test_csv = "data/test.csv";
  std::vector<std::string> schemes{"none", "iif:smooth"};
  fs::path out_dir = "run";
};

inline const std::vector<std::string>& comparison_header() {
  static const std::vector<std::string> h = {"scheme",      "overall",    "balanced",     "few",
                                             "medium",      "many",       "delta_overall", "delta_few",
                                             "delta_medium", "delta_many", "weight_norm_std"};
  return h;
}

inline void write_comparison(std::ostream& os, const ComparisonTable& t) {
  csv::write_row(os, comparison_header());
  for (const auto& r : t.rows) {
    csv::write_row(os, {r.name, csv::format_double(r.report.overall_top1), csv::format_double(r.report.balanced_top1()),
                        opt_cell(r.report.group(Group::Few)), opt_cell(r.report.group(Group::Medium)),
                        opt_cell(r.report.group(Group::Many)), csv::format_double(r.delta_overall),
                        opt_cell(r.delta_group[0]), opt_cell(r.delta_group[1]), opt_cell(r.delta_group[2]),
                        csv::format_double(r.report.weight_norms.std)});
  }
}

inline std::vector<NamedScheme> named_schemes(const std::vector<std::string>& names, const Checkpoint& ck) {
  std::vector<NamedScheme> out;
  for (const auto& n : names) out.push_back({n, resolve_scheme(n, ck)});
  return out;
}

inline std::pair<Paths, ComparisonTable> compare(const CompareOptions& o) {
  const auto ck = checkpoint_from_json(read_json_file(o.checkpoint));
  const auto test = csv::load_samples(o.test_csv.string());
  const auto schemes = named_schemes(o.schemes, ck);
  auto table = compare_schemes(ck.model, test.samples, schemes, GroupSplit::terciles(ck.train_freq));
  fs::create_directories(o.out_dir);
  const Paths paths = {o.out_dir / "compare.csv"};
  write_text(paths[0], [&](std::ostream& os) { write_comparison(os, table); });
  return {paths, std::move(table)};
}

// ---- detproxy -------------------------------------------------------------

struct DetproxyOptions {
  std::uint64_t seed = 0;
  std::vector<std::string> schemes{"additive", "multiplicative"};
  double threshold = 0.5;
  bool match_recall = false;
  std::optional<fs::path> proposals_csv;  // read instead of simulating
  fs::path out_dir = "detproxy";
};

// Detection schemes carry a background slot at index 0. Accepted names:
// none, additive, multiplicative (smooth IIF), or any iif:<variant>[:object].
inline MarginScheme detection_scheme(const std::string& name, const ClassFrequencyTable& freq) {
  if (name == "none" || name == "identity") return MarginScheme::identity();
  if (name == "additive") return MarginScheme::additive_posthoc(freq).with_background();
  if (name == "multiplicative") return MarginScheme::multiplicative(compute_weights(freq, Variant::Smooth)).with_background();
  const auto cfg = parse_scheme_config(name);
  if (cfg.name == "iif") return make_scheme(cfg, freq).with_background();
  throw Error("detproxy: unsupported scheme '" + name + "' (expected none|additive|multiplicative|iif:<variant>)");
}

inline std::pair<Paths, std::vector<FpRow>> detproxy(const DetproxyOptions& o) {
  if (!(o.threshold > 0.0 && o.threshold < 1.0)) throw DomainError("threshold must lie in (0, 1)");
  if (o.schemes.empty()) throw Error("detproxy: no schemes given");
  const auto scenario = reference_scenario(o.seed);
  std::vector<Proposal> proposals;
  if (o.proposals_csv) {
    std::ifstream in(*o.proposals_csv);
    if (!in) throw Error("cannot open '" + o.proposals_csv->string() + "'");
    proposals = read_proposals(in);
  } else {
    proposals = simulate_proposals(scenario.spec);
  }
  for (const auto& p : proposals) {
    if (p.logits.size() != scenario.train_freq.num_classes() + 1) {
      throw DimensionError("proposal logits", scenario.train_freq.num_classes() + 1, p.logits.size());
    }
  }
  std::vector<std::pair<std::string, MarginScheme>> schemes;
  for (const auto& n : o.schemes) schemes.emplace_back(n, detection_scheme(n, scenario.train_freq));

  std::vector<NamedOutcome> outcomes;
  if (o.match_recall) {
    auto matched = match_common_recall(proposals, schemes, scenario.tail_class, o.threshold);
    if (!matched) throw Error("detproxy: no threshold reaches a common tail recall for every scheme");
    outcomes = std::move(*matched);
  } else {
    for (const auto& [n, s] : schemes) outcomes.push_back({n, detect(proposals, s, o.threshold)});
  }
  auto rows = fp_report(outcomes, scenario.tail_class);

  fs::create_directories(o.out_dir);
  const Paths paths = {o.out_dir / "proposals.csv", o.out_dir / "fp_report.csv"};
  write_text(paths[0], [&](std::ostream& os) { write_proposals(os, proposals); });
  write_text(paths[1], [&](std::ostream& os) { write_fp_report(os, rows); });
  return {paths, std::move(rows)};
}

// ---- report ---------------------------------------------------------------

struct SeedRow {
  std::uint64_t seed = 0;
  std::string scheme;
  std::map<std::string, double> metrics;
};

struct Summary {
  std::string scheme;
  std::size_t n = 0;
  std::map<std::string, std::pair<double, double>> mean_std;  // sample std, 0 for n = 1
};

inline const std::vector<std::string>& report_metrics() {
  static const std::vector<std::string> m = {"overall", "balanced", "few", "medium", "many", "delta_overall",
                                             "weight_norm_std"};
  return m;
}

inline std::vector<Summary> summarize(const std::vector<SeedRow>& rows) {
  std::vector<Summary> out;
  std::vector<std::string> order;
  std::map<std::string, std::map<std::string, std::vector<double>>> values;
  std::map<std::string, std::size_t> counts;
  for (const auto& r : rows) {
    if (!counts.contains(r.scheme)) order.push_back(r.scheme);
    counts[r.scheme] += 1;
    for (const auto& [k, v] : r.metrics) values[r.scheme][k].push_back(v);
  }
  for (const auto& name : order) {
    Summary s{name, counts[name], {}};
    for (const auto& [k, vs] : values[name]) {
      double mean = 0.0;
      for (double v : vs) mean += v;
      mean /= static_cast<double>(vs.size());
      double var = 0.0;
      for (double v : vs) var += (v - mean) * (v - mean);
      const double sd = vs.size() > 1 ? std::sqrt(var / static_cast<double>(vs.size() - 1)) : 0.0;
      s.mean_std[k] = {mean, sd};
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline void write_summary(std::ostream& os, const std::vector<Summary>& summaries) {
  std::vector<std::string> header = {"scheme", "n"};
  for (const auto& m : report_metrics()) {
    header.push_back(m + "_mean");
    header.push_back(m + "_std");
  }
  csv::write_row(os, header);
  for (const auto& s : summaries) {
    std::vector<std::string> row = {s.scheme, std::to_string(s.n)};
    for (const auto& m : report_metrics()) {
      const auto it = s.mean_std.find(m);
      row.push_back(it == s.mean_std.end() ? "" : csv::format_double(it->second.first));
      row.push_back(it == s.mean_std.end() ? "" : csv::format_double(it->second.second));
    }
    csv::write_row(os, row);
  }
}

// Rows of a compare.csv file. Empty cells are skipped.
inline std::vector<SeedRow> read_comparison(std::istream& is, std::uint64_t seed) {
  std::vector<SeedRow> rows;
  std::vector<std::string> header;
  csv::for_each_line(is, [&](std::string_view line, std::size_t n) {
    if (line.empty()) return;
    auto f = csv::split_row(line, n);
    if (header.empty()) {
      header = std::move(f);
      if (header.front() != "scheme") throw ParseError(n, "expected a compare.csv header starting with 'scheme'");
      return;
    }
    if (f.size() != header.size()) throw DimensionError("row " + std::to_string(n) + " width", header.size(), f.size());
    SeedRow r{seed, f[0], {}};
    for (std::size_t k = 1; k < f.size(); ++k) {
      if (!f[k].empty()) r.metrics[header[k]] = csv::parse_double(f[k], n);
    }
    rows.push_back(std::move(r));
  });
  return rows;
}

inline SeedRow seed_row(std::uint64_t seed, const ComparisonRow& r) {
  SeedRow s{seed, r.name, {}};
  s.metrics["overall"] = r.report.overall_top1;
  s.metrics["balanced"] = r.report.balanced_top1();
  s.metrics["delta_overall"] = r.delta_overall;
  s.metrics["weight_norm_std"] = r.report.weight_norms.std;
  const char* names[] = {"few", "medium", "many"};
  for (std::size_t g = 0; g < kNumGroups; ++g)
    if (r.report.group_top1[g]) s.metrics[names[g]] = *r.report.group_top1[g];
  return s;
}

struct ReportOptions {
  std::optional<ExperimentConfig> config;  // run a seed sweep
  std::vector<fs::path> inputs;            // or aggregate existing compare.csv files
  fs::path out_dir = "report";
};

// Runs (or reads) one comparison per seed and writes runs.csv with every
// per-seed row plus report.csv with mean and std per scheme.
inline std::pair<Paths, std::vector<Summary>> report(const ReportOptions& o) {
  if (!o.config && o.inputs.empty()) throw Error("report: need --config or input compare.csv files");
  std::vector<SeedRow> rows;
  if (o.config) {
    o.config->validate();
    for (auto seed : o.config->seeds) {
      auto spec = o.config->dataset;
      spec.seed = seed;
      auto plan = o.config->plan;
      plan.seed = seed;
      const auto data = generate_synthetic(spec);
      const auto freq = count_frequencies(data.train);
      const auto result = run_plan(plan, data.train, data.test, freq);
      std::vector<NamedScheme> schemes;
      for (const auto& n : o.config->schemes) {
        schemes.push_back({n, n == "model" ? result.inference_scheme : make_scheme(parse_scheme_config(n), freq)});
      }
      const auto table = compare_schemes(result.model, data.test.samples, schemes, GroupSplit::terciles(freq));
      for (const auto& r : table.rows) rows.push_back(seed_row(seed, r));
    }
  } else {
    for (std::size_t i = 0; i < o.inputs.size(); ++i) {
      std::ifstream in(o.inputs[i]);
      if (!in) throw Error("cannot open '" + o.inputs[i].string() + "'");
      auto r = read_comparison(in, i);
      rows.insert(rows.end(), r.begin(), r.end());
    }
  }
  auto summaries = summarize(rows);

  fs::create_directories(o.out_dir);
  const Paths paths = {o.out_dir / "runs.csv", o.out_dir / "report.csv"};
  write_text(paths[0], [&](std::ostream& os) {
    std::vector<std::string> header = {"seed", "scheme"};
    for (const auto& m : report_metrics()) header.push_back(m);
    csv::write_row(os, header);
    for (const auto& r : rows) {
      std::vector<std::string> row = {std::to_string(r.seed), r.scheme};
      for (const auto& m : report_metrics()) {
        const auto it = r.metrics.find(m);
        row.push_back(it == r.metrics.end() ? "" : csv::format_double(it->second));
      }
      csv::write_row(os, row);
    }
  });
  write_text(paths[1], [&](std::ostream& os) { write_summary(os, summaries); });
  return {paths, std::move(summaries)};
}

}  // namespace iif::cmd

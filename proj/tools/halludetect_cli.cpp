// Command-line driver for the collect -> score -> eval -> report stages.

#include <cstdio>
#include <iostream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "halludetect/error.hpp"
#include "halludetect/pipeline.hpp"
#include "halludetect/text_util.hpp"

namespace hd = halludetect;

namespace {

struct Args {
  std::string manifest;
  std::string cache_dir;
  std::string out_dir;
  std::vector<std::string> metrics;
  std::optional<std::size_t> subset_size;
  std::optional<std::uint64_t> subset_seed;
  std::string normalization = "minmax";
  std::optional<double> threshold;
  std::string scores;
  std::string report_json;
  std::string report_out;
  bool verbose = false;
};

hd::StageOptions ToOptions(const Args& a) {
  hd::StageOptions o;
  if (!a.cache_dir.empty()) o.cache_dir = a.cache_dir;
  if (!a.out_dir.empty()) o.out_dir = a.out_dir;
  if (!a.metrics.empty()) {
    std::vector<hd::MetricName> m;
    for (const auto& s : a.metrics) m.push_back(hd::ParseMetricSlug(s));
    o.metrics = std::move(m);
  }
  o.subset_size = a.subset_size;
  o.subset_seed = a.subset_seed;
  o.threshold_normalization = hd::ParseThresholdNormalization(a.normalization);
  o.threshold = a.threshold;
  if (!a.scores.empty()) o.scores_path = a.scores;
  return o;
}

void AddStageFlags(CLI::App* cmd, Args& a) {
  cmd->add_option("--manifest", a.manifest, "Experiment manifest (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--cache-dir", a.cache_dir, "Override the completion/NLI cache directory");
  cmd->add_option("--out", a.out_dir, "Override the output directory");
  cmd->add_option("--metrics", a.metrics, "Metric slugs, e.g. f_certain entropy")->delimiter(',');
  cmd->add_option("--subset-size", a.subset_size, "Use a seeded random subset of this many items");
  cmd->add_option("--subset-seed", a.subset_seed, "Seed for --subset-size");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Black-box hallucination detection over QA corpora"};
  app.require_subcommand(1);
  Args a;
  app.add_flag("-v,--verbose", a.verbose, "Debug logging");

  auto* collect = app.add_subcommand("collect", "Fetch and cache every generation the metrics need");
  auto* score = app.add_subcommand("score", "Compute detection scores from the cache");
  auto* eval = app.add_subcommand("eval", "AUROC/AUPRC, PR curves and optional breakdown");
  auto* report = app.add_subcommand("report", "Render report.json as markdown");
  for (auto* cmd : {collect, score, eval}) AddStageFlags(cmd, a);
  eval->add_option("--scores", a.scores, "Scores file (default <out>/scores.jsonl)");
  eval->add_option("--threshold", a.threshold, "Write per-item decisions at this normalized threshold")
      ->check(CLI::Range(0.0, 1.0));
  eval->add_option("--threshold-normalization", a.normalization, "How scores map to [0,1]")
      ->check(CLI::IsMember({"minmax", "sigmoid"}));
  report->add_option("report_json", a.report_json, "Path to report.json")->required()->check(CLI::ExistingFile);
  report->add_option("-o,--output", a.report_out, "Write markdown here instead of stdout");

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(a.verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    if (report->parsed()) {
      const std::string md = hd::CmdReport(a.report_json);
      if (a.report_out.empty()) {
        std::cout << md;
      } else {
        hd::WriteFileAtomic(a.report_out, md);
      }
      return 0;
    }
    const hd::StageOptions options = ToOptions(a);
    const hd::ExperimentManifest manifest = hd::ApplyOverrides(hd::LoadManifest(a.manifest), options);
    if (collect->parsed()) {
      const auto s = hd::CmdCollect(manifest);
      std::printf("items=%zu reference=%zu expression=%zu sample_sets=%zu selfcheck_sets=%zu\n", s.items,
                  s.reference_generations, s.expression_generations, s.sample_sets, s.selfcheck_sets);
    } else if (score->parsed()) {
      std::printf("%s\n", hd::CmdScore(manifest).string().c_str());
    } else {
      const auto out = hd::CmdEval(manifest, options);
      for (const auto& r : out.reports) {
        std::printf("%-20s AUROC=%.4f AUPRC=%.4f n_pos=%zu n_neg=%zu\n", r.metric_name.c_str(), r.auroc, r.auprc,
                    r.n_pos, r.n_neg);
      }
      std::printf("%s\n", out.report_json.string().c_str());
    }
  } catch (const hd::Error& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("unexpected failure: {}", e.what());
    return 1;
  }
  return 0;
}

#pragma once

// Resumable stages: collect -> score -> eval -> report. Stages talk only
// through files (completion/NLI caches and JSONL/JSON artifacts).

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "halludetect/corpus.hpp"
#include "halludetect/detectors.hpp"
#include "halludetect/evaluation.hpp"
#include "halludetect/llm_gateway.hpp"
#include "halludetect/nli_gateway.hpp"

namespace halludetect {

struct StageOptions {
  std::optional<std::filesystem::path> cache_dir;
  std::optional<std::filesystem::path> out_dir;
  std::optional<std::vector<MetricName>> metrics;
  std::optional<std::size_t> subset_size;
  std::optional<std::uint64_t> subset_seed;
  ThresholdNormalization threshold_normalization = ThresholdNormalization::kMinMax;
  // When set, eval also writes binary decisions at this normalized threshold.
  std::optional<double> threshold;
  std::optional<std::filesystem::path> scores_path;
};

// Backends to use instead of the ones the manifest describes (tests inject
// instrumented mocks here).
struct Runtime {
  std::shared_ptr<CompletionBackend> backend;
  std::shared_ptr<NliScorer> nli_scorer;
};

ExperimentManifest ApplyOverrides(ExperimentManifest manifest, const StageOptions& options);

struct CollectSummary {
  std::size_t items = 0;
  std::size_t reference_generations = 0;
  std::size_t expression_generations = 0;
  std::size_t sample_sets = 0;
  std::size_t selfcheck_sets = 0;
};

// Fetches every generation the configured metrics need and stores it in the
// cache. Items already cached cost no backend calls, so a killed run resumes
// where it stopped. Writes <out>/collection.json.
CollectSummary CmdCollect(const ExperimentManifest& manifest, const Runtime& runtime = {});

// One DetectionScore per (item, metric), sorted by item id then metric, written
// to <out>/scores.jsonl. Reads completions from the cache only.
std::filesystem::path CmdScore(const ExperimentManifest& manifest, const Runtime& runtime = {});

std::vector<DetectionScore> ReadScores(const std::filesystem::path& path);

struct EvalOutputs {
  std::filesystem::path report_json;
  std::vector<EvalReport> reports;
};

// AUROC/AUPRC per metric plus PR curves; breakdown tables when enabled.
EvalOutputs CmdEval(const ExperimentManifest& manifest, const StageOptions& options,
                    const Runtime& runtime = {});

// Markdown rendering of a report.json.
std::string CmdReport(const std::filesystem::path& report_json);

}  // namespace halludetect

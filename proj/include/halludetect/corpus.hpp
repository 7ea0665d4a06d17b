#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "halludetect/core_model.hpp"
#include "halludetect/llm_gateway.hpp"
#include "halludetect/nli_gateway.hpp"
#include "halludetect/prompting.hpp"

namespace halludetect {

// HotpotQA dev JSON array with `_id`, `question`, `answer`.
std::vector<QaItem> LoadHotpotQa(const std::filesystem::path& path);

struct NqLoadResult {
  std::vector<QaItem> items;
  std::size_t skipped_blank_lines = 0;
};

// NQ-open JSONL with `question` and `answer` (list). Records without an `id`
// get "nq-<record index>".
NqLoadResult LoadNqOpen(const std::filesystem::path& path);

// Canonical QaItem JSONL.
std::vector<QaItem> LoadQaJsonl(const std::filesystem::path& path);
std::string QaItemsToJsonl(std::span<const QaItem> items);

// One id per line; blank lines ignored.
std::vector<std::string> ReadIdList(const std::filesystem::path& path);

struct ExclusionResult {
  std::vector<QaItem> items;
  std::vector<std::string> unknown_ids;  // reported as warnings
  std::size_t removed = 0;
};

ExclusionResult ApplyExclusions(std::span<const QaItem> items, std::span<const std::string> ids);

struct LabelMergeResult {
  std::vector<QaItem> items;
  std::vector<std::string> unmatched_ids;
  std::size_t attached = 0;
};

// Labels JSONL: {"id", "factuality": "Factual"|"NonFactual"|bool,
// "consistency": {expression_id: bool}}. Conflicting duplicates are a
// kParseError; unknown ids are reported and skipped.
LabelMergeResult MergeLabels(std::span<const QaItem> items, const std::filesystem::path& labels_path);
LabelMergeResult MergeLabelsFromString(std::span<const QaItem> items, std::string_view jsonl);

// Seeded subset of `size` items, returned in original order. Uses its own
// Fisher-Yates over mt19937_64 so the choice is identical on every platform.
std::vector<QaItem> SampleSubset(std::span<const QaItem> items, std::size_t size, std::uint64_t seed);

enum class CorpusFormat { kQaJsonl, kHotpotQa, kNqOpen };

struct PhaseDecoding {
  DecodingParams reference{0.0, 64, 1, std::nullopt};
  DecodingParams expression{0.0, 64, 1, std::nullopt};
  DecodingParams sampling{1.0, 64, 10, std::nullopt};
  DecodingParams selfcheck{0.5, 64, 8, std::nullopt};
};

struct BreakdownOptions {
  bool enabled = false;
  // Draw sampling.n_samples generations per expression prompt for the entropy column.
  bool expression_samples = true;
};

struct ExperimentManifest {
  std::filesystem::path manifest_dir;
  std::filesystem::path corpus_path;
  CorpusFormat corpus_format = CorpusFormat::kQaJsonl;
  std::optional<std::filesystem::path> exclusions_path;
  std::optional<std::filesystem::path> labels_path;
  std::optional<std::filesystem::path> abstention_patterns_path;

  std::vector<Expression> expressions;  // resolved, in manifest order
  std::string certain_expression = "mustbe";
  std::string uncertain_expression = "unsure";
  std::vector<std::string> ensemble_expressions = {"unsure", "mustbe"};
  std::vector<MetricName> metrics;

  PhaseDecoding decoding;
  BackendConfig backend;
  NliConfig nli;
  PromptTemplates prompt;
  BreakdownOptions breakdown;

  std::filesystem::path output_dir;
  std::filesystem::path cache_dir;
  std::optional<std::size_t> subset_size;
  std::uint64_t subset_seed = 0;

  const Expression& ExpressionById(std::string_view id) const;
};

// Relative paths resolve against the manifest's directory. Throws
// kInvalidConfig for unknown slugs and kIo for referenced files that are missing.
ExperimentManifest LoadManifest(const std::filesystem::path& path);
ExperimentManifest ParseManifest(const nlohmann::json& j, const std::filesystem::path& manifest_dir);

struct LoadedCorpus {
  std::vector<QaItem> items;
  std::vector<std::string> unknown_exclusions;
  std::vector<std::string> unmatched_labels;
};

// Load, exclude, subset, then merge labels, as configured by the manifest.
LoadedCorpus LoadCorpus(const ExperimentManifest& manifest);

}  // namespace halludetect

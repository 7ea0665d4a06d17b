#pragma once

// Shared domain records. All of them are plain values with JSON (de)serializers
// whose field names match the canonical JSONL record layout.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace halludetect {

enum class Factuality { kFactual, kNonFactual };
enum class Consistency { kConsistent, kNonConsistent };
enum class Source { kHotpotQA, kNqOpen, kSynthetic };
enum class ExpressionKind { kCertainty, kUncertainty };
enum class FinishReason { kStop, kLength, kOther };
enum class Orientation { kHigherMeansHallucination, kLowerMeansHallucination };

enum class MetricName {
  kFCertain,
  kFUncertain,
  kFEnsemble,
  kLogP,
  kEntropy,
  kSemanticEntropy,
  kLexicalSimilarity,
  kSelfCheckNli,
};

struct QaItem {
  std::string id;
  std::string question;
  std::vector<std::string> gold_answers;
  std::optional<Factuality> factuality_label;
  // Keyed by expression id.
  std::optional<std::map<std::string, Consistency>> consistency_label;
  Source source = Source::kSynthetic;

  bool operator==(const QaItem&) const = default;
};

struct Expression {
  std::string id;
  std::string text;
  ExpressionKind kind = ExpressionKind::kUncertainty;

  bool operator==(const Expression&) const = default;
};

struct DecodingParams {
  double temperature = 0.0;
  int max_tokens = 64;
  int n_samples = 1;
  std::optional<std::uint64_t> seed;

  bool operator==(const DecodingParams&) const = default;

  // Throws kInvalidArgument on negative temperature or nonpositive counts.
  void Validate() const;
};

struct Generation {
  std::string text;
  // Natural-log probability per generated token. Absent when the backend did
  // not return them (allowed for stochastic samples only).
  std::optional<std::vector<double>> token_logprobs;
  FinishReason finish_reason = FinishReason::kStop;
  std::string prompt_fingerprint;

  bool operator==(const Generation&) const = default;

  // Returns the logprobs or throws kMissingLogprobs.
  const std::vector<double>& RequireLogprobs() const;
};

struct NliVerdict {
  double logit_entailment = 0.0;
  double logit_neutral = 0.0;
  double logit_contradiction = 0.0;

  bool operator==(const NliVerdict&) const = default;

  // (entailment, neutral, contradiction) probabilities, numerically stable.
  std::array<double, 3> Softmax() const;

  enum class Label { kEntailment, kNeutral, kContradiction };
  // Ties resolve in the order entailment, neutral, contradiction.
  Label Argmax() const;

  bool AllFinite() const;
};

struct DetectionScore {
  std::string item_id;
  MetricName metric_name = MetricName::kFCertain;
  double value = 0.0;
  Orientation orientation = Orientation::kHigherMeansHallucination;

  bool operator==(const DetectionScore&) const = default;
};

// The four prompt prefixes, in table order: two uncertainty, two certainty.
const std::vector<Expression>& BuiltinExpressions();

// Looks up a builtin expression by slug; throws kInvalidConfig when unknown.
const Expression& BuiltinExpression(std::string_view id);

Orientation OrientationOf(MetricName metric);
std::string_view MetricSlug(MetricName metric);
MetricName ParseMetricSlug(std::string_view slug);
const std::vector<MetricName>& AllMetrics();

std::string_view FactualityName(Factuality f);
Factuality ParseFactuality(std::string_view s);
std::string_view ConsistencyName(Consistency c);
Consistency ParseConsistency(std::string_view s);
std::string_view SourceName(Source s);
Source ParseSource(std::string_view s);
std::string_view ExpressionKindName(ExpressionKind k);
ExpressionKind ParseExpressionKind(std::string_view s);
std::string_view FinishReasonName(FinishReason r);
FinishReason ParseFinishReason(std::string_view s);
std::string_view OrientationName(Orientation o);

void to_json(nlohmann::json& j, const QaItem& item);
void from_json(const nlohmann::json& j, QaItem& item);
void to_json(nlohmann::json& j, const Expression& e);
void from_json(const nlohmann::json& j, Expression& e);
void to_json(nlohmann::json& j, const DecodingParams& p);
void from_json(const nlohmann::json& j, DecodingParams& p);
void to_json(nlohmann::json& j, const Generation& g);
void from_json(const nlohmann::json& j, Generation& g);
void to_json(nlohmann::json& j, const NliVerdict& v);
void from_json(const nlohmann::json& j, NliVerdict& v);
void to_json(nlohmann::json& j, const DetectionScore& s);
void from_json(const nlohmann::json& j, DetectionScore& s);

// One compact JSON object per line.
std::string ToJsonLine(const nlohmann::json& j);

}  // namespace halludetect

#include "halludetect/core_model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "halludetect/error.hpp"

namespace halludetect {

using nlohmann::json;

std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kEmptyQuestion: return "EmptyQuestion";
    case ErrorCode::kEmptyField: return "EmptyField";
    case ErrorCode::kBackendUnreachable: return "BackendUnreachable";
    case ErrorCode::kTimeout: return "Timeout";
    case ErrorCode::kMissingLogprobs: return "MissingLogprobs";
    case ErrorCode::kInvalidSampling: return "InvalidSampling";
    case ErrorCode::kScorerUnreachable: return "ScorerUnreachable";
    case ErrorCode::kMalformedScorerReply: return "MalformedScorerReply";
    case ErrorCode::kNoTokens: return "NoTokens";
    case ErrorCode::kNoSamples: return "NoSamples";
    case ErrorCode::kEmptyInput: return "EmptyInput";
    case ErrorCode::kTooFewScores: return "TooFewScores";
    case ErrorCode::kTooFewSamples: return "TooFewSamples";
    case ErrorCode::kInvalidPartition: return "InvalidPartition";
    case ErrorCode::kDegenerateLabels: return "DegenerateLabels";
    case ErrorCode::kMissingLabels: return "MissingLabels";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kMissingField: return "MissingField";
    case ErrorCode::kUnknownId: return "UnknownId";
    case ErrorCode::kMissingGeneration: return "MissingGeneration";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kIo: return "Io";
  }
  return "Unknown";
}

void DecodingParams::Validate() const {
  if (!(temperature >= 0.0) || !std::isfinite(temperature)) {
    throw Error(ErrorCode::kInvalidArgument, "temperature must be a nonnegative finite number");
  }
  if (max_tokens <= 0) throw Error(ErrorCode::kInvalidArgument, "max_tokens must be positive");
  if (n_samples <= 0) throw Error(ErrorCode::kInvalidArgument, "n_samples must be positive");
}

const std::vector<double>& Generation::RequireLogprobs() const {
  if (!token_logprobs) {
    throw Error(ErrorCode::kMissingLogprobs, "generation has no token logprobs");
  }
  return *token_logprobs;
}

std::array<double, 3> NliVerdict::Softmax() const {
  const double m = std::max({logit_entailment, logit_neutral, logit_contradiction});
  std::array<double, 3> p = {std::exp(logit_entailment - m), std::exp(logit_neutral - m),
                             std::exp(logit_contradiction - m)};
  const double z = p[0] + p[1] + p[2];
  for (double& x : p) x /= z;
  return p;
}

NliVerdict::Label NliVerdict::Argmax() const {
  if (logit_entailment >= logit_neutral && logit_entailment >= logit_contradiction) {
    return Label::kEntailment;
  }
  if (logit_neutral >= logit_contradiction) return Label::kNeutral;
  return Label::kContradiction;
}

bool NliVerdict::AllFinite() const {
  return std::isfinite(logit_entailment) && std::isfinite(logit_neutral) &&
         std::isfinite(logit_contradiction);
}

const std::vector<Expression>& BuiltinExpressions() {
  static const std::vector<Expression> kTable = {
      {"unsure", "I am not sure but it could be", ExpressionKind::kUncertainty},
      {"doublecheck", "I would need to double check but maybe it is", ExpressionKind::kUncertainty},
      {"mustbe", "It must be", ExpressionKind::kCertainty},
      {"undoubtedly", "Undoubtedly it is", ExpressionKind::kCertainty},
  };
  return kTable;
}

const Expression& BuiltinExpression(std::string_view id) {
  for (const auto& e : BuiltinExpressions()) {
    if (e.id == id) return e;
  }
  throw Error(ErrorCode::kInvalidConfig, "unknown expression id '" + std::string(id) + "'");
}

Orientation OrientationOf(MetricName metric) {
  switch (metric) {
    case MetricName::kLogP:
    case MetricName::kLexicalSimilarity:
      return Orientation::kLowerMeansHallucination;
    default:
      return Orientation::kHigherMeansHallucination;
  }
}

namespace {

struct MetricEntry {
  MetricName metric;
  std::string_view slug;
};

constexpr MetricEntry kMetricTable[] = {
    {MetricName::kFCertain, "f_certain"},
    {MetricName::kFUncertain, "f_uncertain"},
    {MetricName::kFEnsemble, "f_ensemble"},
    {MetricName::kLogP, "logp"},
    {MetricName::kEntropy, "entropy"},
    {MetricName::kSemanticEntropy, "semantic_entropy"},
    {MetricName::kLexicalSimilarity, "lexical_similarity"},
    {MetricName::kSelfCheckNli, "selfcheck_nli"},
};

template <typename T>
T ParseEnum(std::string_view s, std::initializer_list<std::pair<std::string_view, T>> table,
            std::string_view what) {
  for (const auto& [name, value] : table) {
    if (name == s) return value;
  }
  throw Error(ErrorCode::kParseError, "invalid " + std::string(what) + " '" + std::string(s) + "'");
}

}  // namespace

std::string_view MetricSlug(MetricName metric) {
  for (const auto& e : kMetricTable) {
    if (e.metric == metric) return e.slug;
  }
  return "unknown";
}

MetricName ParseMetricSlug(std::string_view slug) {
  for (const auto& e : kMetricTable) {
    if (e.slug == slug) return e.metric;
  }
  throw Error(ErrorCode::kInvalidConfig, "unknown metric '" + std::string(slug) + "'");
}

const std::vector<MetricName>& AllMetrics() {
  static const std::vector<MetricName> kAll = [] {
    std::vector<MetricName> v;
    for (const auto& e : kMetricTable) v.push_back(e.metric);
    return v;
  }();
  return kAll;
}

std::string_view FactualityName(Factuality f) {
  return f == Factuality::kFactual ? "Factual" : "NonFactual";
}
Factuality ParseFactuality(std::string_view s) {
  return ParseEnum<Factuality>(
      s, {{"Factual", Factuality::kFactual}, {"NonFactual", Factuality::kNonFactual}},
      "factuality");
}
std::string_view ConsistencyName(Consistency c) {
  return c == Consistency::kConsistent ? "Consistent" : "NonConsistent";
}
Consistency ParseConsistency(std::string_view s) {
  return ParseEnum<Consistency>(
      s, {{"Consistent", Consistency::kConsistent}, {"NonConsistent", Consistency::kNonConsistent}},
      "consistency");
}
std::string_view SourceName(Source s) {
  switch (s) {
    case Source::kHotpotQA: return "HotpotQA";
    case Source::kNqOpen: return "NqOpen";
    case Source::kSynthetic: return "Synthetic";
  }
  return "Synthetic";
}
Source ParseSource(std::string_view s) {
  return ParseEnum<Source>(s,
                           {{"HotpotQA", Source::kHotpotQA},
                            {"NqOpen", Source::kNqOpen},
                            {"Synthetic", Source::kSynthetic}},
                           "source");
}
std::string_view ExpressionKindName(ExpressionKind k) {
  return k == ExpressionKind::kCertainty ? "Certainty" : "Uncertainty";
}
ExpressionKind ParseExpressionKind(std::string_view s) {
  return ParseEnum<ExpressionKind>(
      s, {{"Certainty", ExpressionKind::kCertainty}, {"Uncertainty", ExpressionKind::kUncertainty}},
      "expression kind");
}
std::string_view FinishReasonName(FinishReason r) {
  switch (r) {
    case FinishReason::kStop: return "stop";
    case FinishReason::kLength: return "length";
    case FinishReason::kOther: return "other";
  }
  return "other";
}
FinishReason ParseFinishReason(std::string_view s) {
  if (s == "stop") return FinishReason::kStop;
  if (s == "length") return FinishReason::kLength;
  return FinishReason::kOther;
}
std::string_view OrientationName(Orientation o) {
  return o == Orientation::kHigherMeansHallucination ? "HigherMeansHallucination"
                                                     : "LowerMeansHallucination";
}

void to_json(json& j, const QaItem& item) {
  j = json{{"id", item.id},
           {"question", item.question},
           {"gold_answers", item.gold_answers},
           {"source", SourceName(item.source)}};
  j["factuality_label"] =
      item.factuality_label ? json(FactualityName(*item.factuality_label)) : json(nullptr);
  if (item.consistency_label) {
    json c = json::object();
    for (const auto& [exp, label] : *item.consistency_label) c[exp] = ConsistencyName(label);
    j["consistency_label"] = std::move(c);
  } else {
    j["consistency_label"] = nullptr;
  }
}

void from_json(const json& j, QaItem& item) {
  item = QaItem{};
  j.at("id").get_to(item.id);
  j.at("question").get_to(item.question);
  if (j.contains("gold_answers")) j.at("gold_answers").get_to(item.gold_answers);
  if (j.contains("source")) item.source = ParseSource(j.at("source").get<std::string>());
  if (j.contains("factuality_label") && !j.at("factuality_label").is_null()) {
    item.factuality_label = ParseFactuality(j.at("factuality_label").get<std::string>());
  }
  if (j.contains("consistency_label") && !j.at("consistency_label").is_null()) {
    std::map<std::string, Consistency> labels;
    for (const auto& [exp, v] : j.at("consistency_label").items()) {
      labels[exp] = ParseConsistency(v.get<std::string>());
    }
    item.consistency_label = std::move(labels);
  }
}

void to_json(json& j, const Expression& e) {
  j = json{{"id", e.id}, {"text", e.text}, {"kind", ExpressionKindName(e.kind)}};
}

void from_json(const json& j, Expression& e) {
  j.at("id").get_to(e.id);
  j.at("text").get_to(e.text);
  e.kind = ParseExpressionKind(j.at("kind").get<std::string>());
  if (e.id.empty() || e.text.empty()) {
    throw Error(ErrorCode::kInvalidConfig, "expression id and text must be nonempty");
  }
}

void to_json(json& j, const DecodingParams& p) {
  j = json{{"temperature", p.temperature}, {"max_tokens", p.max_tokens}, {"n_samples", p.n_samples}};
  j["seed"] = p.seed ? json(*p.seed) : json(nullptr);
}

void from_json(const json& j, DecodingParams& p) {
  p = DecodingParams{};
  if (j.contains("temperature")) j.at("temperature").get_to(p.temperature);
  if (j.contains("max_tokens")) j.at("max_tokens").get_to(p.max_tokens);
  if (j.contains("n_samples")) j.at("n_samples").get_to(p.n_samples);
  if (j.contains("seed") && !j.at("seed").is_null()) p.seed = j.at("seed").get<std::uint64_t>();
  p.Validate();
}

void to_json(json& j, const Generation& g) {
  j = json{{"text", g.text},
           {"finish_reason", FinishReasonName(g.finish_reason)},
           {"prompt_fingerprint", g.prompt_fingerprint}};
  j["token_logprobs"] = g.token_logprobs ? json(*g.token_logprobs) : json(nullptr);
}

void from_json(const json& j, Generation& g) {
  g = Generation{};
  j.at("text").get_to(g.text);
  if (j.contains("token_logprobs") && !j.at("token_logprobs").is_null()) {
    g.token_logprobs = j.at("token_logprobs").get<std::vector<double>>();
  }
  if (j.contains("finish_reason")) {
    g.finish_reason = ParseFinishReason(j.at("finish_reason").get<std::string>());
  }
  if (j.contains("prompt_fingerprint")) j.at("prompt_fingerprint").get_to(g.prompt_fingerprint);
}

void to_json(json& j, const NliVerdict& v) {
  j = json{{"entailment", v.logit_entailment},
           {"neutral", v.logit_neutral},
           {"contradiction", v.logit_contradiction}};
}

void from_json(const json& j, NliVerdict& v) {
  j.at("entailment").get_to(v.logit_entailment);
  j.at("neutral").get_to(v.logit_neutral);
  j.at("contradiction").get_to(v.logit_contradiction);
}

void to_json(json& j, const DetectionScore& s) {
  j = json{{"item_id", s.item_id},
           {"metric_name", MetricSlug(s.metric_name)},
           {"value", s.value},
           {"orientation", OrientationName(s.orientation)}};
}

void from_json(const json& j, DetectionScore& s) {
  j.at("item_id").get_to(s.item_id);
  s.metric_name = ParseMetricSlug(j.at("metric_name").get<std::string>());
  j.at("value").get_to(s.value);
  s.orientation = OrientationOf(s.metric_name);
}

std::string ToJsonLine(const json& j) { return j.dump(); }

}  // namespace halludetect

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "halludetect/core_model.hpp"
#include "halludetect/nli_gateway.hpp"

namespace halludetect {

// Scores are oriented so that higher means hallucinated; positive = NonFactual.
struct LabeledScore {
  double score = 0.0;
  bool positive = false;
};

// Value with LowerMeansHallucination metrics negated.
double OrientedValue(const DetectionScore& score);

// Probability a random positive outranks a random negative, ties counted 1/2.
// Throws kDegenerateLabels unless both classes are present.
double Auroc(std::span<const LabeledScore> scores);

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;
};

struct AuprcResult {
  double auprc = 0.0;
  // One point per distinct score threshold, from the highest score down.
  std::vector<PrPoint> points;
};

// Average precision: sum of precision * delta-recall over descending distinct
// thresholds (step interpolation).
AuprcResult Auprc(std::span<const LabeledScore> scores);

struct BreakdownRow {
  std::string expression_id;
  std::string group;  // "F", "NF", "Con", "NonCon", "All"
  std::size_t n = 0;
  std::optional<double> accuracy_pct;
  std::optional<double> consistency_pct;
  std::optional<double> mean_logprob_ratio;
  std::optional<double> mean_entropy;
};

enum class ConsistencySource { kLabel, kNliProxy };

// Everything the breakdown tables need about one (item, expression) pair.
struct Observation {
  std::string item_id;
  std::string expression_id;
  Factuality factuality = Factuality::kFactual;
  Consistency consistency = Consistency::kConsistent;
  ConsistencySource consistency_source = ConsistencySource::kLabel;
  // Whether the perturbed answer matches a gold answer after normalization.
  std::optional<bool> perturbed_accurate;
  std::optional<double> logprob_ratio;
  std::optional<double> entropy;  // of samples under the expression prompt
};

// Per expression: rows for F, NF (accuracy, consistency, ratio, entropy) and
// Con, NonCon (ratio, entropy), then All. Empty groups are omitted with a warning.
std::vector<BreakdownRow> GroupBreakdown(std::span<const Observation> observations);

// Builds the observation for one item/expression; throws kMissingLabels when
// the item has no factuality label.
Observation MakeObservation(const QaItem& item, const std::string& expression_id,
                            Consistency consistency, ConsistencySource source,
                            std::optional<bool> perturbed_accurate,
                            std::optional<double> logprob_ratio, std::optional<double> entropy);

// True when some normalized gold answer occurs in the normalized response on
// token boundaries.
bool MatchesGold(std::string_view response, std::span<const std::string> gold_answers);

enum class TriageDecision { kAutoKeep, kNeedsHuman };

struct TriageResult {
  TriageDecision decision = TriageDecision::kNeedsHuman;
  std::optional<Factuality> suggestion;
  NliVerdict verdict;
};

TriageResult TriageFromVerdict(const NliVerdict& verdict);
TriageResult TriageForAnnotation(std::string_view question, std::string_view reference,
                                 std::string_view gold, NliGateway& nli,
                                 std::string_view joiner = " ");

Consistency ConsistencyFromVerdict(const NliVerdict& verdict);
Consistency ConsistencyProxy(std::string_view question, std::string_view reference,
                             std::string_view perturbed, NliGateway& nli,
                             std::string_view joiner = " ");

// Manual label when present, otherwise the NLI proxy.
std::pair<Consistency, ConsistencySource> ResolveConsistency(
    const QaItem& item, const std::string& expression_id, std::string_view reference,
    std::string_view perturbed, NliGateway& nli, std::string_view joiner = " ");

struct EvalReport {
  std::string metric_name;
  double auroc = 0.0;
  double auprc = 0.0;
  std::vector<PrPoint> pr_points;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
  std::vector<BreakdownRow> breakdowns;
};

EvalReport EvaluateMetric(std::string metric_name, std::span<const LabeledScore> scores);

void to_json(nlohmann::json& j, const PrPoint& p);
void to_json(nlohmann::json& j, const BreakdownRow& r);
void from_json(const nlohmann::json& j, BreakdownRow& r);
void to_json(nlohmann::json& j, const EvalReport& r);
void from_json(const nlohmann::json& j, EvalReport& r);

// "recall,precision" header, one row per point.
std::string PrCurveCsv(std::span<const PrPoint> points);

// Minimal SVG with one polyline per report.
std::string PrCurveSvg(std::span<const EvalReport> reports);

}  // namespace halludetect

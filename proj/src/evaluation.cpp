#include "halludetect/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "halludetect/confidence_metrics.hpp"
#include "halludetect/error.hpp"
#include "halludetect/text_util.hpp"

namespace halludetect {

using nlohmann::json;

double OrientedValue(const DetectionScore& score) {
  return score.orientation == Orientation::kLowerMeansHallucination ? -score.value : score.value;
}

namespace {

std::pair<std::size_t, std::size_t> CountClasses(std::span<const LabeledScore> scores) {
  std::size_t pos = 0;
  for (const auto& s : scores) {
    if (std::isnan(s.score)) throw Error(ErrorCode::kInvalidArgument, "NaN score");
    pos += s.positive ? 1 : 0;
  }
  const std::size_t neg = scores.size() - pos;
  if (pos == 0 || neg == 0) {
    throw Error(ErrorCode::kDegenerateLabels,
                fmt::format("need both classes, got {} positive / {} negative", pos, neg));
  }
  return {pos, neg};
}

}  // namespace

double Auroc(std::span<const LabeledScore> scores) {
  const auto [n_pos, n_neg] = CountClasses(scores);
  std::vector<LabeledScore> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const LabeledScore& a, const LabeledScore& b) { return a.score < b.score; });
  // Sum of midranks (1-based) of the positives.
  double rank_sum = 0.0;
  std::size_t i = 0;
  while (i < sorted.size()) {
    std::size_t j = i;
    std::size_t pos_in_tie = 0;
    while (j < sorted.size() && sorted[j].score == sorted[i].score) {
      pos_in_tie += sorted[j].positive ? 1 : 0;
      ++j;
    }
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    rank_sum += midrank * static_cast<double>(pos_in_tie);
    i = j;
  }
  const double np = static_cast<double>(n_pos);
  const double u = rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

AuprcResult Auprc(std::span<const LabeledScore> scores) {
  const auto [n_pos, n_neg] = CountClasses(scores);
  std::vector<LabeledScore> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const LabeledScore& a, const LabeledScore& b) { return a.score > b.score; });
  AuprcResult result;
  std::size_t tp = 0, fp = 0;
  double prev_recall = 0.0;
  std::size_t i = 0;
  while (i < sorted.size()) {
    const double threshold = sorted[i].score;
    while (i < sorted.size() && sorted[i].score == threshold) {
      (sorted[i].positive ? tp : fp) += 1;
      ++i;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(n_pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    result.auprc += (recall - prev_recall) * precision;
    prev_recall = recall;
    result.points.push_back({recall, precision});
  }
  return result;
}

bool MatchesGold(std::string_view response, std::span<const std::string> gold_answers) {
  const std::string padded = " " + NormalizeAnswer(response) + " ";
  for (const auto& gold : gold_answers) {
    const std::string g = NormalizeAnswer(gold);
    if (g.empty()) continue;
    if (padded.find(" " + g + " ") != std::string::npos) return true;
  }
  return false;
}

Observation MakeObservation(const QaItem& item, const std::string& expression_id,
                            Consistency consistency, ConsistencySource source,
                            std::optional<bool> perturbed_accurate,
                            std::optional<double> logprob_ratio, std::optional<double> entropy) {
  if (!item.factuality_label) {
    throw Error(ErrorCode::kMissingLabels, "item '" + item.id + "' has no factuality label");
  }
  return Observation{item.id,           expression_id,  *item.factuality_label, consistency, source,
                     perturbed_accurate, logprob_ratio, entropy};
}

namespace {

struct Accumulator {
  std::size_t n = 0;
  std::size_t accurate = 0, accuracy_n = 0;
  std::size_t consistent = 0;
  double ratio_sum = 0.0;
  std::size_t ratio_n = 0;
  double entropy_sum = 0.0;
  std::size_t entropy_n = 0;

  void Add(const Observation& o) {
    ++n;
    if (o.perturbed_accurate) {
      ++accuracy_n;
      accurate += *o.perturbed_accurate ? 1 : 0;
    }
    consistent += o.consistency == Consistency::kConsistent ? 1 : 0;
    if (o.logprob_ratio) {
      ratio_sum += *o.logprob_ratio;
      ++ratio_n;
    }
    if (o.entropy) {
      entropy_sum += *o.entropy;
      ++entropy_n;
    }
  }

  BreakdownRow Row(const std::string& expression_id, const std::string& group,
                   bool with_accuracy_consistency) const {
    BreakdownRow row{expression_id, group, n, std::nullopt, std::nullopt, std::nullopt, std::nullopt};
    if (with_accuracy_consistency) {
      if (accuracy_n > 0) row.accuracy_pct = 100.0 * static_cast<double>(accurate) / accuracy_n;
      row.consistency_pct = 100.0 * static_cast<double>(consistent) / static_cast<double>(n);
    }
    if (ratio_n > 0) row.mean_logprob_ratio = ratio_sum / static_cast<double>(ratio_n);
    if (entropy_n > 0) row.mean_entropy = entropy_sum / static_cast<double>(entropy_n);
    return row;
  }
};

}  // namespace

std::vector<BreakdownRow> GroupBreakdown(std::span<const Observation> observations) {
  std::vector<std::string> order;
  for (const auto& o : observations) {
    if (std::find(order.begin(), order.end(), o.expression_id) == order.end()) {
      order.push_back(o.expression_id);
    }
  }
  std::vector<BreakdownRow> rows;
  for (const auto& exp : order) {
    Accumulator f, nf, con, noncon, all;
    for (const auto& o : observations) {
      if (o.expression_id != exp) continue;
      (o.factuality == Factuality::kFactual ? f : nf).Add(o);
      (o.consistency == Consistency::kConsistent ? con : noncon).Add(o);
      all.Add(o);
    }
    const std::pair<const char*, const Accumulator*> groups[] = {
        {"F", &f}, {"NF", &nf}, {"Con", &con}, {"NonCon", &noncon}, {"All", &all}};
    for (const auto& [name, acc] : groups) {
      if (acc->n == 0) {
        spdlog::warn("breakdown: expression '{}' has no items in group {}; row omitted", exp, name);
        continue;
      }
      const std::string group = name;
      const bool full = group == "F" || group == "NF" || group == "All";
      rows.push_back(acc->Row(exp, group, full));
    }
  }
  return rows;
}

TriageResult TriageFromVerdict(const NliVerdict& verdict) {
  TriageResult r;
  r.verdict = verdict;
  switch (verdict.Argmax()) {
    case NliVerdict::Label::kNeutral:
      r.decision = TriageDecision::kNeedsHuman;
      break;
    case NliVerdict::Label::kEntailment:
      r.decision = TriageDecision::kAutoKeep;
      r.suggestion = Factuality::kFactual;
      break;
    case NliVerdict::Label::kContradiction:
      r.decision = TriageDecision::kAutoKeep;
      r.suggestion = Factuality::kNonFactual;
      break;
  }
  return r;
}

TriageResult TriageForAnnotation(std::string_view question, std::string_view reference,
                                 std::string_view gold, NliGateway& nli, std::string_view joiner) {
  return TriageFromVerdict(nli.Score(BuildNliInput(question, Trim(reference), Trim(gold), joiner)));
}

Consistency ConsistencyFromVerdict(const NliVerdict& verdict) {
  return verdict.logit_entailment > verdict.logit_contradiction ? Consistency::kConsistent
                                                                : Consistency::kNonConsistent;
}

Consistency ConsistencyProxy(std::string_view question, std::string_view reference,
                             std::string_view perturbed, NliGateway& nli, std::string_view joiner) {
  return ConsistencyFromVerdict(
      nli.Score(BuildNliInput(question, Trim(reference), Trim(perturbed), joiner)));
}

std::pair<Consistency, ConsistencySource> ResolveConsistency(
    const QaItem& item, const std::string& expression_id, std::string_view reference,
    std::string_view perturbed, NliGateway& nli, std::string_view joiner) {
  if (item.consistency_label) {
    auto it = item.consistency_label->find(expression_id);
    if (it != item.consistency_label->end()) return {it->second, ConsistencySource::kLabel};
  }
  return {ConsistencyProxy(item.question, reference, perturbed, nli, joiner),
          ConsistencySource::kNliProxy};
}

EvalReport EvaluateMetric(std::string metric_name, std::span<const LabeledScore> scores) {
  EvalReport report;
  report.metric_name = std::move(metric_name);
  report.auroc = Auroc(scores);
  auto pr = Auprc(scores);
  report.auprc = pr.auprc;
  report.pr_points = std::move(pr.points);
  for (const auto& s : scores) (s.positive ? report.n_pos : report.n_neg) += 1;
  return report;
}

namespace {
json OptionalJson(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
std::optional<double> OptionalFrom(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}
}  // namespace

void to_json(json& j, const PrPoint& p) { j = json{{"recall", p.recall}, {"precision", p.precision}}; }

void to_json(json& j, const BreakdownRow& r) {
  j = json{{"expression_id", r.expression_id},
           {"group", r.group},
           {"n", r.n},
           {"accuracy_pct", OptionalJson(r.accuracy_pct)},
           {"consistency_pct", OptionalJson(r.consistency_pct)},
           {"mean_logprob_ratio", OptionalJson(r.mean_logprob_ratio)},
           {"mean_entropy", OptionalJson(r.mean_entropy)}};
}

void from_json(const json& j, BreakdownRow& r) {
  j.at("expression_id").get_to(r.expression_id);
  j.at("group").get_to(r.group);
  j.at("n").get_to(r.n);
  r.accuracy_pct = OptionalFrom(j, "accuracy_pct");
  r.consistency_pct = OptionalFrom(j, "consistency_pct");
  r.mean_logprob_ratio = OptionalFrom(j, "mean_logprob_ratio");
  r.mean_entropy = OptionalFrom(j, "mean_entropy");
}

void to_json(json& j, const EvalReport& r) {
  json points = json::array();
  for (const auto& p : r.pr_points) points.push_back(json::array({p.recall, p.precision}));
  j = json{{"metric_name", r.metric_name}, {"auroc", r.auroc}, {"auprc", r.auprc},
           {"pr_points", points},          {"n_pos", r.n_pos}, {"n_neg", r.n_neg}};
  j["breakdowns"] = r.breakdowns.empty() ? json(nullptr) : json(r.breakdowns);
}

void from_json(const json& j, EvalReport& r) {
  j.at("metric_name").get_to(r.metric_name);
  j.at("auroc").get_to(r.auroc);
  j.at("auprc").get_to(r.auprc);
  j.at("n_pos").get_to(r.n_pos);
  j.at("n_neg").get_to(r.n_neg);
  r.pr_points.clear();
  for (const auto& p : j.at("pr_points")) r.pr_points.push_back({p[0].get<double>(), p[1].get<double>()});
  r.breakdowns.clear();
  if (j.contains("breakdowns") && !j.at("breakdowns").is_null()) {
    r.breakdowns = j.at("breakdowns").get<std::vector<BreakdownRow>>();
  }
}

std::string PrCurveCsv(std::span<const PrPoint> points) {
  std::string out = "recall,precision\n";
  for (const auto& p : points) out += fmt::format("{},{}\n", p.recall, p.precision);
  return out;
}

std::string PrCurveSvg(std::span<const EvalReport> reports) {
  static constexpr const char* kColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                            "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  constexpr double kSize = 400.0, kMargin = 40.0, kPlot = kSize - 2 * kMargin;
  std::string svg = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\">\n"
      "<rect x=\"{2}\" y=\"{2}\" width=\"{3}\" height=\"{3}\" fill=\"none\" stroke=\"black\"/>\n"
      "<text x=\"{4}\" y=\"{5}\" font-size=\"12\" text-anchor=\"middle\">recall</text>\n"
      "<text x=\"12\" y=\"{4}\" font-size=\"12\" transform=\"rotate(-90 12 {4})\" "
      "text-anchor=\"middle\">precision</text>\n",
      kSize + 160, kSize, kMargin, kPlot, kSize / 2, kSize - 8);
  for (std::size_t k = 0; k < reports.size(); ++k) {
    const char* color = kColors[k % std::size(kColors)];
    std::string pts;
    for (const auto& p : reports[k].pr_points) {
      pts += fmt::format("{:.4f},{:.4f} ", kMargin + p.recall * kPlot,
                         kMargin + (1.0 - p.precision) * kPlot);
    }
    svg += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                       color, pts);
    svg += fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"{}\">{} ({:.3f})</text>\n",
                       kSize, kMargin + 14.0 * static_cast<double>(k + 1), color,
                       reports[k].metric_name, reports[k].auprc);
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace halludetect

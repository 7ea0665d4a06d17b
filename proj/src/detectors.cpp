#include "halludetect/detectors.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "halludetect/confidence_metrics.hpp"
#include "halludetect/error.hpp"
#include "halludetect/kernels.hpp"
#include "halludetect/text_util.hpp"

namespace halludetect {

double FScoreFromVerdict(const NliVerdict& verdict) {
  return verdict.logit_contradiction - verdict.logit_entailment;
}

double FScore(std::string_view question, std::string_view reference, std::string_view perturbed,
              NliGateway& nli, std::string_view joiner) {
  return FScoreFromVerdict(
      nli.Score(BuildNliInput(question, Trim(reference), Trim(perturbed), joiner)));
}

double FEnsemble(std::span<const double> scores) {
  if (scores.size() < 2) {
    throw Error(ErrorCode::kTooFewScores, "ensemble needs at least two expression scores");
  }
  return *std::min_element(scores.begin(), scores.end());
}

double BaselineLogp(const Generation& reference) {
  return LengthNormalizedLogprob(reference).value();
}

double BaselineEntropy(std::span<const Generation> samples) { return ResponseEntropy(samples); }

std::vector<SemanticCluster> ClusterSemantic(std::string_view question,
                                             std::span<const Generation> samples, NliGateway& nli,
                                             std::string_view joiner) {
  if (samples.empty()) throw Error(ErrorCode::kNoSamples, "semantic clustering of no samples");

  // Masses first so a missing logprob fails before any NLI traffic.
  std::vector<double> weights;
  weights.reserve(samples.size());
  for (const auto& s : samples) weights.push_back(std::exp(LengthNormalizedLogprob(s).value()));

  auto entails = [&](const std::string_view a, const std::string_view b) {
    const NliInput pair[2] = {BuildNliInput(question, a, b, joiner),
                              BuildNliInput(question, b, a, joiner)};
    const auto verdicts = nli.ScoreBatch(pair);
    return verdicts[0].Argmax() == NliVerdict::Label::kEntailment &&
           verdicts[1].Argmax() == NliVerdict::Label::kEntailment;
  };

  std::vector<SemanticCluster> clusters;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::string_view text = Trim(samples[i].text);
    bool placed = false;
    for (auto& cluster : clusters) {
      const std::string_view founder = Trim(samples[cluster.member_indices.front()].text);
      if (entails(founder, text)) {
        cluster.member_indices.push_back(i);
        placed = true;
        break;
      }
    }
    if (!placed) clusters.push_back(SemanticCluster{{i}, 0.0});
  }

  double total = 0.0;
  for (double w : weights) total += w;
  for (auto& cluster : clusters) {
    double mass = 0.0;
    for (std::size_t idx : cluster.member_indices) mass += weights[idx];
    cluster.mass = mass / total;
  }
  return clusters;
}

double SemanticEntropy(std::span<const SemanticCluster> clusters) {
  if (clusters.empty()) throw Error(ErrorCode::kInvalidPartition, "no clusters");
  std::set<std::size_t> seen;
  std::size_t members = 0;
  double total = 0.0;
  std::vector<double> masses;
  masses.reserve(clusters.size());
  for (const auto& c : clusters) {
    if (c.member_indices.empty()) throw Error(ErrorCode::kInvalidPartition, "empty cluster");
    if (!(c.mass > 0.0) || c.mass > 1.0 + 1e-12) {
      throw Error(ErrorCode::kInvalidPartition, "cluster mass outside (0, 1]");
    }
    for (std::size_t idx : c.member_indices) {
      if (!seen.insert(idx).second) {
        throw Error(ErrorCode::kInvalidPartition, "sample " + std::to_string(idx) + " in two clusters");
      }
    }
    members += c.member_indices.size();
    total += c.mass;
    masses.push_back(c.mass);
  }
  if (*seen.rbegin() != members - 1) {
    throw Error(ErrorCode::kInvalidPartition, "cluster members do not cover 0..k-1");
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw Error(ErrorCode::kInvalidPartition, "cluster masses sum to " + std::to_string(total));
  }
  return EntropyOf(masses);
}

double RougeL(std::string_view a, std::string_view b) { return kernels::RougeL(a, b); }

double LexicalSimilarity(std::span<const std::string> samples) {
  const std::vector<std::string> set(samples.begin(), samples.end());
  return kernels::LexicalSimilarityBatchSerial(std::span(&set, 1)).front();
}

double LexicalSimilarity(std::span<const Generation> samples) {
  std::vector<std::string> texts;
  texts.reserve(samples.size());
  for (const auto& g : samples) texts.emplace_back(Trim(g.text));
  return LexicalSimilarity(std::span<const std::string>(texts));
}

double SelfCheckFromVerdicts(std::span<const NliVerdict> verdicts) {
  if (verdicts.empty()) throw Error(ErrorCode::kNoSamples, "SelfCheck needs at least one sample");
  double sum = 0.0;
  for (const auto& v : verdicts) sum += v.Softmax()[2];
  return sum / static_cast<double>(verdicts.size());
}

double SelfCheckNli(std::string_view question, std::string_view reference,
                    std::span<const Generation> samples, NliGateway& nli,
                    std::string_view joiner) {
  if (samples.empty()) throw Error(ErrorCode::kNoSamples, "SelfCheck needs at least one sample");
  std::vector<NliInput> inputs;
  inputs.reserve(samples.size());
  for (const auto& s : samples) {
    inputs.push_back(BuildNliInput(question, Trim(reference), Trim(s.text), joiner));
  }
  return SelfCheckFromVerdicts(nli.ScoreBatch(inputs));
}

const std::vector<std::string>& AbstentionClassifier::DefaultPatterns() {
  static const std::vector<std::string> kPatterns = {
      "i can not answer",      "i cannot answer",          "cannot be determined",
      "need more information", "please provide more",      "impossible to answer",
      "without more information", "not enough information",
  };
  return kPatterns;
}

AbstentionClassifier::AbstentionClassifier() : AbstentionClassifier(DefaultPatterns()) {}

AbstentionClassifier::AbstentionClassifier(std::vector<std::string> patterns) {
  for (auto& p : patterns) {
    std::string normalized = NormalizeAnswer(p);
    if (!normalized.empty()) patterns_.push_back(std::move(normalized));
  }
}

AbstentionClassifier AbstentionClassifier::FromFile(const std::filesystem::path& path) {
  std::istringstream in(ReadFile(path));
  std::vector<std::string> patterns;
  std::string line;
  while (std::getline(in, line)) {
    const std::string_view t = Trim(line);
    if (t.empty() || t.front() == '#') continue;
    patterns.emplace_back(t);
  }
  return AbstentionClassifier(std::move(patterns));
}

bool AbstentionClassifier::operator()(std::string_view text) const {
  const std::string normalized = NormalizeAnswer(text);
  if (normalized.empty()) return false;
  return std::any_of(patterns_.begin(), patterns_.end(), [&](const std::string& p) {
    return normalized.find(p) != std::string::npos;
  });
}

bool ClassifyAbstention(std::string_view text) {
  static const AbstentionClassifier kDefault;
  return kDefault(text);
}

ThresholdNormalization ParseThresholdNormalization(std::string_view s) {
  if (s == "minmax") return ThresholdNormalization::kMinMax;
  if (s == "sigmoid") return ThresholdNormalization::kSigmoid;
  throw Error(ErrorCode::kInvalidConfig, "threshold normalization must be minmax or sigmoid");
}

std::vector<double> NormalizeForThreshold(std::span<const double> values,
                                          ThresholdNormalization mode) {
  std::vector<double> out(values.begin(), values.end());
  if (out.empty()) return out;
  if (mode == ThresholdNormalization::kSigmoid) {
    for (double& v : out) v = 1.0 / (1.0 + std::exp(-v));
    return out;
  }
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double range = *hi - *lo;
  for (double& v : out) v = range > 0.0 ? (v - *lo) / range : 0.5;
  return out;
}

}  // namespace halludetect

#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "halludetect/core_model.hpp"
#include "halludetect/nli_gateway.hpp"

namespace halludetect {

// logit_contradiction - logit_entailment. Higher means more likely hallucinated.
double FScoreFromVerdict(const NliVerdict& verdict);

double FScore(std::string_view question, std::string_view reference, std::string_view perturbed,
              NliGateway& nli, std::string_view joiner = " ");

// Minimum over the per-expression scores; needs at least two.
double FEnsemble(std::span<const double> scores);

// Length-normalized logprob of the greedy reference. Lower means hallucinated.
double BaselineLogp(const Generation& reference);

// Normalized-answer entropy of the samples. Higher means hallucinated.
double BaselineEntropy(std::span<const Generation> samples);

struct SemanticCluster {
  std::vector<std::size_t> member_indices;
  double mass = 0.0;

  bool operator==(const SemanticCluster&) const = default;
};

// Greedy clustering in sample order. A sample joins the first cluster whose
// founding member it entails and is entailed by (argmax in both directions);
// otherwise it founds a new cluster. Cluster mass is the sum of the members'
// exp(mean token logprob), renormalized over all samples.
std::vector<SemanticCluster> ClusterSemantic(std::string_view question,
                                             std::span<const Generation> samples, NliGateway& nli,
                                             std::string_view joiner = " ");

// -sum p ln p over cluster masses. Throws kInvalidPartition unless the clusters
// partition 0..k-1 and the masses are in (0, 1] summing to 1 within 1e-9.
double SemanticEntropy(std::span<const SemanticCluster> clusters);

double RougeL(std::string_view a, std::string_view b);

// Mean ROUGE-L over ordered pairs i != j. Lower means hallucinated.
double LexicalSimilarity(std::span<const Generation> samples);
double LexicalSimilarity(std::span<const std::string> samples);

// Mean softmax contradiction probability of (reference, sample) pairs.
double SelfCheckFromVerdicts(std::span<const NliVerdict> verdicts);
double SelfCheckNli(std::string_view question, std::string_view reference,
                    std::span<const Generation> samples, NliGateway& nli,
                    std::string_view joiner = " ");

// Matches "I can not answer"-type replies against a list of normalized
// substrings.
class AbstentionClassifier {
 public:
  AbstentionClassifier();  // builtin patterns
  explicit AbstentionClassifier(std::vector<std::string> patterns);
  // One pattern per line; blank lines and lines starting with '#' are skipped.
  static AbstentionClassifier FromFile(const std::filesystem::path& path);

  bool operator()(std::string_view text) const;
  const std::vector<std::string>& patterns() const { return patterns_; }

  static const std::vector<std::string>& DefaultPatterns();

 private:
  std::vector<std::string> patterns_;
};

bool ClassifyAbstention(std::string_view text);

enum class ThresholdNormalization { kMinMax, kSigmoid };

ThresholdNormalization ParseThresholdNormalization(std::string_view s);

// Maps raw scores into [0, 1] for a fixed decision threshold. Min-max uses the
// range of the given split (a constant split maps to 0.5); sigmoid is pointwise.
std::vector<double> NormalizeForThreshold(std::span<const double> values,
                                          ThresholdNormalization mode);

}  // namespace halludetect

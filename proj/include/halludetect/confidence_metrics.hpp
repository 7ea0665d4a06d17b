#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "halludetect/core_model.hpp"

namespace halludetect {

// Length-normalized natural-log probability; always finite and <= 0.
class LogProb {
 public:
  explicit LogProb(double value);
  double value() const { return value_; }

 private:
  double value_;
};

// Mean per-token logprob of the completion tokens.
LogProb LengthNormalizedLogprob(const Generation& gen);
LogProb LengthNormalizedLogprob(std::span<const double> token_logprobs);

// log(p2 / p1) = log p2 - log p1.
double LogprobRatio(LogProb p1, LogProb p2);

// Lowercases, strips ASCII punctuation, collapses whitespace, then repeatedly
// drops a leading expression prefix or article. Idempotent.
std::string NormalizeAnswer(std::string_view text);

// Entropy (nats) of the empirical distribution of normalized answers.
double ResponseEntropy(std::span<const Generation> samples);
double ResponseEntropy(std::span<const std::string> answers);

// Shannon entropy in nats of a probability vector; zero entries contribute 0.
double EntropyOf(std::span<const double> probabilities);

struct HistogramOptions {
  std::size_t bins = 30;
  double sigma = 1.0;  // Gaussian smoothing std, in bins
  double floor = 1e-10;
};

// Probability histogram of `values` over [lo, hi], smoothed and floored.
std::vector<double> SmoothedHistogram(std::span<const double> values, double lo, double hi,
                                      const HistogramOptions& options);

// KL(P_a || P_b) between smoothed histograms sharing the range of a ∪ b.
double HistogramKl(std::span<const double> a, std::span<const double> b,
                   const HistogramOptions& options = {});

}  // namespace halludetect

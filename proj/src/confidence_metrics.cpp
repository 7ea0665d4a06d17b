#include "halludetect/confidence_metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <numeric>

#include "halludetect/error.hpp"

namespace halludetect {

LogProb::LogProb(double value) : value_(value) {
  if (!std::isfinite(value) || value > 0.0) {
    throw Error(ErrorCode::kInvalidArgument,
                "log probability must be finite and <= 0, got " + std::to_string(value));
  }
}

LogProb LengthNormalizedLogprob(std::span<const double> token_logprobs) {
  if (token_logprobs.empty()) throw Error(ErrorCode::kNoTokens, "no token logprobs");
  double sum = 0.0;
  for (double lp : token_logprobs) {
    if (!std::isfinite(lp) || lp > 0.0) {
      throw Error(ErrorCode::kInvalidArgument, "token logprob out of range: " + std::to_string(lp));
    }
    sum += lp;
  }
  return LogProb(sum / static_cast<double>(token_logprobs.size()));
}

LogProb LengthNormalizedLogprob(const Generation& gen) {
  return LengthNormalizedLogprob(gen.RequireLogprobs());
}

double LogprobRatio(LogProb p1, LogProb p2) { return p2.value() - p1.value(); }

namespace {

// Normalized (lowercase, punctuation-free) forms of the builtin prefixes plus
// leading articles.
const std::vector<std::string>& StrippablePrefixes() {
  static const std::vector<std::string> kPrefixes = {
      "i would need to double check but maybe it is",
      "i am not sure but it could be",
      "undoubtedly it is",
      "it must be",
      "the",
      "an",
      "a",
  };
  return kPrefixes;
}

std::string Canonicalize(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::ispunct(c)) continue;
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

}  // namespace

std::string NormalizeAnswer(std::string_view text) {
  std::string s = Canonicalize(text);
  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& prefix : StrippablePrefixes()) {
      if (s.size() > prefix.size() + 1 && s.compare(0, prefix.size(), prefix) == 0 &&
          s[prefix.size()] == ' ') {
        s.erase(0, prefix.size() + 1);
        changed = true;
        break;
      }
    }
  }
  return s;
}

double EntropyOf(std::span<const double> probabilities) {
  double h = 0.0;
  for (double p : probabilities) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

double ResponseEntropy(std::span<const std::string> answers) {
  if (answers.empty()) throw Error(ErrorCode::kNoSamples, "entropy needs at least one sample");
  std::map<std::string, std::size_t> counts;
  for (const auto& a : answers) ++counts[NormalizeAnswer(a)];
  std::vector<double> q;
  q.reserve(counts.size());
  const double n = static_cast<double>(answers.size());
  for (const auto& [answer, count] : counts) q.push_back(static_cast<double>(count) / n);
  return EntropyOf(q);
}

double ResponseEntropy(std::span<const Generation> samples) {
  std::vector<std::string> answers;
  answers.reserve(samples.size());
  for (const auto& g : samples) answers.push_back(g.text);
  return ResponseEntropy(answers);
}

std::vector<double> SmoothedHistogram(std::span<const double> values, double lo, double hi,
                                      const HistogramOptions& options) {
  if (values.empty()) throw Error(ErrorCode::kEmptyInput, "histogram of no values");
  if (options.bins == 0 || !(options.sigma > 0.0) || !(options.floor > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "histogram needs bins > 0, sigma > 0, floor > 0");
  }
  const std::size_t bins = options.bins;
  std::vector<double> counts(bins, 0.0);
  const double width = hi - lo;
  for (double v : values) {
    std::size_t idx = 0;
    if (width > 0.0) {
      const double pos = (v - lo) / width * static_cast<double>(bins);
      idx = pos <= 0.0 ? 0 : std::min(bins - 1, static_cast<std::size_t>(pos));
    }
    counts[idx] += 1.0;
  }

  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * options.sigma)));
  std::vector<double> kernel(2 * radius + 1);
  for (int k = -radius; k <= radius; ++k) {
    kernel[k + radius] = std::exp(-0.5 * (k * k) / (options.sigma * options.sigma));
  }
  const double ksum = std::accumulate(kernel.begin(), kernel.end(), 0.0);
  for (double& w : kernel) w /= ksum;

  std::vector<double> smooth(bins, 0.0);
  for (std::size_t i = 0; i < bins; ++i) {
    for (int k = -radius; k <= radius; ++k) {
      const long j = static_cast<long>(i) + k;
      if (j < 0 || j >= static_cast<long>(bins)) continue;
      smooth[i] += counts[static_cast<std::size_t>(j)] * kernel[k + radius];
    }
  }
  double total = std::accumulate(smooth.begin(), smooth.end(), 0.0);
  for (double& p : smooth) p /= total;
  for (double& p : smooth) p = std::max(p, options.floor);
  total = std::accumulate(smooth.begin(), smooth.end(), 0.0);
  for (double& p : smooth) p /= total;
  return smooth;
}

double HistogramKl(std::span<const double> a, std::span<const double> b,
                   const HistogramOptions& options) {
  if (a.empty() || b.empty()) throw Error(ErrorCode::kEmptyInput, "histogram_kl needs nonempty inputs");
  auto finite = [](double v) { return std::isfinite(v); };
  if (!std::all_of(a.begin(), a.end(), finite) || !std::all_of(b.begin(), b.end(), finite)) {
    throw Error(ErrorCode::kInvalidArgument, "histogram_kl inputs must be finite");
  }
  const auto [amin, amax] = std::minmax_element(a.begin(), a.end());
  const auto [bmin, bmax] = std::minmax_element(b.begin(), b.end());
  const double lo = std::min(*amin, *bmin);
  const double hi = std::max(*amax, *bmax);
  const auto p = SmoothedHistogram(a, lo, hi, options);
  const auto q = SmoothedHistogram(b, lo, hi, options);
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) kl += p[i] * std::log(p[i] / q[i]);
  // Rounding can leave a tiny negative value for identical histograms.
  return std::max(0.0, kl);
}

}  // namespace halludetect

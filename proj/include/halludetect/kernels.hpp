#pragma once

// Data-parallel batch kernels. Every OpenMP kernel has a serial twin with the
// same signature; the serial versions are the reference the tests and
// benchmarks compare against.

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace halludetect::kernels {

// Longest common subsequence length over token sequences (two-row DP).
std::size_t LcsLength(std::span<const std::string_view> a, std::span<const std::string_view> b);

// ROUGE-L F-measure over whitespace tokens. P = LCS/|a|, R = LCS/|b|.
// Returns 0 when either side has no tokens.
double RougeL(std::string_view a, std::string_view b);

// Row-major m×m matrix of RougeL(texts[i], texts[j]).
std::vector<double> PairwiseRougeSerial(std::span<const std::string> texts);
std::vector<double> PairwiseRougeParallel(std::span<const std::string> texts);

// Mean off-diagonal ROUGE-L for each sample set. Every set needs >= 2 texts
// (checked before any work starts; throws kTooFewSamples).
std::vector<double> LexicalSimilarityBatchSerial(std::span<const std::vector<std::string>> sets);
std::vector<double> LexicalSimilarityBatchParallel(std::span<const std::vector<std::string>> sets);

// Normalized-answer entropy for each sample set (throws kNoSamples on an empty set).
std::vector<double> ResponseEntropyBatchSerial(std::span<const std::vector<std::string>> sets);
std::vector<double> ResponseEntropyBatchParallel(std::span<const std::vector<std::string>> sets);

// Mann-Whitney AUROC for several score columns sharing one label vector
// (true = positive). Each column must match the label count.
std::vector<double> AurocColumnsSerial(std::span<const std::vector<double>> columns,
                                       const std::vector<bool>& labels);
std::vector<double> AurocColumnsParallel(std::span<const std::vector<double>> columns,
                                         const std::vector<bool>& labels);

int MaxThreads();

}  // namespace halludetect::kernels
